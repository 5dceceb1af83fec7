import numpy as np
import pytest

from contact_est import estimator as E
from contact_est.errors import ContactEstError, ConvergenceError, InvalidArgumentError


class Box(E.PoseParametrization):
    """Plain vector parameter; the toy models below ignore poses."""

    def __init__(self, n, half=1.0):
        self.dimension = n
        self.lower = -half * np.ones(n)
        self.upper = half * np.ones(n)

    def poses(self, xi, context):
        return {}

    def tangents(self, xi, context):
        return {}


class AffineModel(E.MeasurementModel):
    """``P(xi) = P0 + sum_i phi(xi_i) dP_i``, ``gaps = g0 + dg xi``."""

    def __init__(self, rng, m=1, n_xi=2, square=False, touching=False):
        self.n_contacts = m
        self.n_measurements = 3 * m + 3
        self.P0 = rng.normal(size=(self.n_measurements, 3 * m))
        self.dP = 0.3 * rng.normal(size=(n_xi, self.n_measurements, 3 * m))
        # touching: gaps identically zero, so no penalty acts anywhere
        self.g0 = np.zeros(m) if touching else -0.05 * np.ones(m)
        self.dg = np.zeros((m, n_xi)) if touching else 0.01 * rng.normal(size=(m, n_xi))
        self.mu = np.full(m, 0.8)
        self.square = square

    def stack_terms(self, xi, derivatives=True):
        phi = xi**2 if self.square else xi
        dphi = 2 * xi if self.square else np.ones_like(xi)
        P = self.P0 + np.einsum("i,ijk->jk", phi, self.dP)
        gaps = self.g0 + self.dg @ xi
        if not derivatives:
            return E.StackTerms(P, gaps, self.mu)
        return E.StackTerms(P, gaps, self.mu, dP=dphi[:, None, None] * self.dP, dgaps=self.dg.copy())


class ConstantModel(E.MeasurementModel):
    n_contacts = 1
    n_measurements = 3

    def stack_terms(self, xi, derivatives=True):
        n = xi.shape[0]
        return E.StackTerms(np.eye(3), np.zeros(1), np.ones(1),
                            np.zeros((n, 3, 3)) if derivatives else None, np.zeros((1, n)) if derivatives else None)


class FailingModel(ConstantModel):
    def stack_terms(self, xi, derivatives=True):
        raise ContactEstError("no contact")


def interior_force(m):
    f = np.zeros(3 * m)
    f[2::3] = 2.0
    f[0::3] = 0.3
    return f


def toy_problem(rng, truth=None, episodes=2, **kw):
    models = [AffineModel(rng, **kw) for _ in range(episodes)]
    truth = np.array([0.3, -0.2]) if truth is None else truth
    gammas = [mdl.stack_terms(truth, False).P @ interior_force(mdl.n_contacts) for mdl in models]
    return E.EstimationProblem(Box(2), models, gammas, k0=1e2, k1=1e4), truth


def test_quadratic_prior_converges_in_one_step():
    prob = E.EstimationProblem(Box(3), [ConstantModel()], [np.array([0.0, 0.0, 1.0])],
                               augmentations=[E.Prior([0.1, -0.2, 0.3], np.diag([1.0, 2.0, 0.5]))])
    res = E.gauss_newton(prob, np.zeros(3))
    np.testing.assert_allclose(res.xi, [0.1, -0.2, 0.3], atol=1e-14)
    assert len(res.trace_step) == 1 or res.trace_step[1] <= 1e-14


def test_augmentation_jacobians_finite_differences(rng):
    P = E.Prior(rng.normal(size=3), np.diag([1.0, 0.5, 2.0]))
    B = E.Bounds(-np.ones(3), np.ones(3), 1e-2, 1e-3)
    for aug in (P, B):
        xi = np.array([1.5, -0.3, -1.7])
        fd = np.column_stack([(aug.residual(xi + 1e-7 * e) - aug.residual(xi - 1e-7 * e)) / 2e-7 for e in np.eye(3)])
        np.testing.assert_allclose(aug.jacobian(xi), fd, rtol=1e-6, atol=1e-6)
    np.testing.assert_array_equal(B.residual(np.zeros(3)), 0.0)
    with pytest.raises(InvalidArgumentError):
        E.Bounds([1.0], [0.0])
    with pytest.raises(InvalidArgumentError):
        E.Prior([0.0, 0.0], -np.eye(2))


def test_custom_augmentation_block(rng):
    prob, _ = toy_problem(rng)
    aug = E.Custom(lambda x: (np.array([x[0] - x[1]]), np.array([[1.0, -1.0]])), name="tie")
    ev = E.evaluate(E.EstimationProblem(prob.parametrization, prob.models, prob.gammas,
                                        augmentations=[aug]), np.array([0.2, 0.1]))
    assert ev.residual[ev.blocks["tie"]] == pytest.approx([0.1])


def test_cost_is_sum_of_blocks(rng):
    prob, _ = toy_problem(rng, episodes=3)
    prob = E.EstimationProblem(prob.parametrization, prob.models, prob.gammas, k1=1e4,
                               augmentations=[E.Prior([0, 0], 1.0), E.Bounds([-0.1, -0.1], [0.1, 0.1])])
    ev = E.evaluate(prob, np.array([0.5, -0.4]))
    assert sum(ev.block_costs().values()) == pytest.approx(ev.cost, rel=1e-12, abs=1e-12)
    assert set(ev.block_costs()) >= {"measurement[2]", "penetration[0]", "prior", "bounds"}


def test_jacobian_matches_finite_differences(rng):
    checked = 0
    for _ in range(10):
        prob, _ = toy_problem(rng)
        err, skipped = E.gradient_check(prob, rng.uniform(-0.5, 0.5, 2))
        if not skipped:
            assert err <= 1e-5
            checked += 1
    assert checked >= 5


def test_recovers_truth(rng):
    prob, truth = toy_problem(rng, touching=True)
    res = E.estimate(prob, n_starts=3, seed=4)
    assert res.cost <= 1e-12
    np.testing.assert_allclose(res.xi, truth, atol=1e-6)


def test_single_start_equals_local_solve(rng):
    prob, _ = toy_problem(rng)
    res = E.estimate(prob, n_starts=1, seed=7)
    start = prob.parametrization.sample(np.random.default_rng(7), 1)[0]
    local = E.gauss_newton(prob, start)
    np.testing.assert_array_equal(res.xi, local.xi)
    assert res.best_start == 0


def test_estimate_is_deterministic_across_thread_counts(rng, monkeypatch):
    prob, _ = toy_problem(rng)
    a = E.estimate(prob, n_starts=4, seed=11)
    monkeypatch.setenv("CONTACT_EST_THREADS", "3")
    assert E.thread_count() == 3
    b = E.estimate(prob, n_starts=4, seed=11)
    np.testing.assert_array_equal(a.xi, b.xi)
    assert [r.cost for r in a.runs] == [r.cost for r in b.runs]


def test_even_model_gives_symmetric_landscape(rng):
    m = AffineModel(rng, square=True, touching=True)
    g = m.stack_terms(np.array([0.4, 0.0]), False).P @ interior_force(1)
    prob = E.EstimationProblem(Box(2), [m], [g], k0=1e2)
    n = 9
    rows = E.landscape(prob, axes=(0,), ranges=((-0.6, 0.6),), resolution=n, base=np.zeros(2))
    c = np.array([r.cost for r in rows])
    np.testing.assert_allclose(c, c[::-1], rtol=1e-9, atol=1e-12)
    assert all(r.flag == "ok" for r in rows)


def test_penetration_cost_grows_with_k1(rng):
    prob, _ = toy_problem(rng)
    xi = np.array([0.1, 0.1])
    costs = []
    for k1 in (1e2, 1e4, 1e6):
        p = E.EstimationProblem(prob.parametrization, prob.models, prob.gammas, k1=k1)
        costs.append(E.evaluate(p, xi, False).block_costs()["penetration[0]"])
    assert costs[0] < costs[1] < costs[2]
    assert costs[1] == pytest.approx(100 * costs[0], rel=1e-12)


def test_all_starts_failing_raises():
    prob = E.EstimationProblem(Box(2), [FailingModel()], [np.zeros(3)])
    with pytest.raises(ConvergenceError):
        E.estimate(prob, n_starts=2)
    with pytest.raises(E.EpisodeError) as ei:
        E.evaluate(prob, np.zeros(2))
    assert ei.value.episode == 0


def test_problem_validation(rng):
    prob, _ = toy_problem(rng)
    with pytest.raises(InvalidArgumentError):
        E.EstimationProblem(prob.parametrization, prob.models, prob.gammas[:1])
    with pytest.raises(InvalidArgumentError):
        E.EstimationProblem(prob.parametrization, prob.models, [g[:-1] for g in prob.gammas])
    with pytest.raises(InvalidArgumentError):
        E.EstimationProblem(prob.parametrization, prob.models, prob.gammas, Sigma=-1.0)
    with pytest.raises(InvalidArgumentError):
        E.evaluate(prob, np.zeros(3))
    with pytest.raises(InvalidArgumentError):
        E.estimate(prob, n_starts=0)


def test_grid_local_minima():
    x = np.linspace(-1, 1, 11)
    X, Y = np.meshgrid(x, x, indexing="ij")
    C = np.minimum((X - 0.6) ** 2 + Y**2, (X + 0.6) ** 2 + Y**2 + 0.01)
    rows = [E.LandscapeRow((a, b), c, 0.0, 0.0, "ok") for a, b, c in zip(X.ravel(), Y.ravel(), C.ravel())]
    assert sorted(E.grid_local_minima(rows, 11)) == [(2, 5), (8, 5)]
