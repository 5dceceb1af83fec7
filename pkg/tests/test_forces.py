import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contact_est import forces as F
from contact_est.errors import ConvergenceError, InvalidArgumentError
from oracles import brute_force_minimum, cvxpy_minimum, quadratic_cost, random_stack


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_contact_frame_is_right_handed(a, b, c):
    n = np.array([a, b, c])
    if np.linalg.norm(n) < 1e-3:
        return
    R = F.contact_frame(n)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(R[:, 2], n / np.linalg.norm(n), atol=1e-12)


def test_contact_frame_derivative_finite_differences(rng):
    for _ in range(20):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        dn = rng.normal(size=(3, 2))
        dn -= np.outer(n, n @ dn)  # tangent to the sphere
        dR = F.contact_frame_derivative(n, dn)
        for j in range(2):
            h = 1e-6
            up = n + h * dn[:, j]
            dw = n - h * dn[:, j]
            fd = (F.contact_frame(up / np.linalg.norm(up)) - F.contact_frame(dw / np.linalg.norm(dw))) / (2 * h)
            np.testing.assert_allclose(dR[j], fd, atol=1e-7)


def test_cone_derivatives_finite_differences(rng):
    for _ in range(20):
        f = rng.normal(size=3)
        mu, eps = rng.uniform(0.2, 1.2), 1e-4
        E = np.eye(3) * 1e-6
        g = np.array([(F.cone_residual(f + e, mu, eps) - F.cone_residual(f - e, mu, eps)) / 2e-6 for e in E])
        np.testing.assert_allclose(F.cone_gradient(f, mu, eps), g, atol=1e-8)
        Hfd = np.column_stack([(F.cone_gradient(f + e, mu, eps) - F.cone_gradient(f - e, mu, eps)) / 2e-6 for e in E])
        np.testing.assert_allclose(F.cone_hessian(f, mu, eps), Hfd, atol=1e-6)
        assert np.all(np.linalg.eigvalsh(F.cone_hessian(f, mu, eps)) <= 1e-15)


def test_assemble_matches_explicit_cost(rng):
    s = random_stack(rng, m=3)
    f = rng.normal(size=9)
    r = s.gamma - s.P @ f
    gp = np.maximum(s.gaps, 0)
    explicit = 0.5 * r @ r + 0.5 * s.k0 * np.sum(np.repeat(gp**2, 3) * f * f)
    assert quadratic_cost(s, f) + 0.5 * s.gamma @ s.gamma == pytest.approx(explicit, rel=1e-12)


@settings(max_examples=100)
@given(st.integers(0, 2**31))
def test_kkt_conditions_hold(seed):
    s = random_stack(np.random.default_rng(seed))
    sol = F.solve(s)
    _, b = F.assemble(s)
    stat, comp, feas = F.kkt_residuals(sol, s)
    assert stat <= 1e-8 * (1 + np.linalg.norm(b))
    assert comp <= 1e-8
    assert feas <= 1e-10
    assert np.all(sol.multipliers >= 0)
    rev = F.solve(s, F.ForceSolverOptions(order="reverse"))
    np.testing.assert_allclose(rev.forces, sol.forces, atol=1e-8)


@pytest.mark.parametrize("m", [1, 2])
def test_matches_brute_force_minimum(m, rng):
    for _ in range(4):
        s = random_stack(rng, m=m)
        c = quadratic_cost(s, F.solve(s).forces)
        ref, _ = brute_force_minimum(s)
        assert c == pytest.approx(ref, abs=1e-6 * (1 + abs(ref)))


def test_matches_conic_solver(rng):
    for _ in range(10):
        s = random_stack(rng)
        c = quadratic_cost(s, F.solve(s).forces)
        ref, _ = cvxpy_minimum(s)
        assert c == pytest.approx(ref, abs=1e-6 * (1 + abs(ref)))


def test_separated_contact_penalized_toward_apex():
    # one contact, huge positive gap: the penalty drives the force to the cone apex
    s = F.ContactStack(P=np.eye(3), gaps=[1.0], mu=[0.5], gamma=[1.0, 2.0, 3.0], Sigma=np.eye(3), k0=1e8)
    sol = F.solve(s)
    np.testing.assert_allclose(sol.forces, [0, 0, np.sqrt(s.eps) / 0.5], atol=1e-6)


def test_interior_solution_is_least_squares():
    # gamma inside the cone with zero gap: forces reproduce the measurement exactly
    s = F.ContactStack(P=np.eye(3), gaps=[-0.1], mu=[1.0], gamma=[0.1, 0.2, 3.0], Sigma=np.eye(3))
    sol = F.solve(s)
    np.testing.assert_allclose(sol.forces, s.gamma, atol=1e-10)
    assert sol.multipliers[0] == 0.0


def test_sensitivity_matches_finite_differences(rng):
    from contact_est.audit import random_parametric_stack

    checked = 0
    opts = F.ForceSolverOptions(tolerance=1e-13, max_sweeps=2000)
    while checked < 10:
        ps = random_parametric_stack(rng)
        xi = np.zeros(2)
        sol = F.solve(ps.at(xi), opts)
        lam, c = sol.multipliers, sol.cone_residuals
        binding = c < 1e-7
        if np.any(lam[binding] < 1e-6) or np.any(~binding & (c < 1e-4)):
            continue  # not strictly complementary
        sens = F.differentiate(sol, ps.at(xi), ps.derivatives())
        h = 1e-6
        fd = np.column_stack([
            (F.solve(ps.at(xi + h * e), opts).forces - F.solve(ps.at(xi - h * e), opts).forces) / (2 * h)
            for e in np.eye(2)])
        err = np.linalg.norm(sens.dforces - fd) / max(np.linalg.norm(fd), 1e-8)
        assert err <= 1e-4
        checked += 1


def test_invalid_stacks_rejected():
    good = dict(P=np.eye(3), gaps=[0.0], mu=[0.5], gamma=[0, 0, 1], Sigma=np.eye(3))
    for bad in ({"mu": [0.0]}, {"mu": [-1.0]}, {"Sigma": -np.eye(3)}, {"Sigma": [[1, 1, 0], [0, 1, 0], [0, 0, 1]]},
                {"P": np.eye(3)[:2]}, {"gamma": [0, np.nan, 1]}, {"gaps": []}, {"k0": 0.0}, {"eps": 0.0}):
        with pytest.raises(InvalidArgumentError):
            F.ContactStack(**{**good, **bad})
    with pytest.raises(InvalidArgumentError):
        F.cone_residual([0, 0, 1], 0.5, 0.0)
    with pytest.raises(InvalidArgumentError):
        F.ForceSolverOptions(order="sideways")


def test_sweep_budget_raises_with_best(rng):
    s = random_stack(rng, m=6)
    with pytest.raises(ConvergenceError) as ei:
        F.solve(s, F.ForceSolverOptions(max_sweeps=1, polish=False, tolerance=1e-15))
    assert ei.value.best is not None


def test_stack_roundtrip(rng):
    s = random_stack(rng, m=2)
    t = F.ContactStack.from_dict(s.to_dict())
    np.testing.assert_array_equal(F.solve(s).forces, F.solve(t).forces)
