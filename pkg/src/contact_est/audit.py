"""Finite-difference audits of every analytic derivative.

Each audit draws random cases from a seeded generator, compares the
analytic derivative with central differences and reports the fraction
of cases inside the tolerance. Cases where the reference itself is not
differentiable (an active-set change inside the stencil, a failed
solve) are counted as skipped rather than passed or failed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import geometry as geo
from .contact import ContactQuery, FeatureSolverOptions, differentiate_features, solve_features
from .errors import ContactEstError, ConvergenceError
from .forces import ContactStack, ForceSolverOptions, StackDerivatives, differentiate, solve
from .pose import Pose
from .shapes import random_shape

FD_FEATURE_OPTIONS = FeatureSolverOptions(tolerance=1e-14, max_iterations=60)


@dataclass(frozen=True)
class AuditRow:
    name: str
    cases: int
    checked: int
    passed_cases: int
    max_error: float
    tolerance: float
    required_fraction: float

    @property
    def fraction(self) -> float:
        return self.passed_cases / self.checked if self.checked else 0.0

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.fraction >= self.required_fraction

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(fraction=self.fraction, passed=self.passed)
        return d


def rel_error(analytic, reference, floor: float = 1e-12) -> float:
    """``|A - R| / max(|R|, floor)`` in the Frobenius norm."""
    a = np.asarray(analytic, dtype=float)
    r = np.asarray(reference, dtype=float)
    return float(np.linalg.norm(a - r) / max(np.linalg.norm(r), floor))


def _row(name, errors, tol, frac, cases):
    errs = np.asarray([e for e in errors if e is not None], dtype=float)
    return AuditRow(name, cases, int(errs.size), int(np.sum(errs <= tol)),
                    float(errs.max()) if errs.size else float("nan"), tol, frac)


# ------------------------------------------------------------ support map

def support_gradient_errors(rng, n: int, step: float = 1e-6):
    """``s = dh/dx`` against central differences of ``h``."""
    out = []
    for _ in range(n):
        shape = random_shape(rng)
        x = rng.normal(size=3)
        s = geo.support_point(shape, x)
        fd = np.array([(geo.support_value(shape, x + step * e) - geo.support_value(shape, x - step * e))
                       / (2 * step) for e in np.eye(3)])
        out.append(rel_error(s, fd))
    return out


def support_jacobian_errors(rng, n: int, step: float = 1e-6):
    """``ds/dx`` against central differences of ``s``.

    Near vertices of a sharp body ``ds/dx`` is tiny and the differences
    sit at roundoff level, so the error is scaled by at least
    ``1e-4 |s| / |x|``.
    """
    out = []
    for _ in range(n):
        shape = random_shape(rng)
        x = rng.normal(size=3)
        D = geo.support_jacobian(shape, x)
        fd = np.column_stack([(geo.support_point(shape, x + step * e) - geo.support_point(shape, x - step * e))
                              / (2 * step) for e in np.eye(3)])
        s = geo.support_point(shape, x)
        out.append(rel_error(D, fd, 1e-4 * np.linalg.norm(s) / np.linalg.norm(x)))
    return out


# ---------------------------------------------------------- contact features

def random_feature_query(rng, distance_range=(0.6, 1.6)) -> ContactQuery:
    A, B = random_shape(rng), random_shape(rng)
    pi = Pose.from_rotation(rng.normal(scale=0.1, size=3), Rotation.random(random_state=rng))
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    dist = rng.uniform(*distance_range) * (A.bounding_radius() + B.bounding_radius()) * 0.6
    pj = Pose.from_rotation(pi.position + dist * d, Rotation.random(random_state=rng))
    return ContactQuery(A, B, pi, pj)


def _feature_vector(f):
    return np.concatenate([f.normal, [f.growth], f.witness_i, f.witness_j])


def feature_derivative_error(query: ContactQuery, step: float = 1e-6):
    """Relative error of the stacked feature derivatives, or None if unusable."""
    try:
        f0 = solve_features(query, FD_FEATURE_OPTIONS)
    except ConvergenceError as exc:
        f0 = exc.best
        if f0.residual_norm > 1e-12:
            return None
    except ContactEstError:
        return None
    try:
        d = differentiate_features(f0, query)
    except ContactEstError:
        return None
    A = np.vstack([d.dnormal, d.dgrowth[None, :], d.dwitness_i, d.dwitness_j])
    start = (f0.normal, f0.growth)
    fd = np.empty_like(A)
    for k in range(12):
        e = np.zeros(12)
        e[k] = step
        vals = []
        for sgn in (1.0, -1.0):
            pi = query.pose_i.perturb(sgn * e[:6])
            pj = query.pose_j.perturb(sgn * e[6:])
            try:
                f = solve_features(query.with_poses(pi, pj), FD_FEATURE_OPTIONS, start)
            except ConvergenceError as exc:
                f = exc.best
            vals.append(_feature_vector(f))
        fd[:, k] = (vals[0] - vals[1]) / (2 * step)
    # per block, so the small growth row is not drowned by the witness rows
    blocks = (slice(0, 3), slice(3, 4), slice(4, 7), slice(7, 10))
    return max(rel_error(A[b], fd[b], 1e-8) for b in blocks)


def feature_derivative_errors(rng, n: int, step: float = 1e-6):
    return [feature_derivative_error(random_feature_query(rng), step) for _ in range(n)]


# -------------------------------------------------------- force sensitivity

@dataclass
class ParametricStack:
    """Stack whose ``P`` and gaps are affine in a parameter vector."""

    P0: np.ndarray
    dP: np.ndarray
    g0: np.ndarray
    dg: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    k0: float = 1e2

    def at(self, xi) -> ContactStack:
        P = self.P0 + np.tensordot(xi, self.dP, axes=1)
        return ContactStack(P=P, gaps=self.g0 + self.dg @ xi, mu=self.mu, gamma=self.gamma,
                            Sigma=np.eye(self.gamma.shape[0]), k0=self.k0)

    def derivatives(self) -> StackDerivatives:
        return StackDerivatives(dP=self.dP, dgaps=self.dg)


def random_parametric_stack(rng, m: int | None = None, n_xi: int = 2) -> ParametricStack:
    m = int(rng.integers(1, 7)) if m is None else m
    ng = 3 * m + 3
    return ParametricStack(
        P0=rng.normal(size=(ng, 3 * m)), dP=rng.normal(size=(n_xi, ng, 3 * m)),
        g0=rng.uniform(-0.2, 0.2, m), dg=rng.normal(size=(m, n_xi)),
        mu=rng.uniform(0.2, 1.2, m), gamma=5.0 * rng.normal(size=ng),
    )


FD_FORCE_OPTIONS = ForceSolverOptions(tolerance=1e-13, max_sweeps=2000)


def _binding(sol, stack, band=1e-7):
    F = sol.forces.reshape(-1, 3)
    return tuple(sol.cone_residuals < band * (1 + stack.mu * np.linalg.norm(F, axis=1)))


def force_sensitivity_error(ps: ParametricStack, step: float = 1e-6, strict: float = 1e-6):
    """Relative error of ``df*/dxi`` or None when not strictly complementary."""
    xi0 = np.zeros(ps.dP.shape[0])
    st = ps.at(xi0)
    try:
        sol = solve(st, FD_FORCE_OPTIONS)
        sens = differentiate(sol, st, ps.derivatives())
    except ContactEstError:
        return None
    act = np.array(_binding(sol, st))
    # strict complementarity: binding contacts carry a clearly positive multiplier
    if np.any(sol.multipliers[act] <= strict) or np.any(~act & (sol.cone_residuals <= 1e3 * 1e-7)):
        return None
    fd = np.empty_like(sens.dforces)
    for i in range(xi0.shape[0]):
        vals = []
        for sgn in (1.0, -1.0):
            e = np.zeros_like(xi0)
            e[i] = sgn * step
            sp = ps.at(e)
            try:
                s = solve(sp, FD_FORCE_OPTIONS, sol.forces)
            except ContactEstError:
                return None
            if _binding(s, sp) != tuple(act):
                return None
            vals.append(s.forces)
        fd[:, i] = (vals[0] - vals[1]) / (2 * step)
    return rel_error(sens.dforces, fd, 1e-8)


def force_sensitivity_errors(rng, n: int, step: float = 1e-6):
    return [force_sensitivity_error(random_parametric_stack(rng), step) for _ in range(n)]


# -------------------------------------------------------------- scenarios

def point_jacobian_errors(rng, n: int, step: float = 1e-6):
    from .scenarios.chain import forward_kinematics, point_jacobian, three_link_chain

    chain = three_link_chain()
    out = []
    for _ in range(n):
        q = rng.uniform(-np.pi, np.pi, chain.n_joints)
        link = int(rng.integers(1, chain.n_joints + 1))
        local = rng.normal(scale=0.1, size=3)
        J = point_jacobian(chain, q, link, forward_kinematics(chain, q)[link].transform_point(local))
        fd = np.empty_like(J)
        for j in range(chain.n_joints):
            e = np.zeros(chain.n_joints)
            e[j] = step
            pp = forward_kinematics(chain, q + e)[link].transform_point(local)
            pm = forward_kinematics(chain, q - e)[link].transform_point(local)
            fd[j] = (pp - pm) / (2 * step)
        out.append(rel_error(J, fd))
    return out


def localization_errors(rng, n: int, step: float = 1e-6):
    """Contact point and stack-matrix derivatives of the localization model."""
    from .scenarios.chain import JointTorqueModel, LocalizationParametrization, three_link_chain

    chain = three_link_chain()
    out = []
    for _ in range(n):
        q = rng.uniform(-np.pi, np.pi, chain.n_joints)
        param = LocalizationParametrization(chain, q, int(rng.choice([2, 4, 6])))
        model = JointTorqueModel(param)
        xi = rng.normal(size=3)
        t = model.stack_terms(xi)
        _, dc, _, _ = param.contact_point_derivative(xi)
        fdc = np.empty_like(dc)
        fdP = np.empty_like(t.dP)
        for i in range(3):
            e = np.zeros(3)
            e[i] = step
            fdc[:, i] = (param.contact_point(xi + e) - param.contact_point(xi - e)) / (2 * step)
            fdP[i] = (model.stack_terms(xi + e, False).P - model.stack_terms(xi - e, False).P) / (2 * step)
        out.append(max(rel_error(dc, fdc), rel_error(t.dP, fdP)))
    return out


def _peg_setup(name="rect"):
    from .scenarios.peg import (
        DEFAULT_GRASP, SCENES, GraspParametrization, WrenchEpisodeModel, WrenchSensor, default_scripts,
    )

    scene = SCENES[name]()
    param = GraspParametrization(DEFAULT_GRASP, Pose.identity())
    sensor = WrenchSensor(Pose([0.0, 0.0, 0.02], [1.0, 0.0, 0.0, 0.0]))
    models = [WrenchEpisodeModel(scene, param, sensor, s.start.perturb([0, 0, -0.01, 0, 0, 0]))
              for s in default_scripts(name)]
    return scene, param, sensor, models


def wrench_stack_errors(rng, n: int, step: float = 1e-7):
    """Peg-scene ``dP`` and ``dgaps`` against central differences."""
    _, param, _, models = _peg_setup()
    out = []
    for _ in range(n):
        model = models[int(rng.integers(len(models)))]
        xi = param.sample(rng, 1)[0]
        t = model.stack_terms(xi)
        fdP = np.empty_like(t.dP)
        fdg = np.empty_like(t.dgaps)
        for i in range(xi.shape[0]):
            e = np.zeros_like(xi)
            e[i] = step
            tp, tm = model.stack_terms(xi + e, False), model.stack_terms(xi - e, False)
            fdP[i] = (tp.P - tm.P) / (2 * step)
            fdg[:, i] = (tp.gaps - tm.gaps) / (2 * step)
        out.append(max(rel_error(t.dP, fdP, 1e-8), rel_error(t.dgaps, fdg, 1e-8)))
    return out


def tangent_errors(rng, n: int, step: float = 1e-6):
    from .estimator import tangent_check
    from .scenarios.peg import DEFAULT_GRASP, GraspParametrization, HoleOffsetParametrization

    params = [GraspParametrization(DEFAULT_GRASP, Pose.identity()),
              HoleOffsetParametrization(DEFAULT_GRASP, Pose.identity())]
    out = []
    for k in range(n):
        p = params[k % len(params)]
        ctx = {"gripper": Pose.from_rotation(rng.normal(scale=0.05, size=3), Rotation.random(random_state=rng))}
        out.append(tangent_check(p, p.sample(rng, 1)[0], ctx, step))
    return out


def residual_jacobian_errors(rng, n: int, step: float = 1e-7):
    """End-to-end estimator Jacobian on noiseless peg data; stencil crossings skipped."""
    from .estimator import gradient_check
    from .scenarios.peg import build_problem, default_scripts, generate_synthetic

    scene, param, sensor, _ = _peg_setup()
    xi_true = np.array([0.001, -0.002, 0.02])
    eps = generate_synthetic(scene, param, sensor, xi_true, default_scripts(), seed=5)
    prob = build_problem(scene, param, sensor, [e.gripper for e in eps], [e.gamma for e in eps])
    out = []
    for _ in range(n):
        xi = xi_true + rng.uniform(-1, 1, 3) * np.array([5e-4, 5e-4, 5e-3])
        try:
            err, skipped = gradient_check(prob, xi, step)
        except ContactEstError:
            err, skipped = None, True
        out.append(None if skipped else err)
    return out


# ------------------------------------------------------------------ suite

AUDITS = {
    # name: (function, default cases, tolerance, required fraction)
    "support_gradient": (support_gradient_errors, 200, 1e-6, 1.0),
    "support_jacobian": (support_jacobian_errors, 200, 1e-5, 1.0),
    "feature_derivatives": (feature_derivative_errors, 50, 1e-5, 0.99),
    "force_sensitivity": (force_sensitivity_errors, 100, 1e-4, 0.95),
    "point_jacobian": (point_jacobian_errors, 50, 1e-6, 1.0),
    "localization_model": (localization_errors, 30, 1e-5, 1.0),
    "wrench_stack": (wrench_stack_errors, 20, 1e-5, 1.0),
    "parametrization_tangents": (tangent_errors, 20, 1e-5, 1.0),
    "residual_jacobian": (residual_jacobian_errors, 10, 1e-4, 1.0),
}


def run_audit(name: str, seed: int = 0, cases: int | None = None) -> AuditRow:
    fn, n, tol, frac = AUDITS[name]
    n = n if cases is None else cases
    rng = np.random.default_rng(seed)
    return _row(name, fn(rng, n), tol, frac, n)


def run_suite(seed: int = 0, scale: float = 1.0, names=None) -> list[AuditRow]:
    """All audits (or ``names``) with case counts multiplied by ``scale``."""
    names = list(AUDITS) if names is None else list(names)
    return [run_audit(nm, seed, max(1, int(round(AUDITS[nm][1] * scale)))) for nm in names]
