"""Bi-level pose estimation from contact-force measurements.

The outer problem is nonlinear least squares over the uncertain
parameter ``xi``; each residual evaluation solves the inner force problem
of every measurement episode and differentiates through it. The residual
of one episode is::

    [ L^-1 (gamma - P f*) ; sqrt(k1) * (-g_k)^+ ]        (Sigma = L L')

followed by optional augmentation blocks (prior, bounds, custom). The
outer solver is damped Gauss-Newton with random restarts.
"""

from __future__ import annotations

import logging
import os
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import forces
from .errors import ContactEstError, ConvergenceError, InvalidArgumentError

log = logging.getLogger(__name__)


# ------------------------------------------------------------ interfaces

class PoseParametrization(ABC):
    """Maps the uncertain parameter ``xi`` to body poses.

    ``context`` carries the known per-episode poses (a gripper pose, say)
    and is passed through unchanged. Tangents are left world-frame
    perturbations ``(dt, dtheta)`` stacked as ``6 x n_xi``.
    """

    dimension: int
    lower: np.ndarray
    upper: np.ndarray
    description: str = ""

    @abstractmethod
    def poses(self, xi: np.ndarray, context: dict) -> dict:
        """World poses of the parametrized bodies."""

    @abstractmethod
    def tangents(self, xi: np.ndarray, context: dict) -> dict:
        """``6 x n_xi`` pose derivatives, keyed like :meth:`poses`."""

    def check(self, xi: np.ndarray) -> None:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.dimension,):
            raise InvalidArgumentError(f"xi has shape {xi.shape}, expected ({self.dimension},)")
        if not np.all(np.isfinite(xi)):
            raise InvalidArgumentError("xi contains non-finite values")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` starts drawn uniformly inside the bounds."""
        return rng.uniform(self.lower, self.upper, size=(n, self.dimension))


@dataclass(frozen=True)
class StackTerms:
    """Contact data of one episode at a given ``xi``.

    ``P`` is ``n_gamma x 3m``, ``gaps`` length ``m``; derivatives are
    ``dP`` (``n_xi x n_gamma x 3m``) and ``dgaps`` (``m x n_xi``) when
    requested, else ``None``.
    """

    P: np.ndarray
    gaps: np.ndarray
    mu: np.ndarray
    dP: np.ndarray | None = None
    dgaps: np.ndarray | None = None
    info: dict = field(default_factory=dict)


class MeasurementModel(ABC):
    """Forward model of one measurement episode."""

    n_measurements: int
    n_contacts: int

    @abstractmethod
    def stack_terms(self, xi: np.ndarray, derivatives: bool = True) -> StackTerms:
        """Measurement maps and gaps at ``xi``."""


# ----------------------------------------------------------- augmentation

def _inv_sqrt(S, n, name):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape == (1, 1) and n > 1:
        S = S[0, 0] * np.eye(n)
    if S.shape != (n, n):
        raise InvalidArgumentError(f"{name} has shape {S.shape}, expected ({n}, {n})")
    if not np.allclose(S, S.T, rtol=1e-12, atol=0.0):
        raise InvalidArgumentError(f"{name} must be symmetric")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise InvalidArgumentError(f"{name} must be positive definite") from exc
    return np.linalg.inv(L)


class AugmentationCost(ABC):
    """Extra residual block appended to the measurement residual."""

    name: str = "augmentation"

    @abstractmethod
    def residual(self, xi: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def jacobian(self, xi: np.ndarray) -> np.ndarray: ...


class Prior(AugmentationCost):
    """Gaussian prior ``0.5 |xi - xi_p|^2_{Sigma_p^-1}``."""

    name = "prior"

    def __init__(self, mean, covariance):
        self.mean = np.asarray(mean, dtype=float)
        self._W = _inv_sqrt(covariance, self.mean.shape[0], "prior covariance")

    def residual(self, xi):
        return self._W @ (np.asarray(xi, dtype=float) - self.mean)

    def jacobian(self, xi):
        return self._W.copy()


class Bounds(AugmentationCost):
    """Penalty on leaving ``[lower, upper]``, weighted by ``Sigma_l``, ``Sigma_u``."""

    name = "bounds"

    def __init__(self, lower, upper, cov_lower=1e-6, cov_upper=1e-6):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        n = self.lower.shape[0]
        if self.upper.shape != (n,) or np.any(self.lower > self.upper):
            raise InvalidArgumentError("bounds need lower <= upper of equal length")
        self._Wl = _inv_sqrt(cov_lower, n, "lower-bound covariance")
        self._Wu = _inv_sqrt(cov_upper, n, "upper-bound covariance")

    def residual(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.concatenate([
            self._Wl @ np.maximum(self.lower - xi, 0.0),
            self._Wu @ np.maximum(xi - self.upper, 0.0),
        ])

    def jacobian(self, xi):
        xi = np.asarray(xi, dtype=float)
        below = (self.lower - xi > 0.0).astype(float)
        above = (xi - self.upper > 0.0).astype(float)
        return np.vstack([-self._Wl * below[None, :], self._Wu * above[None, :]])


class Custom(AugmentationCost):
    """User residual block from a callback returning ``(r, dr/dxi)``."""

    name = "custom"

    def __init__(self, fn: Callable[[np.ndarray], tuple], name: str = "custom"):
        self.fn = fn
        self.name = name

    def residual(self, xi):
        return np.asarray(self.fn(np.asarray(xi, dtype=float))[0], dtype=float)

    def jacobian(self, xi):
        return np.atleast_2d(np.asarray(self.fn(np.asarray(xi, dtype=float))[1], dtype=float))


# ---------------------------------------------------------------- problem

@dataclass
class EstimationProblem:
    """Stacked episodes sharing one parametrization.

    ``gammas[e]`` is the measurement of episode ``e`` and ``models[e]``
    its forward model. ``Sigma`` is one episode's measurement covariance
    (shared by all episodes) or a list with one per episode.
    """

    parametrization: PoseParametrization
    models: Sequence[MeasurementModel]
    gammas: Sequence[np.ndarray]
    Sigma: object = 1.0
    k0: float = 1e4
    k1: float = 1e6
    eps: float = 1e-8
    augmentations: Sequence[AugmentationCost] = ()
    force_options: forces.ForceSolverOptions = field(default_factory=forces.ForceSolverOptions)

    def __post_init__(self):
        if len(self.models) != len(self.gammas) or not self.models:
            raise InvalidArgumentError("need one measurement per episode and at least one episode")
        self.gammas = [np.atleast_1d(np.asarray(g, dtype=float)) for g in self.gammas]
        for e, (mdl, g) in enumerate(zip(self.models, self.gammas)):
            if g.shape != (mdl.n_measurements,):
                raise InvalidArgumentError(
                    f"episode {e}: measurement has length {g.shape[0]}, model expects {mdl.n_measurements}"
                )
        sig = self.Sigma if isinstance(self.Sigma, (list, tuple)) else [self.Sigma] * len(self.models)
        if len(sig) != len(self.models):
            raise InvalidArgumentError("need one covariance per episode")
        self._covs = []
        self._Linv = []
        for S, mdl in zip(sig, self.models):
            n = mdl.n_measurements
            S = np.atleast_2d(np.asarray(S, dtype=float))
            if S.shape == (1, 1):
                S = S[0, 0] * np.eye(n)
            self._covs.append(S)
            self._Linv.append(_inv_sqrt(S, n, "measurement covariance"))
        if not self.k1 > 0:
            raise InvalidArgumentError("k1 must be positive")

    @property
    def n_episodes(self) -> int:
        return len(self.models)

    @property
    def dimension(self) -> int:
        return self.parametrization.dimension

    def with_gammas(self, gammas) -> "EstimationProblem":
        return EstimationProblem(
            self.parametrization, self.models, gammas, self.Sigma, self.k0, self.k1,
            self.eps, self.augmentations, self.force_options,
        )

    def with_models(self, models, gammas) -> "EstimationProblem":
        return EstimationProblem(
            self.parametrization, models, gammas, self.Sigma, self.k0, self.k1,
            self.eps, self.augmentations, self.force_options,
        )


class EpisodeError(ContactEstError):
    """A forward evaluation failed inside one episode."""

    def __init__(self, episode: int, cause: Exception):
        super().__init__(f"episode {episode}: {cause}")
        self.episode = episode
        self.cause = cause


@dataclass
class Evaluation:
    """Residual (and Jacobian) with per-block bookkeeping."""

    xi: np.ndarray
    residual: np.ndarray
    jacobian: np.ndarray | None
    blocks: dict
    solutions: list
    stacks: list
    fallback_used: bool

    @property
    def cost(self) -> float:
        return 0.5 * float(self.residual @ self.residual)

    def block_costs(self) -> dict:
        return {k: 0.5 * float(self.residual[s] @ self.residual[s]) for k, s in self.blocks.items()}


def evaluate(problem: EstimationProblem, xi, jacobian: bool = True, warm=None) -> Evaluation:
    """Residual vector and optionally its Jacobian at ``xi``.

    Block order: per episode the measurement block then the penetration
    block, then each augmentation in order.
    """
    param = problem.parametrization
    xi = np.asarray(xi, dtype=float)
    param.check(xi)
    n = xi.shape[0]
    res, jac, blocks, sols, stacks = [], [], {}, [], []
    fallback = False
    offset = 0
    sqk1 = np.sqrt(problem.k1)
    for e, (mdl, gamma, Linv) in enumerate(zip(problem.models, problem.gammas, problem._Linv)):
        try:
            terms = mdl.stack_terms(xi, derivatives=jacobian)
            stack = forces.ContactStack(
                P=terms.P, gaps=terms.gaps, mu=terms.mu, gamma=gamma,
                Sigma=problem._covs[e], k0=problem.k0, eps=problem.eps,
            )
            ws = None if warm is None else warm[e]
            sol = forces.solve(stack, problem.force_options, warm_start=ws)
        except ContactEstError as exc:
            raise EpisodeError(e, exc) from exc
        meas = Linv @ (gamma - terms.P @ sol.forces)
        pen = sqk1 * np.maximum(-terms.gaps, 0.0)
        res += [meas, pen]
        blocks[f"measurement[{e}]"] = slice(offset, offset + meas.shape[0])
        offset += meas.shape[0]
        blocks[f"penetration[{e}]"] = slice(offset, offset + pen.shape[0])
        offset += pen.shape[0]
        sols.append(sol)
        stacks.append(stack)
        if jacobian:
            deriv = forces.StackDerivatives(dP=terms.dP, dgaps=terms.dgaps)
            try:
                sens = forces.differentiate(sol, stack, deriv)
            except ContactEstError as exc:
                raise EpisodeError(e, exc) from exc
            fallback |= sens.fallback_used
            dPf = np.einsum("kij,j->ik", terms.dP, sol.forces)
            jac.append(Linv @ (-dPf - terms.P @ sens.dforces))
            jac.append(-sqk1 * (terms.gaps < 0.0)[:, None] * terms.dgaps)
    for aug in problem.augmentations:
        r = aug.residual(xi)
        res.append(r)
        blocks[aug.name] = slice(offset, offset + r.shape[0])
        offset += r.shape[0]
        if jacobian:
            jac.append(aug.jacobian(xi).reshape(r.shape[0], n))
    return Evaluation(
        xi=xi.copy(), residual=np.concatenate(res),
        jacobian=np.vstack(jac) if jacobian else None,
        blocks=blocks, solutions=sols, stacks=stacks, fallback_used=fallback,
    )


def residual_vector(problem: EstimationProblem, xi) -> np.ndarray:
    return evaluate(problem, xi, jacobian=False).residual


def residual_jacobian(problem: EstimationProblem, xi) -> np.ndarray:
    return evaluate(problem, xi, jacobian=True).jacobian


def cost(problem: EstimationProblem, xi) -> float:
    return evaluate(problem, xi, jacobian=False).cost


# ------------------------------------------------------------ Gauss-Newton

@dataclass(frozen=True)
class GaussNewtonOptions:
    max_iterations: int = 100
    step_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-9
    cost_tolerance: float = 1e-30
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.1
    max_damping: float = 1e16
    undamped_first: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be at least 1")


@dataclass
class LocalResult:
    xi: np.ndarray
    cost: float
    converged: bool
    reason: str
    iterations: int
    trace_xi: list
    trace_cost: list
    trace_step: list
    trace_damping: list = field(default_factory=list)
    fallback_used: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "xi": self.xi.tolist(), "cost": self.cost, "converged": self.converged,
            "reason": self.reason, "iterations": self.iterations,
            "trace_cost": list(self.trace_cost), "trace_step": list(self.trace_step),
            "trace_damping": list(self.trace_damping),
            "fallback_used": self.fallback_used, "error": self.error,
        }


def gauss_newton(problem: EstimationProblem, xi0, options: GaussNewtonOptions | None = None) -> LocalResult:
    """Gauss-Newton from ``xi0`` with Levenberg damping on failed steps.

    Each iteration first tries the undamped step (``undamped_first``)
    unless it is longer than the diagonal of the parametrization's bounds.
    If it does not lower the cost, damped steps follow with a persistent
    factor that starts at ``initial_damping * tr(J'J) / n`` and is
    multiplied by ``damping_up`` after a rejected damped step and by
    ``damping_down`` after an accepted step. A trial point whose forward
    evaluation fails counts as rejected. Stops on step norm, gradient norm, cost floor or the
    iteration cap; never raises for non-convergence.
    """
    opts = options or GaussNewtonOptions()
    xi = np.asarray(xi0, dtype=float).copy()
    try:
        ev = evaluate(problem, xi)
    except ContactEstError as exc:
        return LocalResult(xi, np.inf, False, "evaluation failed at start", 0, [xi.tolist()], [np.inf], [],
                           error=str(exc))
    n = xi.shape[0]
    fcur = ev.cost
    trace_xi, trace_cost, trace_step, trace_damping = [xi.tolist()], [fcur], [], []
    fallback = ev.fallback_used
    lam = None
    box = float(np.linalg.norm(problem.parametrization.upper - problem.parametrization.lower))
    reason = "max iterations"
    converged = False
    it = 0
    while it < opts.max_iterations:
        J, r = ev.jacobian, ev.residual
        g = J.T @ r
        if fcur <= opts.cost_tolerance:
            reason, converged = "cost below tolerance", True
            break
        if np.linalg.norm(g) <= opts.gradient_tolerance:
            reason, converged = "gradient below tolerance", True
            break
        JtJ = J.T @ J
        if lam is None:
            lam = opts.initial_damping * max(np.trace(JtJ) / n, 1e-300)
        it += 1
        accepted = False
        damping = [0.0] if opts.undamped_first else []
        while True:
            if not damping:
                if lam > opts.max_damping * max(np.trace(JtJ) / n, 1.0):
                    break
                damping.append(lam)
            mu_ = damping.pop()
            try:
                step = -np.linalg.solve(JtJ + mu_ * np.eye(n), g)
                if not np.all(np.isfinite(step)):
                    raise np.linalg.LinAlgError
                if mu_ == 0.0 and np.linalg.norm(step) > box:
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                step = None
            fnew = np.inf
            if step is not None:
                trial = xi + step
                try:
                    ev_new = evaluate(problem, trial)
                    fnew = ev_new.cost
                except ContactEstError:
                    pass
            if fnew < fcur:
                accepted = True
                break
            if mu_ > 0.0:
                lam *= opts.damping_up
        if not accepted:
            reason = "damping limit reached"
            converged = np.linalg.norm(g) <= 1e3 * opts.gradient_tolerance
            break
        snorm = float(np.linalg.norm(step))
        xi, ev, fcur = trial, ev_new, fnew
        fallback |= ev.fallback_used
        lam *= opts.damping_down
        trace_xi.append(xi.tolist())
        trace_cost.append(fcur)
        trace_step.append(snorm)
        trace_damping.append(lam)
        if snorm <= opts.step_tolerance * (1.0 + np.linalg.norm(xi)):
            reason, converged = "step below tolerance", True
            break
    return LocalResult(xi, fcur, converged, reason, it, trace_xi, trace_cost, trace_step,
                       trace_damping, fallback)


# --------------------------------------------------------------- estimate

@dataclass
class EstimateResult:
    xi: np.ndarray
    cost: float
    best_start: int
    starts: np.ndarray
    runs: list
    wall_time: float

    @property
    def converged(self) -> bool:
        return self.runs[self.best_start].converged

    def to_dict(self) -> dict:
        return {
            "xi": self.xi.tolist(), "cost": self.cost, "best_start": self.best_start,
            "converged": self.converged, "starts": self.starts.tolist(),
            "runs": [r.to_dict() for r in self.runs], "wall_time": self.wall_time,
        }


def thread_count() -> int:
    """Worker cap from ``CONTACT_EST_THREADS`` (default 1)."""
    raw = os.environ.get("CONTACT_EST_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def estimate(problem: EstimationProblem, n_starts: int = 3, seed: int = 0,
             options: GaussNewtonOptions | None = None, starts=None) -> EstimateResult:
    """Multi-start Gauss-Newton; returns the lowest-cost run.

    Starts are drawn uniformly inside the parametrization bounds from
    ``numpy.random.default_rng(seed)`` unless given. Ties go to the lower
    start index. Raises :class:`ConvergenceError` only when every start
    fails to evaluate.
    """
    if n_starts < 1:
        raise InvalidArgumentError("n_starts must be at least 1")
    t0 = time.perf_counter()
    if starts is None:
        starts = problem.parametrization.sample(np.random.default_rng(seed), n_starts)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    workers = min(thread_count(), starts.shape[0])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda s: gauss_newton(problem, s, options), starts))
    else:
        runs = [gauss_newton(problem, s, options) for s in starts]
    costs = np.array([r.cost for r in runs])
    if not np.any(np.isfinite(costs)):
        raise ConvergenceError(
            "all starts failed: " + "; ".join(f"start {i}: {r.error}" for i, r in enumerate(runs)),
            best=runs, iterations=0,
        )
    best = int(np.argmin(costs))
    return EstimateResult(runs[best].xi, float(costs[best]), best, starts, runs, time.perf_counter() - t0)


# -------------------------------------------------------------- landscape

@dataclass
class LandscapeRow:
    coords: tuple
    cost: float
    min_gap: float
    force_norm: float
    flag: str


def landscape(problem: EstimationProblem, axes=(0, 1), ranges=((-0.01, 0.01), (-0.01, 0.01)),
              resolution: int = 41, base=None) -> list[LandscapeRow]:
    """Cost on a regular grid over two (or more) coordinates of ``xi``.

    Coordinates not on a grid axis stay at ``base`` (zeros by default).
    Nodes whose evaluation fails get cost ``nan`` and flag ``failed``.
    """
    axes = tuple(int(a) for a in axes)
    if len(axes) != len(ranges):
        raise InvalidArgumentError("need one range per axis")
    if problem.dimension < len(axes) or max(axes) >= problem.dimension:
        raise InvalidArgumentError("axis index out of range")
    if resolution < 2:
        raise InvalidArgumentError("resolution must be at least 2")
    base = np.zeros(problem.dimension) if base is None else np.asarray(base, dtype=float)
    grids = [np.linspace(lo, hi, resolution) for lo, hi in ranges]
    rows = []
    for idx in np.ndindex(*(resolution,) * len(axes)):
        xi = base.copy()
        coords = tuple(float(grids[k][i]) for k, i in enumerate(idx))
        xi[list(axes)] = coords
        try:
            ev = evaluate(problem, xi, jacobian=False)
            gmin = min(float(s.gaps.min()) for s in ev.stacks)
            fnorm = float(np.sqrt(sum(float(s.forces @ s.forces) for s in ev.solutions)))
            rows.append(LandscapeRow(coords, ev.cost, gmin, fnorm, "ok"))
        except ContactEstError:
            rows.append(LandscapeRow(coords, float("nan"), float("nan"), float("nan"), "failed"))
    return rows


def grid_local_minima(rows: list[LandscapeRow], resolution: int) -> list[tuple]:
    """Strict local minima (8-neighborhood) of a 2-D landscape grid."""
    C = np.array([r.cost for r in rows]).reshape(resolution, resolution)
    C = np.where(np.isfinite(C), C, np.inf)
    out = []
    for i in range(resolution):
        for j in range(resolution):
            c = C[i, j]
            nb = C[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
            if np.isfinite(c) and c <= nb.min() and np.sum(nb == c) == 1:
                out.append((i, j))
    return out


# -------------------------------------------------------- gradient check

def gradient_check(problem: EstimationProblem, xi, step: float = 1e-6, rel_tol: float = 1e-4):
    """Compare the analytic Jacobian with central differences.

    Returns ``(max_rel_error, skipped)``; ``skipped`` is True when the
    active set (binding contacts or penetrating pairs) differs across the
    stencil, where the residual is not differentiable.
    """
    xi = np.asarray(xi, dtype=float)
    ev = evaluate(problem, xi)
    J = ev.jacobian
    Jfd = np.zeros_like(J)
    sig0 = _active_signature(ev)
    skipped = False
    for i in range(xi.shape[0]):
        e = np.zeros_like(xi)
        e[i] = step
        ep, em = evaluate(problem, xi + e, False), evaluate(problem, xi - e, False)
        if _active_signature(ep) != sig0 or _active_signature(em) != sig0:
            skipped = True
        Jfd[:, i] = (ep.residual - em.residual) / (2 * step)
    scale = max(np.abs(Jfd).max(), np.abs(J).max(), 1e-12)
    err = float(np.abs(J - Jfd).max() / scale)
    return err, skipped


def _active_signature(ev: Evaluation):
    sig = []
    for sol, st in zip(ev.solutions, ev.stacks):
        c = sol.cone_residuals
        F = sol.forces.reshape(-1, 3)
        sig.append(tuple((c < 1e-7 * (1 + st.mu * np.linalg.norm(F, axis=1))).tolist()))
        sig.append(tuple((st.gaps < 0).tolist()))
        sig.append(tuple((st.gaps > 0).tolist()))
    return tuple(sig)


def tangent_check(param: PoseParametrization, xi, context=None, step: float = 1e-6) -> float:
    """Largest relative gap between :meth:`tangents` and central differences of :meth:`poses`.

    Differences are taken as left world-frame tangents, matching the
    convention of the analytic map. Bodies with zero tangents compare
    against an absolute scale of one.
    """
    from .pose import pose_difference

    xi = np.asarray(xi, dtype=float)
    context = context or {}
    T = param.tangents(xi, context)
    worst = 0.0
    for i in range(xi.shape[0]):
        e = np.zeros_like(xi)
        e[i] = step
        Pp, Pm = param.poses(xi + e, context), param.poses(xi - e, context)
        for name, A in T.items():
            fd = (pose_difference(Pp[name], Pm[name])) / (2 * step)
            scale = max(np.abs(A).max(), 1.0 if not A.any() else 0.0, 1e-12)
            worst = max(worst, float(np.abs(fd - A[:, i]).max() / scale))
    return worst
