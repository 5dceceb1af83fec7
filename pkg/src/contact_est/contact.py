"""Growth-distance contact features between two posed smoothed bodies.

Both bodies are scaled about their centers by a common factor ``sigma``
until they touch. With ``x`` the unit normal (pointing from body ``i``
toward body ``j``) the touching condition is the 4-dim root problem::

    F(x, sigma) = [ sigma (r_i(x) - r_j(-x)) + (p_i - p_j) ]
                  [ |x|^2 - 1                              ]

with ``r`` the world-rotated support point of each body relative to its
center ``p``. It is solved with a trust-region dogleg iteration. ``sigma < 1`` means
the bodies interpenetrate, ``sigma > 1`` that they are separated. The
solution is differentiated with respect to both poses by the implicit
function theorem.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels
from .errors import ConvergenceError, DegeneracyError, DegenerateQueryError, InvalidArgumentError
from .geometry import ConvexSupportShape
from .pose import Pose, skew

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContactQuery:
    shape_i: ConvexSupportShape
    shape_j: ConvexSupportShape
    pose_i: Pose
    pose_j: Pose

    def with_poses(self, pose_i: Pose, pose_j: Pose) -> "ContactQuery":
        return ContactQuery(self.shape_i, self.shape_j, pose_i, pose_j)


@dataclass(frozen=True)
class FeatureSolverOptions:
    tolerance: float = 1e-10
    max_iterations: int = 20
    initial_trust_radius: float = 1.0
    min_trust_radius: float = 1e-14
    max_trust_radius: float = 1e3
    accept_ratio: float = 0.05
    expand_ratio: float = 0.75
    shrink_ratio: float = 0.25
    expand_factor: float = 2.0
    shrink_factor: float = 0.25

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InvalidArgumentError("tolerance must be positive")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be at least 1")
        if not 0 < self.min_trust_radius <= self.initial_trust_radius <= self.max_trust_radius:
            raise InvalidArgumentError("trust radii must satisfy 0 < min <= initial <= max")


@dataclass(frozen=True)
class ContactFeatures:
    """Solved contact features for one body pair (world frame)."""

    normal: np.ndarray
    growth: float
    witness_i: np.ndarray
    witness_j: np.ndarray
    residual_norm: float
    iterations: int
    # solver internals reused by differentiate_features
    _r_i: np.ndarray = field(repr=False, compare=False, default=None)
    _r_j: np.ndarray = field(repr=False, compare=False, default=None)
    _D_i: np.ndarray = field(repr=False, compare=False, default=None)
    _D_j: np.ndarray = field(repr=False, compare=False, default=None)
    _lu: tuple = field(repr=False, compare=False, default=None)

    @property
    def gap(self) -> float:
        return self.growth - 1.0

    @property
    def contact_point(self) -> np.ndarray:
        return 0.5 * (self.witness_i + self.witness_j)

    def to_dict(self) -> dict:
        return {
            "normal": self.normal.tolist(),
            "sigma": self.growth,
            "gap": self.gap,
            "witness_i": self.witness_i.tolist(),
            "witness_j": self.witness_j.tolist(),
            "residual": self.residual_norm,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class ContactDerivatives:
    """Derivatives against the 12-dim tangent ``(dt_i, dtheta_i, dt_j, dtheta_j)``."""

    dnormal: np.ndarray
    dgrowth: np.ndarray
    dwitness_i: np.ndarray
    dwitness_j: np.ndarray

    @property
    def dgap(self) -> np.ndarray:
        return self.dgrowth

    @property
    def dcontact_point(self) -> np.ndarray:
        return 0.5 * (self.dwitness_i + self.dwitness_j)

    def to_dict(self) -> dict:
        return {
            "dnormal": self.dnormal.tolist(),
            "dsigma": self.dgrowth.tolist(),
            "dwitness_i": self.dwitness_i.tolist(),
            "dwitness_j": self.dwitness_j.tolist(),
        }


def _pair(query: ContactQuery, x: np.ndarray):
    si, sj = query.shape_i, query.shape_j
    return kernels.pair_eval(
        si.vertices, si.smoothness, query.pose_i.rotation,
        sj.vertices, sj.smoothness, query.pose_j.rotation, x,
    )


def _system(query: ContactQuery, x, sigma):
    hi, ri, Di, hj, rj, Dj = _pair(query, x)
    y = ri - rj
    F = np.empty(4)
    F[:3] = sigma * y + (query.pose_i.position - query.pose_j.position)
    F[3] = x @ x - 1.0
    J = np.empty((4, 4))
    J[:3, :3] = sigma * (Di + Dj)
    J[:3, 3] = y
    J[3, :3] = 2.0 * x
    J[3, 3] = 0.0
    return F, J, (ri, rj, Di, Dj)


def residual(x, sigma: float, query: ContactQuery) -> np.ndarray:
    """Touching-condition residual ``F(x, sigma)`` (4-vector)."""
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        raise InvalidArgumentError("normal must be nonzero")
    return _system(query, x, float(sigma))[0]


def residual_jacobian(x, sigma: float, query: ContactQuery) -> np.ndarray:
    """4x4 Jacobian of :func:`residual` with respect to ``(x, sigma)``."""
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        raise InvalidArgumentError("normal must be nonzero")
    return _system(query, x, float(sigma))[1]


def initialize(query: ContactQuery):
    """Center-line start: ``x0`` along ``p_j - p_i`` and the exact 1-D ``sigma0``.

    With ``x`` fixed the residual is affine in ``sigma``; projecting it
    onto ``x0`` gives ``sigma0 = d / (h_i(x0) + h_j(-x0))`` with ``d`` the
    center distance and ``h`` the support values about each center.
    """
    d = query.pose_j.position - query.pose_i.position
    dist = np.linalg.norm(d)
    scale = max(query.shape_i.bounding_radius(), query.shape_j.bounding_radius())
    if dist <= 1e-12 * scale:
        raise DegenerateQueryError("body centers coincide; the growth problem is degenerate")
    x0 = d / dist
    hi, _, _, hj, _, _ = _pair(query, x0)
    return x0, float(dist / (hi + hj))


def solve_features(query: ContactQuery, options: FeatureSolverOptions | None = None,
                   start=None) -> ContactFeatures:
    """Solve the growth-distance problem with a trust-region dogleg method.

    Each trial point is renormalized to ``|x| = 1`` and ``sigma`` is
    replaced by its least-squares optimum for that ``x`` when this lowers
    the residual. Both are cheap and shorten the globalization phase for
    elongated bodies whose true normal is far from the center line.

    Raises :class:`ConvergenceError` (carrying the best iterate as
    unfinished :class:`ContactFeatures`) when ``max_iterations`` trial
    steps do not reach ``tolerance``.
    """
    opts = options or FeatureSolverOptions()
    if start is None:
        x0, sigma0 = initialize(query)
    else:
        x0, sigma0 = np.asarray(start[0], dtype=float), float(start[1])
        if not np.any(x0):
            raise InvalidArgumentError("start normal must be nonzero")
    si, sj = query.shape_i, query.shape_j
    x, sigma, fnorm, it = kernels.growth_solve(
        si.vertices, si.smoothness, query.pose_i.rotation, query.pose_i.position,
        sj.vertices, sj.smoothness, query.pose_j.rotation, query.pose_j.position,
        x0, sigma0, opts.tolerance, opts.max_iterations,
        opts.initial_trust_radius, opts.min_trust_radius, opts.max_trust_radius,
        opts.accept_ratio, opts.expand_ratio, opts.shrink_ratio,
        opts.expand_factor, opts.shrink_factor,
    )
    x = np.asarray(x, dtype=float)
    F, J, aux = _system(query, x, sigma)
    feats = _make_features(query, x, sigma, float(np.linalg.norm(F)), it, aux, J)
    if fnorm > opts.tolerance:
        raise ConvergenceError(
            f"contact solver residual {fnorm:.3e} above {opts.tolerance:.1e} "
            f"after {it} iterations", best=feats, iterations=it,
        )
    if not sigma > 0:
        raise DegenerateQueryError(f"solver converged to the negative growth branch (sigma={sigma:.3g})")
    return feats


def _make_features(query, x, sigma, fnorm, it, aux, J):
    ri, rj, Di, Dj = aux
    try:
        with warnings.catch_warnings():
            # singular J is reported by differentiate_features instead
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(J, check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        lu = None
    return ContactFeatures(
        normal=x.copy(),
        growth=float(sigma),
        witness_i=query.pose_i.position + ri,
        witness_j=query.pose_j.position + rj,
        residual_norm=float(fnorm),
        iterations=it,
        _r_i=ri, _r_j=rj, _D_i=Di, _D_j=Dj, _lu=lu,
    )


def _rank2(D: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(D)
    return w[1] > 1e-10 * max(w[2], 1e-300)


def differentiate_features(features: ContactFeatures, query: ContactQuery,
                           cond_limit: float = 1e12) -> ContactDerivatives:
    """Implicit derivatives of normal, growth and witness points.

    Columns follow ``(dt_i, dtheta_i, dt_j, dtheta_j)`` with left
    world-frame perturbations on each pose.
    """
    x = features.normal
    sigma = features.growth
    ri, rj, Di, Dj = features._r_i, features._r_j, features._D_i, features._D_j
    if ri is None:
        _, J, (ri, rj, Di, Dj) = _system(query, x, sigma)
        lu = scipy.linalg.lu_factor(J)
    else:
        lu = features._lu
    J = np.empty((4, 4))
    J[:3, :3] = sigma * (Di + Dj)
    J[:3, 3] = ri - rj
    J[3, :3] = 2.0 * x
    J[3, 3] = 0.0
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > cond_limit or lu is None:
        culprit = None
        if not _rank2(Di):
            culprit = query.shape_i.name or "shape_i"
        elif not _rank2(Dj):
            culprit = query.shape_j.name or "shape_j"
        raise DegeneracyError(
            f"contact Jacobian is singular (cond {cond:.3e}); "
            f"support Jacobian rank lost on {culprit or 'an unidentified body'}",
            shape=culprit,
        )
    sx = skew(x)
    rot_i = Di @ sx - skew(ri)      # d s_i(x) / dtheta_i
    rot_j = -Dj @ sx - skew(rj)     # d s_j(-x) / dtheta_j
    dF = np.zeros((4, 12))
    dF[:3, 0:3] = np.eye(3)
    dF[:3, 3:6] = sigma * rot_i
    dF[:3, 6:9] = -np.eye(3)
    dF[:3, 9:12] = -sigma * rot_j
    dz = -scipy.linalg.lu_solve(lu, dF, check_finite=False)
    dx = dz[:3]
    dwi = np.zeros((3, 12))
    dwi[:, 0:3] = np.eye(3)
    dwi[:, 3:6] = rot_i
    dwi += Di @ dx
    dwj = np.zeros((3, 12))
    dwj[:, 6:9] = np.eye(3)
    dwj[:, 9:12] = rot_j
    dwj -= Dj @ dx
    return ContactDerivatives(dnormal=dx, dgrowth=dz[3].copy(), dwitness_i=dwi, dwitness_j=dwj)


def solve_and_differentiate(query: ContactQuery, options: FeatureSolverOptions | None = None):
    feats = solve_features(query, options)
    return feats, differentiate_features(feats, query)


# ------------------------------------------------------- degeneration trace

@dataclass(frozen=True)
class TraceRow:
    angle_deg: float
    witness: np.ndarray
    sigma: float
    iterations: int
    residual: float
    converged: bool


def degeneration_trace(query_template: ContactQuery, angle_range=(0.0, 90.0), step: float = 0.1,
                       axis=(0.0, 0.0, 1.0), options: FeatureSolverOptions | None = None) -> list[TraceRow]:
    """Rotate body ``i`` about ``axis`` through ``angle_range`` (degrees).

    Each row records the body-``i`` witness point. Rows whose solve fails
    carry the best iterate with ``converged=False``.
    """
    if not step > 0:
        raise InvalidArgumentError("step must be positive")
    lo, hi = angle_range
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    base = query_template.pose_i
    rows = []
    for k in range(n):
        ang = lo + k * step
        rot = Pose.from_axis_angle([0.0, 0.0, 0.0], axis, np.deg2rad(ang))
        pose_i = Pose.from_rotation(base.position, rot.as_rotation() * base.as_rotation())
        q = query_template.with_poses(pose_i, query_template.pose_j)
        try:
            f = solve_features(q, options)
            ok = True
        except ConvergenceError as exc:
            f = exc.best
            ok = False
        rows.append(TraceRow(ang, f.witness_i, f.growth, f.iterations, f.residual_norm, ok))
    return rows


def trace_smoothness(rows: list[TraceRow]) -> dict:
    """Jump statistics of a witness trace.

    ``jump_ratio`` is the largest discrete second difference over the
    median first difference; a discontinuity drives it toward the number
    of samples, a smooth trace keeps it small. ``max_slope`` is the
    largest witness speed per radian.
    """
    W = np.array([r.witness for r in rows])
    ang = np.deg2rad([r.angle_deg for r in rows])
    d1 = np.linalg.norm(np.diff(W, axis=0), axis=1)
    d2 = np.linalg.norm(W[2:] - 2 * W[1:-1] + W[:-2], axis=1)
    med = float(np.median(d1))
    return {
        "max_first_difference": float(d1.max()),
        "median_first_difference": med,
        "max_second_difference": float(d2.max()),
        "jump_ratio": float(d2.max() / med) if med > 0 else float("inf"),
        "step_ratio": float(d1.max() / med) if med > 0 else float("inf"),
        "max_slope": float((d1 / np.diff(ang)).max()),
    }
