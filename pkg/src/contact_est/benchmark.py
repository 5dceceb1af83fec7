"""Convergence benchmark for the contact feature solver.

Random pose pairs are drawn for each ordered fixture pair: body ``i``
sits at the origin with a uniform orientation, body ``j`` has a uniform
orientation and sits along a uniform direction at a distance drawn
uniformly from ``distance_range`` times the sum of bounding radii, so
both penetrating and separated configurations occur.

Per row the table reports the fraction converged to ``tolerance``, the
mean computation time (AT, microseconds) and the mean of ``-log10``
of the final residual (MLR). Residuals are floored at ``1e-16`` before
the logarithm.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import kernels
from .contact import ContactQuery, FeatureSolverOptions, solve_features
from .errors import ConvergenceError, InvalidArgumentError
from .pose import Pose

RESIDUAL_FLOOR = 1e-16


@dataclass(frozen=True)
class BenchmarkRow:
    pair: str
    max_iterations: int
    n_queries: int
    converged_fraction: float
    mean_iterations: float
    mean_time_us: float
    mlr: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def random_queries(shapes: dict, n_queries: int, seed: int = 0, distance_range=(0.5, 1.5)):
    """``n_queries`` queries spread round-robin over the cyclic fixture pairs."""
    if n_queries < 1:
        raise InvalidArgumentError("n_queries must be at least 1")
    names = list(shapes)
    pairs = list(zip(names, names[1:] + names[:1])) if len(names) > 1 else [(names[0], names[0])]
    rng = np.random.default_rng(seed)
    out = []
    for k, (a, b) in zip(range(n_queries), itertools.cycle(pairs)):
        A, B = shapes[a], shapes[b]
        pi = Pose.from_rotation(np.zeros(3), Rotation.random(random_state=rng))
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        dist = rng.uniform(*distance_range) * (A.bounding_radius() + B.bounding_radius())
        pj = Pose.from_rotation(d * dist, Rotation.random(random_state=rng))
        out.append((f"{a}/{b}", ContactQuery(A, B, pi, pj)))
    return out


def run_queries(queries, max_iterations: int, tolerance: float = 1e-10):
    """Final residual, iteration count and wall time of each query."""
    opts = FeatureSolverOptions(tolerance=tolerance, max_iterations=max_iterations)
    res = np.empty(len(queries))
    its = np.empty(len(queries))
    times = np.empty(len(queries))
    for k, (_, q) in enumerate(queries):
        t0 = time.perf_counter()
        try:
            f = solve_features(q, opts)
        except ConvergenceError as exc:
            f = exc.best
        times[k] = time.perf_counter() - t0
        res[k] = f.residual_norm
        its[k] = f.iterations
    return res, its, times


def mlr(residuals) -> float:
    r = np.maximum(np.asarray(residuals, dtype=float), RESIDUAL_FLOOR)
    return float(np.mean(-np.log10(r)))


def feature_benchmark(shapes: dict, n_queries: int, seed: int = 0, iteration_caps=(20,),
                      tolerance: float = 1e-10, per_pair: bool = False) -> list[BenchmarkRow]:
    """One row per iteration cap (and per fixture pair if ``per_pair``)."""
    queries = random_queries(shapes, n_queries, seed)
    rows = []
    for cap in iteration_caps:
        res, its, times = run_queries(queries, cap, tolerance)
        groups = {"all": np.ones(len(queries), bool)}
        if per_pair:
            labels = np.array([lab for lab, _ in queries])
            groups.update({lab: labels == lab for lab in dict.fromkeys(labels)})
        for lab, sel in groups.items():
            rows.append(BenchmarkRow(
                pair=str(lab), max_iterations=int(cap), n_queries=int(sel.sum()),
                converged_fraction=float(np.mean(res[sel] <= tolerance)),
                mean_iterations=float(its[sel].mean()),
                mean_time_us=float(times[sel].mean() * 1e6),
                mlr=mlr(res[sel]),
            ))
    return rows


def backend_name() -> str:
    return kernels.BACKEND
