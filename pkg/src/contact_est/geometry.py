"""Smoothed convex bodies defined by a prescribed support function.

A body is a vertex set plus a smoothness exponent ``p``; its support
function is ``h(x) = (sum_i max(v_i . x, 0)^p)^(1/p)``. Larger ``p``
approaches the sharp convex hull, smaller ``p`` rounds edges and corners.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import kernels
from .errors import GeometryFileError, InvalidArgumentError
from .pose import Pose, skew

DEFAULT_SMOOTHNESS = 20.0


@dataclass(frozen=True)
class ConvexSupportShape:
    """Vertex set (body frame, meters) with smoothness exponent ``p > 2``.

    The origin must lie strictly inside the convex hull of the vertices.
    Use :meth:`canonical` to recenter arbitrary vertex lists.
    """

    vertices: np.ndarray
    smoothness: float = DEFAULT_SMOOTHNESS
    name: str = ""
    hull_margin: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        V = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        if V.ndim != 2 or V.shape[1] != 3:
            raise InvalidArgumentError("vertices must be an (n, 3) array")
        if V.shape[0] < 4:
            raise InvalidArgumentError(f"need at least 4 vertices, got {V.shape[0]}")
        if not np.all(np.isfinite(V)):
            raise InvalidArgumentError("vertices contain non-finite values")
        p = float(self.smoothness)
        if not p > 2.0:
            raise InvalidArgumentError(f"smoothness must exceed 2, got {p}")
        margin = _origin_margin(V)
        if margin <= 0.0:
            raise InvalidArgumentError(
                f"origin is not strictly inside the convex hull (margin {margin:.3g})"
            )
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "smoothness", p)
        object.__setattr__(self, "hull_margin", margin)

    @classmethod
    def canonical(cls, vertices, smoothness: float = DEFAULT_SMOOTHNESS, name: str = ""):
        """Recenter ``vertices`` on their centroid.

        Returns ``(shape, offset)`` where ``offset`` is the centroid that
        was subtracted; the original body frame point ``v`` maps to
        ``v - offset`` in the shape frame.
        """
        V = np.asarray(vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 3:
            raise InvalidArgumentError("vertices must be an (n, 3) array")
        offset = V.mean(axis=0)
        return cls(V - offset, smoothness, name), offset

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def with_smoothness(self, p: float) -> "ConvexSupportShape":
        return ConvexSupportShape(self.vertices, p, self.name)

    def to_dict(self) -> dict:
        out = {"vertices": [[float(c) for c in v] for v in self.vertices], "p": self.smoothness}
        if self.name:
            out["name"] = self.name
        return out


def _origin_margin(V: np.ndarray) -> float:
    """Signed distance from the origin to the nearest hull facet (>0 inside)."""
    try:
        hull = ConvexHull(V)
    except QhullError as exc:
        raise InvalidArgumentError("vertices are coplanar or degenerate") from exc
    # facet equations are n.x + d <= 0 inside, with unit n
    return float(-hull.equations[:, 3].max())


def _direction(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(3)
    n = np.linalg.norm(x)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidArgumentError("support direction must be a finite nonzero vector")
    return x


def support_value(shape: ConvexSupportShape, x) -> float:
    """Smoothed support function ``h(x)`` in the body frame."""
    x = _direction(x)
    return float(kernels.support_eval(shape.vertices, shape.smoothness, x)[0])


def support_point(shape: ConvexSupportShape, x) -> np.ndarray:
    """Support point ``s(x) = dh/dx`` in the body frame."""
    x = _direction(x)
    return np.array(kernels.support_eval(shape.vertices, shape.smoothness, x)[1])


def support_jacobian(shape: ConvexSupportShape, x) -> np.ndarray:
    """Symmetric PSD Jacobian ``ds/dx`` (rank 2, null space along ``x``)."""
    x = _direction(x)
    return np.array(kernels.support_eval(shape.vertices, shape.smoothness, x)[2])


def support_eval(shape: ConvexSupportShape, x):
    """``(h, s, ds/dx)`` in one pass."""
    x = _direction(x)
    h, s, D = kernels.support_eval(shape.vertices, shape.smoothness, x)
    return float(h), np.array(s), np.array(D)


def support_world(shape: ConvexSupportShape, pose: Pose, x):
    """World-frame support value and point for a posed body.

    ``h_w(x) = h(R^T x) + p^T x`` and ``s_w(x) = R s(R^T x) + p``.
    """
    if not isinstance(pose, Pose):
        raise InvalidArgumentError("pose must be a Pose")
    x = _direction(x)
    R = pose.rotation
    h, s, _ = kernels.support_eval(shape.vertices, shape.smoothness, R.T @ x)
    return float(h + pose.position @ x), R @ s + pose.position


def support_world_derivatives(shape: ConvexSupportShape, pose: Pose, x):
    """Derivatives of the world support point.

    Returns ``(ds_w/dx, ds_w/dpose)``; the second is 3x6 against the left
    tangent ``(dt, dtheta)``.
    """
    if not isinstance(pose, Pose):
        raise InvalidArgumentError("pose must be a Pose")
    x = _direction(x)
    R = pose.rotation
    _, s, J = kernels.support_eval(shape.vertices, shape.smoothness, R.T @ x)
    Dw = R @ J @ R.T
    dpose = np.empty((3, 6))
    dpose[:, :3] = np.eye(3)
    dpose[:, 3:] = Dw @ skew(x) - skew(R @ s)
    return Dw, dpose


@dataclass
class ShapeReport:
    """Outcome of :func:`validate_shape`."""

    n_directions: int
    failing_directions: np.ndarray
    origin_interior: bool
    hull_margin: float

    @property
    def passes(self) -> bool:
        return self.origin_interior and len(self.failing_directions) == 0

    def summary(self) -> str:
        state = "PASS" if self.passes else "FAIL"
        return (
            f"{state}: {len(self.failing_directions)}/{self.n_directions} directions "
            f"with < 3 independent positive vertices; origin interior={self.origin_interior} "
            f"(margin {self.hull_margin:.3g})"
        )


def sphere_directions(n: int) -> np.ndarray:
    """Deterministic near-uniform unit directions (Fibonacci lattice)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (1.0 + 5**0.5) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def validate_shape(shape_or_vertices, n_directions: int = 2000, rank_tol: float = 1e-9,
                   seed: int | None = None) -> ShapeReport:
    """Probe the non-degeneracy assumption on sampled directions.

    A direction fails when the vertices with strictly positive projection
    span fewer than 3 dimensions. Directions come from a Fibonacci lattice,
    plus as many random ones when ``seed`` is given. The probe is
    sampling-based: failures on measure-zero sets (the exact edge normals
    of a cube, say) go unreported, and those are harmless in practice.
    """
    V = np.asarray(getattr(shape_or_vertices, "vertices", shape_or_vertices), dtype=float)
    dirs = [sphere_directions(n_directions)]
    if seed is not None:
        rng = np.random.default_rng(seed)
        extra = rng.normal(size=(n_directions, 3))
        dirs.append(extra / np.linalg.norm(extra, axis=1, keepdims=True))
    X = np.vstack(dirs)
    proj = X @ V.T
    scale = np.abs(V).max()
    failing = []
    for k, x in enumerate(X):
        active = V[proj[k] > rank_tol * scale]
        if active.shape[0] < 3 or np.linalg.matrix_rank(active, tol=rank_tol * scale) < 3:
            failing.append(x)
    try:
        margin = _origin_margin(V)
    except InvalidArgumentError:
        margin = -np.inf
    return ShapeReport(
        n_directions=X.shape[0],
        failing_directions=np.array(failing).reshape(-1, 3),
        origin_interior=margin > 0.0,
        hull_margin=margin,
    )


# ---------------------------------------------------------------- file I/O

def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


def _entry_line(text: str, key: str, index: int) -> int | None:
    """Line of entry ``index`` of the array stored under ``key``."""
    pos = text.find(f'"{key}"')
    if pos < 0:
        return None
    depth, count = 0, -1
    for i in range(pos, len(text)):
        ch = text[i]
        if ch == "[":
            depth += 1
            if depth == 2:
                count += 1
                if count == index:
                    return text.count("\n", 0, i) + 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                break
    return None


def _is_vertex(v) -> bool:
    return (isinstance(v, list) and len(v) == 3
            and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v))


def parse_geometry(text: str, path: str = "<string>", recenter: bool = True):
    """Parse a geometry JSON document.

    Returns ``(shape, offset)``; ``offset`` is zero when ``recenter`` is
    False. Errors carry the line of the offending field.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeometryFileError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc
    if not isinstance(data, dict):
        raise GeometryFileError("top level must be an object", path, 1)
    if "vertices" not in data:
        raise GeometryFileError("missing field 'vertices'", path, 1)
    verts = data["vertices"]
    vline = _line_of(text, "vertices")
    if not isinstance(verts, list):
        raise GeometryFileError("'vertices' must be a list of [x, y, z] numbers", path, vline)
    for k, v in enumerate(verts):
        if not _is_vertex(v):
            line = _entry_line(text, "vertices", k) or vline
            raise GeometryFileError(f"vertex {k} must be three numbers, got {json.dumps(v)}", path, line)
    p = data.get("p", DEFAULT_SMOOTHNESS)
    pline = _line_of(text, "p")
    if not isinstance(p, (int, float)) or isinstance(p, bool) or not p > 2:
        raise GeometryFileError("'p' must be a number greater than 2", path, pline)
    name = data.get("name", Path(path).stem if path != "<string>" else "")
    try:
        if recenter:
            return ConvexSupportShape.canonical(verts, p, str(name))
        return ConvexSupportShape(np.asarray(verts, dtype=float), p, str(name)), np.zeros(3)
    except InvalidArgumentError as exc:
        raise GeometryFileError(str(exc), path, vline) from exc


def load_geometry(path, recenter: bool = True):
    """Load a geometry file; see :func:`parse_geometry`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GeometryFileError(f"cannot read file: {exc.strerror}", str(path)) from exc
    return parse_geometry(text, str(path), recenter)


def save_geometry(shape: ConvexSupportShape, path) -> None:
    Path(path).write_text(json.dumps(shape.to_dict(), indent=1) + "\n")
