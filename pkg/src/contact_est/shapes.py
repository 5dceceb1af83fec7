"""Vertex-set generators for test fixtures and the shipped scenarios."""

from __future__ import annotations

import itertools

import numpy as np

from .geometry import DEFAULT_SMOOTHNESS, ConvexSupportShape, sphere_directions


def box_vertices(half_extents) -> np.ndarray:
    hx, hy, hz = half_extents
    return np.array(list(itertools.product([-hx, hx], [-hy, hy], [-hz, hz])), dtype=float)


def cube(half: float = 1.0, p: float = DEFAULT_SMOOTHNESS) -> ConvexSupportShape:
    return ConvexSupportShape(box_vertices((half, half, half)), p, "cube")


def box(half_extents, p: float = DEFAULT_SMOOTHNESS, name: str = "box") -> ConvexSupportShape:
    return ConvexSupportShape(box_vertices(half_extents), p, name)


def tetrahedron_vertices(scale: float = 1.0) -> np.ndarray:
    return scale * np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)


def with_edge_midpoints(vertices: np.ndarray) -> np.ndarray:
    """Append midpoints of every vertex pair lying on a hull edge.

    Only exact hull edges are used, found from the qhull facets.
    """
    from scipy.spatial import ConvexHull

    hull = ConvexHull(vertices)
    edges = set()
    for simplex in hull.simplices:
        for a, b in itertools.combinations(sorted(simplex), 2):
            edges.add((a, b))
    # coplanar facet triangulations add diagonals; keep pairs whose segment
    # is not interior to a facet by requiring the two ends to share >= 2 facets
    normals = hull.equations[:, :3]
    mids = []
    for a, b in sorted(edges):
        m = 0.5 * (vertices[a] + vertices[b])
        on = np.abs(hull.equations[:, :3] @ m + hull.equations[:, 3]) < 1e-12
        if len({tuple(np.round(n, 9)) for n in normals[on]}) >= 2:
            mids.append(m)
    return np.vstack([vertices, np.array(mids)])


def tetrahedron(p: float = DEFAULT_SMOOTHNESS, midpoints: bool = False) -> ConvexSupportShape:
    V = tetrahedron_vertices()
    if midpoints:
        V = with_edge_midpoints(V)
    return ConvexSupportShape(V, p, "tetrahedron+mid" if midpoints else "tetrahedron")


def icosahedron_vertices(radius: float = 1.0) -> np.ndarray:
    phi = (1 + 5**0.5) / 2
    V = []
    for a, b in itertools.product([-1, 1], repeat=2):
        V += [[0, a, b * phi], [a, b * phi, 0], [b * phi, 0, a]]
    V = np.array(V, dtype=float)
    return radius * V / np.linalg.norm(V[0])


def icosahedron(radius: float = 1.0, p: float = DEFAULT_SMOOTHNESS) -> ConvexSupportShape:
    return ConvexSupportShape(icosahedron_vertices(radius), p, "icosahedron")


def prism_vertices(polygon, half_height: float = 1.0) -> np.ndarray:
    """Extrude a planar polygon (k x 2) to ``z = +-half_height``."""
    P = np.asarray(polygon, dtype=float)
    top = np.column_stack([P, np.full(len(P), half_height)])
    bot = np.column_stack([P, np.full(len(P), -half_height)])
    return np.vstack([top, bot])


def square_prism(half: float = 1.0, half_height: float = 1.0, p: float = DEFAULT_SMOOTHNESS):
    sq = [[half, half], [-half, half], [-half, -half], [half, -half]]
    return ConvexSupportShape(prism_vertices(sq, half_height), p, "square_prism")


def regular_polygon(n: int, radius: float, phase: float = 0.0) -> np.ndarray:
    t = phase + 2 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(t), np.sin(t)])


def random_shape(rng: np.random.Generator, n: int | None = None, p: float | None = None,
                 scale: float = 1.0) -> ConvexSupportShape:
    """Random vertex cloud around the origin with random anisotropy.

    Points are drawn on a jittered, stretched sphere so the origin stays
    well inside and the non-degeneracy assumption holds in practice.
    """
    n = int(rng.integers(12, 40)) if n is None else n
    p = float(rng.uniform(5.0, 40.0)) if p is None else p
    D = rng.normal(size=(n, 3))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    radii = rng.uniform(0.6, 1.0, size=(n, 1))
    stretch = rng.uniform(0.5, 1.5, size=3)
    V = scale * D * radii * stretch
    shape, _ = ConvexSupportShape.canonical(V, p, "random")
    return shape


# ---------------------------------------------------- benchmark fixtures
# Synthetic stand-ins for three household objects of distinct character:
# a near-round body, a tall bottle and a flat slab.

def apple(p: float = DEFAULT_SMOOTHNESS) -> ConvexSupportShape:
    V = sphere_directions(42) * np.array([0.038, 0.038, 0.035])
    V[:, 2] -= 0.002 * np.sign(V[:, 2]) * (np.abs(V[:, 2]) > 0.03)
    shape, _ = ConvexSupportShape.canonical(V, p, "apple")
    return shape


def mustard(p: float = DEFAULT_SMOOTHNESS) -> ConvexSupportShape:
    body = regular_polygon(8, 1.0, np.pi / 8) * np.array([0.030, 0.020])
    neck = regular_polygon(8, 1.0, np.pi / 8) * np.array([0.012, 0.010])
    V = np.vstack([
        np.column_stack([body, np.full(8, -0.090)]),
        np.column_stack([body * 1.04, np.full(8, 0.010)]),
        np.column_stack([body * 0.8, np.full(8, 0.060)]),
        np.column_stack([neck, np.full(8, 0.095)]),
    ])
    shape, _ = ConvexSupportShape.canonical(V, p, "mustard")
    return shape


def sponge(p: float = DEFAULT_SMOOTHNESS) -> ConvexSupportShape:
    V = with_edge_midpoints(box_vertices((0.036, 0.057, 0.0075)))
    shape, _ = ConvexSupportShape.canonical(V, p, "sponge")
    return shape


BENCHMARK_FIXTURES = {"apple": apple, "mustard": mustard, "sponge": sponge}
