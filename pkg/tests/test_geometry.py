import json

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from contact_est import geometry as geo
from contact_est import shapes
from contact_est.errors import GeometryFileError, InvalidArgumentError
from contact_est.pose import random_pose

from oracles import curvature_ratio

seeds = st.integers(0, 2**32 - 1)
EPS = np.finfo(float).eps


def _case(seed):
    rng = np.random.default_rng(seed)
    return rng, shapes.random_shape(rng), rng.normal(size=3)


@given(seeds, st.floats(0.01, 100.0))
def test_positive_homogeneity(seed, alpha):
    _, S, x = _case(seed)
    h = geo.support_value(S, x)
    assert abs(geo.support_value(S, alpha * x) - alpha * h) <= 1e-12 * alpha * abs(h)


@given(seeds)
def test_subadditivity(seed):
    rng, S, x = _case(seed)
    y = rng.normal(size=3)
    if np.linalg.norm(x + y) < 1e-6:
        return
    assert geo.support_value(S, x + y) <= geo.support_value(S, x) + geo.support_value(S, y) + 1e-12


@given(seeds)
def test_euler_identity_and_jacobian_structure(seed):
    _, S, x = _case(seed)
    h, s, D = geo.support_eval(S, x)
    assert s @ x == pytest.approx(h, rel=1e-12)
    np.testing.assert_allclose(D, D.T, atol=1e-12 * np.abs(D).max())
    assert np.linalg.norm(D @ x) <= 1e-10 * max(1.0, np.abs(D).max())
    w = np.linalg.eigvalsh(D)
    # roundoff in D scales with |s|/|x|, which dominates when D is tiny
    assert w[0] >= -1e-10 * w[-1] - 1e-13 * np.linalg.norm(s) / np.linalg.norm(x)
    ratio = curvature_ratio(S.vertices, S.smoothness, x)
    # below ~30 eps the second curvature is not representable in a double D
    assume(ratio >= 30 * EPS)
    assert np.linalg.matrix_rank(D, hermitian=True) == 2
    assert w[1] / w[-1] == pytest.approx(ratio, rel=1e-6, abs=10 * EPS)


@given(seeds)
def test_smoothed_body_contains_hull(seed):
    _, S, x = _case(seed)
    hull = (S.vertices @ x).max()
    h = geo.support_value(S, x)
    assert hull - 1e-12 <= h <= S.n_vertices ** (1 / S.smoothness) * hull + 1e-12


def test_support_point_finite_differences(rng):
    for _ in range(50):
        S = shapes.random_shape(rng)
        x = rng.normal(size=3)
        fd = [(geo.support_value(S, x + 1e-6 * e) - geo.support_value(S, x - 1e-6 * e)) / 2e-6 for e in np.eye(3)]
        np.testing.assert_allclose(geo.support_point(S, x), fd, rtol=1e-6, atol=1e-9)


def test_cube_axis_support_closed_form():
    for p in (5.0, 20.0, 40.0):
        assert geo.support_value(shapes.cube(1.0, p), [1.0, 0, 0]) == pytest.approx(4 ** (1 / p), rel=1e-14)


def test_larger_p_approaches_hull(rng):
    V = shapes.random_shape(rng).vertices
    x = rng.normal(size=3)
    vals = [geo.support_value(geo.ConvexSupportShape(V, p), x) for p in (5, 20, 80, 320)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx((V @ x).max(), rel=2e-2)


def test_world_support_matches_transformed_body(rng):
    S = shapes.random_shape(rng)
    P = random_pose(rng)
    x = rng.normal(size=3)
    h, s = geo.support_world(S, P, x)
    V = S.vertices @ P.rotation.T + P.position
    assert h == pytest.approx(geo.support_value(S, P.rotation.T @ x) + P.position @ x)
    np.testing.assert_allclose(s, P.rotation @ geo.support_point(S, P.rotation.T @ x) + P.position)
    assert h >= (V @ x).max() - 1e-12


def test_world_support_pose_derivative(rng):
    S = shapes.random_shape(rng)
    P = random_pose(rng)
    x = rng.normal(size=3)
    _, dpose = geo.support_world_derivatives(S, P, x)
    fd = np.column_stack([(geo.support_world(S, P.perturb(1e-6 * e), x)[1]
                           - geo.support_world(S, P.perturb(-1e-6 * e), x)[1]) / 2e-6 for e in np.eye(6)])
    np.testing.assert_allclose(dpose, fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("bad", [
    np.zeros((3, 3)),
    np.array([[1.0, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]]),
    np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]),
])
def test_invalid_vertex_sets(bad):
    with pytest.raises(InvalidArgumentError):
        geo.ConvexSupportShape(bad)


def test_invalid_smoothness_and_direction():
    with pytest.raises(InvalidArgumentError):
        shapes.cube(1.0, 2.0)
    with pytest.raises(InvalidArgumentError):
        geo.support_value(shapes.cube(), [0.0, 0.0, 0.0])


def test_canonical_recenters():
    V = shapes.box_vertices([1, 2, 3]) + np.array([5.0, -1.0, 2.0])
    S, off = geo.ConvexSupportShape.canonical(V)
    np.testing.assert_allclose(off, [5.0, -1.0, 2.0])
    np.testing.assert_allclose(S.vertices.mean(axis=0), 0.0, atol=1e-15)


def test_validate_shape_reports():
    assert geo.validate_shape(shapes.cube(), seed=0).passes
    # a bare tetrahedron has directions seeing only one or two vertices
    rep = geo.validate_shape(shapes.tetrahedron(), 500)
    assert not rep.passes and rep.summary().startswith("FAIL")
    assert geo.validate_shape(shapes.tetrahedron(midpoints=True), 500).passes


def test_geometry_file_roundtrip(tmp_path):
    S = shapes.icosahedron(0.5, 12.0)
    geo.save_geometry(S, tmp_path / "ico.json")
    T, off = geo.load_geometry(tmp_path / "ico.json")
    np.testing.assert_allclose(T.vertices, S.vertices, atol=1e-15)
    assert T.smoothness == 12.0
    np.testing.assert_allclose(off, 0.0, atol=1e-15)


def test_geometry_file_errors_carry_lines(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text('{\n "name": "x",\n "vertices": [[1, 0, 0], [0, 1]]\n}\n')
    with pytest.raises(GeometryFileError) as ei:
        geo.load_geometry(f)
    assert ei.value.line == 3 and "bad.json:3" in str(ei.value)
    f.write_text('{\n "vertices": [[1,0,0],[0,1,0],[0,0,1],[-1,-1,-1]],\n "p": 1.5\n}\n')
    with pytest.raises(GeometryFileError) as ei:
        geo.load_geometry(f)
    assert ei.value.line == 3
    f.write_text('{\n "vertices": [\n')
    with pytest.raises(GeometryFileError) as ei:
        geo.load_geometry(f)
    assert ei.value.line is not None
    with pytest.raises(GeometryFileError):
        geo.load_geometry(tmp_path / "missing.json")


def test_shipped_fixtures_load():
    from contact_est.cli import DATA_DIR

    for name, make in shapes.BENCHMARK_FIXTURES.items():
        S, off = geo.load_geometry(DATA_DIR / "geometries" / f"{name}.json")
        np.testing.assert_allclose(S.vertices, make().vertices, atol=1e-15)
        assert geo.validate_shape(S, 500).origin_interior
        json.loads((DATA_DIR / "geometries" / f"{name}.json").read_text())
