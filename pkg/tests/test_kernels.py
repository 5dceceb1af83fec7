import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from contact_est import _kernels_py as py
from contact_est import kernels, shapes

compiled = kernels.available_backends().get("compiled")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def test_backend_flag_is_consistent():
    assert kernels.BACKEND in ("python", "compiled")
    assert py.BACKEND == "python"


@needs_compiled
@given(st.integers(0, 2**31), st.sampled_from([2.5, 5.0, 20.0, 60.0]))
def test_support_eval_agrees(seed, p):
    rng = np.random.default_rng(seed)
    V = np.ascontiguousarray(rng.normal(size=(int(rng.integers(4, 30)), 3)))
    x = rng.normal(size=3)
    a, b = py.support_eval(V, p, x), compiled.support_eval(V, p, x)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-11, atol=1e-13)
    # D is a difference of O(|s|/|x|) terms, so compare against that scale
    np.testing.assert_allclose(a[2], b[2], rtol=1e-9, atol=1e-12 * np.linalg.norm(a[1]) / np.linalg.norm(x))


@needs_compiled
def test_growth_solve_agrees(rng):
    A, B = shapes.mustard(), shapes.sponge()
    for _ in range(40):
        Ri = Rotation.random(random_state=rng).as_matrix()
        Rj = Rotation.random(random_state=rng).as_matrix()
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        args = (A.vertices, A.smoothness, Ri, np.zeros(3), B.vertices, B.smoothness, Rj,
                d * rng.uniform(0.08, 0.2), d, 1.0, 1e-12, 40, 1.0, 1e-14, 1e3, 0.05, 0.75, 0.25, 2.0, 0.25)
        xa, sa, ra, ia = py.growth_solve(*args)
        xb, sb, rb, ib = compiled.growth_solve(*args)
        if ra <= 1e-12 and rb <= 1e-12:
            np.testing.assert_allclose(xa, xb, atol=1e-9)
            assert sa == pytest.approx(sb, rel=1e-9)


@needs_compiled
def test_pgs_sweep_agrees(rng):
    for _ in range(20):
        m = int(rng.integers(1, 6))
        P = rng.normal(size=(3 * m + 3, 3 * m))
        H = np.ascontiguousarray(P.T @ P + 1e-3 * np.eye(3 * m))
        b = rng.normal(size=3 * m)
        mu = rng.uniform(0.2, 1.2, m)
        out = []
        for mod in (py, compiled):
            f = np.zeros(3 * m)
            f[2::3] = 1e-4 / mu
            lam = np.zeros(m)
            for _ in range(30):
                mod.pgs_sweep(H, b, mu, 1e-8, np.arange(m), f, lam, 1e-10, 1e-6)
            out.append(f)
        np.testing.assert_allclose(out[0], out[1], rtol=1e-7, atol=1e-7 * (1 + np.abs(out[0]).max()))


@given(st.integers(0, 2**31))
def test_block_solve_is_feasible_and_optimal(seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(3, 3))
    A = L @ L.T + 0.1 * np.eye(3)
    c = 5 * rng.normal(size=3)
    mu, eps = rng.uniform(0.2, 1.2), 1e-8
    f, lam = py.block_solve(A, c, mu, eps, np.zeros(3))
    assert py.cone_value(f, mu, eps) >= -1e-12
    # KKT: A f + c = lam * grad cone
    r = np.sqrt(f[0] ** 2 + f[1] ** 2 + eps)
    g = np.array([-f[0] / r, -f[1] / r, mu])
    np.testing.assert_allclose(A @ f + c, lam * g, atol=1e-7 * (1 + np.abs(c).max()))
    assert lam >= 0
