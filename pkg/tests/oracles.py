"""Independent reference solvers shared by the unit and acceptance tests.

None of these call into the package's solvers; they only use its data
containers. They are slow and meant for small instances.
"""

import itertools

import numpy as np
from scipy.optimize import minimize

from contact_est.forces import ContactStack, assemble


def curvature_ratio(V, p, x):
    """Ratio of the two nonzero eigenvalues of the support Jacobian.

    The Jacobian is a positive multiple of ``F'F`` where row ``k`` of
    ``F`` is ``sqrt(w_k) (v_k - (b_k / B) sum_j w_j b_j v_j)``, so the
    ratio is taken from the singular values of ``F`` rather than from
    the package's matrix.
    """
    u = np.asarray(x, dtype=float) / np.linalg.norm(x)
    V = np.asarray(V, dtype=float)
    act = np.maximum(V @ u, 0.0)
    b = act / act.max()
    wt = np.where(b > 0, b ** (p - 2), 0.0)
    B = wt @ (b * b)
    Fm = np.sqrt(wt)[:, None] * (V - np.outer(b / B, V.T @ (wt * b)))
    sig = np.linalg.svd(Fm, compute_uv=False)
    return float((sig[1] / sig[0]) ** 2)


def random_stack(rng, m=None, k0=1e2):
    """Random force stack: ``m`` in 1..6, ``3m + 3`` measurements, identity covariance."""
    m = int(rng.integers(1, 7)) if m is None else m
    ng = 3 * m + 3
    return ContactStack(
        P=rng.normal(size=(ng, 3 * m)), gaps=rng.uniform(-0.2, 0.2, m), mu=rng.uniform(0.2, 1.2, m),
        gamma=5 * rng.normal(size=ng), Sigma=np.eye(ng), k0=k0,
    )


def quadratic_cost(stack, f):
    H, b = assemble(stack)
    return float(0.5 * f @ H @ f + b @ f)


def brute_force_minimum(stack, levels=3):
    """Global minimum of the force QP by exhaustive multi-start search.

    Each contact force is written ``(t1, t2, sqrt(t1^2 + t2^2 + eps) / mu + s)``
    with ``s >= 0``, which maps the box ``R^2 x [0, inf)`` onto the smoothed
    cone exactly. Starts are a ``levels^2 x 2`` grid per contact (all
    combinations over contacts), each refined by bounded quasi-Newton.
    Returns ``(cost, f)``.
    """
    H, b = assemble(stack)
    m, mu, eps = stack.m, stack.mu, stack.eps

    def lift(z):
        Z = z.reshape(m, 3)
        r = np.sqrt(Z[:, 0] ** 2 + Z[:, 1] ** 2 + eps)
        f = np.column_stack([Z[:, 0], Z[:, 1], r / mu + Z[:, 2]])
        return f.ravel(), Z, r

    def fun(z):
        f, Z, r = lift(z)
        g = (H @ f + b).reshape(m, 3)
        dz = np.column_stack([g[:, 0] + g[:, 2] * Z[:, 0] / (mu * r),
                              g[:, 1] + g[:, 2] * Z[:, 1] / (mu * r), g[:, 2]])
        return 0.5 * f @ H @ f + b @ f, dz.ravel()

    free = np.linalg.lstsq(H, -b, rcond=None)[0]
    a = max(1.0, float(np.abs(free).max()))
    ts = np.linspace(-a, a, levels)
    per_contact = [(t1, t2, s) for t1 in ts for t2 in ts for s in (0.0, a)]
    bounds = [(None, None), (None, None), (0.0, None)] * m
    best = (np.inf, None)
    for combo in itertools.product(per_contact, repeat=m):
        res = minimize(fun, np.array(combo, dtype=float).ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 5000})
        if res.fun < best[0]:
            best = (float(res.fun), lift(res.x)[0])
    return best


def cvxpy_minimum(stack):
    """Minimum of the force QP as a second-order cone program. Returns ``(cost, f)``."""
    import cvxpy as cp

    H, b = assemble(stack)
    m = stack.m
    f = cp.Variable(3 * m)
    cons = [cp.norm(cp.hstack([f[3 * k], f[3 * k + 1], np.sqrt(stack.eps)])) <= stack.mu[k] * f[3 * k + 2]
            for k in range(m)]
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(f, cp.psd_wrap(H)) + b @ f), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return quadratic_cost(stack, f.value), f.value
