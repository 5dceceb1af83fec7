"""Pure numpy kernels. Reference implementation for the compiled twin.

The smoothed support function of a vertex set ``V`` (n x 3) is

    h(x) = (sum_i max(v_i . x, 0) ** p) ** (1 / p)

Powers are formed on ``a_i / max_i a_i`` so that large ``p`` neither
underflows for millimeter-scale vertices nor overflows for large ones.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def support_eval(V: np.ndarray, p: float, x: np.ndarray):
    """Return ``(h, s, ds/dx)`` of the body-frame support function at ``x``.

    ``x`` need not be unit length; it must be nonzero.
    """
    nx = np.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    u = x / nx
    a = V @ u
    np.maximum(a, 0.0, out=a)
    amax = a.max()
    b = a / amax
    bp2 = b ** (p - 2.0)
    bp2[b == 0.0] = 0.0  # inactive vertices, also at p = 2 where 0 ** 0 = 1
    bp1 = bp2 * b
    B = float(bp1 @ b)
    Bq = B ** (1.0 / p - 1.0)
    sv = V.T @ bp1
    h = amax * B * Bq * nx
    s = Bq * sv
    # sum of PSD terms bp2_k r_k r_k' (r_k = v_k - (b_k / B) sv), equal to
    # M - sv sv' / B without cancelling two large matrices
    R = V - np.outer(b / B, sv)
    D = ((p - 1.0) / (amax * nx) * Bq) * ((R.T * bp2) @ R)
    D = 0.5 * (D + D.T)
    return h, s, D


def pair_eval(Vi, pi, Ri, Vj, pj, Rj, x):
    """World-frame support data for a body pair at normal ``x``.

    Returns ``(hi, ri, Di, hj, rj, Dj)`` where ``ri = Ri s_i(Ri^T x)`` and
    ``rj = Rj s_j(-Rj^T x)`` (support points relative to the body
    centers) and ``Di``, ``Dj`` are the world-frame support Jacobians at
    ``x`` and ``-x`` respectively.
    """
    hi, si, Ji = support_eval(Vi, pi, Ri.T @ x)
    hj, sj, Jj = support_eval(Vj, pj, -(Rj.T @ x))
    return hi, Ri @ si, Ri @ Ji @ Ri.T, hj, Rj @ sj, Rj @ Jj @ Rj.T


def _residual(Vi, pi, Ri, ti, Vj, pj, Rj, tj, x, sigma):
    hi, ri, Di, hj, rj, Dj = pair_eval(Vi, pi, Ri, Vj, pj, Rj, x)
    y = ri - rj
    F = np.empty(4)
    F[:3] = sigma * y + (ti - tj)
    F[3] = x @ x - 1.0
    J = np.empty((4, 4))
    J[:3, :3] = sigma * (Di + Dj)
    J[:3, 3] = y
    J[3, :3] = 2.0 * x
    J[3, 3] = 0.0
    return F, J, y


def dogleg_step(F, J, radius):
    """Dogleg step for ``J dz = -F`` inside a ball of ``radius``."""
    g = J.T @ F
    gg = g @ g
    try:
        step_gn = -np.linalg.solve(J, F)
    except np.linalg.LinAlgError:
        # singular model: steepest descent clipped to the ball
        if gg == 0.0:
            return np.zeros(4)
        return g * (-radius / np.sqrt(gg))
    if np.linalg.norm(step_gn) <= radius:
        return step_gn
    if gg == 0.0:
        return step_gn * (radius / np.linalg.norm(step_gn))
    Jg = J @ g
    step_ca = -(gg / (Jg @ Jg)) * g
    nca = np.linalg.norm(step_ca)
    if nca >= radius:
        return step_ca * (radius / nca)
    d = step_gn - step_ca
    a = d @ d
    b = 2.0 * (step_ca @ d)
    c = nca * nca - radius * radius
    tau = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    return step_ca + tau * d


def growth_solve(Vi, pi, Ri, ti, Vj, pj, Rj, tj, x0, sigma0, tol, max_iter,
                 radius0, rmin, rmax, accept, expand, shrink, fexpand, fshrink):
    """Trust-region dogleg on the growth residual.

    ``ti``, ``tj`` are the body centers. Returns ``(x, sigma, |F|, iters)``.
    Trial points are renormalized onto ``|x| = 1`` and ``sigma`` is refit
    by least squares for the trial ``x`` when that lowers the residual.
    """
    x = np.array(x0, dtype=float)
    sigma = float(sigma0)
    dp = ti - tj
    F, J, _ = _residual(Vi, pi, Ri, ti, Vj, pj, Rj, tj, x, sigma)
    fnorm = np.linalg.norm(F)
    radius = radius0
    it = 0
    while fnorm > tol and it < max_iter:
        it += 1
        step = dogleg_step(F, J, radius)
        x_new = x + step[:3]
        nn = x_new @ x_new
        if nn < 1e-16:
            radius = max(rmin, fshrink * radius)
            continue
        x_new = x_new / np.sqrt(nn)
        sigma_new = sigma + step[3]
        F_new, J_new, y = _residual(Vi, pi, Ri, ti, Vj, pj, Rj, tj, x_new, sigma_new)
        fnorm_new = np.linalg.norm(F_new)
        sigma_fit = -(y @ dp) / (y @ y)
        if sigma_fit > 0.0:
            F_fit, J_fit, _ = _residual(Vi, pi, Ri, ti, Vj, pj, Rj, tj, x_new, sigma_fit)
            fnorm_fit = np.linalg.norm(F_fit)
            if fnorm_fit < fnorm_new:
                sigma_new, F_new, J_new, fnorm_new = sigma_fit, F_fit, J_fit, fnorm_fit
        predicted = 0.5 * (fnorm * fnorm - np.sum((F + J @ step) ** 2))
        actual = 0.5 * (fnorm * fnorm - fnorm_new * fnorm_new)
        ratio = actual / predicted if predicted > 0 else (1.0 if actual > 0 else -1.0)
        snorm = np.linalg.norm(step)
        if ratio < shrink:
            radius = max(rmin, fshrink * snorm)
        elif ratio > expand:
            radius = min(rmax, max(radius, fexpand * snorm))
        if ratio > accept or (fnorm_new < fnorm and fnorm_new <= tol):
            x, sigma, F, J, fnorm = x_new, sigma_new, F_new, J_new, fnorm_new
    return x, sigma, float(fnorm), it


# ------------------------------------------------------------------ PGS

def cone_value(f, mu, eps):
    return mu * f[2] - np.sqrt(f[0] * f[0] + f[1] * f[1] + eps)


def _lagrangian_newton(A, c, mu, eps, lam, f, max_iter=60):
    """Minimize ``0.5 f'Af + c'f - lam * cone(f)`` (strictly convex)."""
    for _ in range(max_iter):
        r = np.sqrt(f[0] * f[0] + f[1] * f[1] + eps)
        g = A @ f + c
        g[0] += lam * f[0] / r
        g[1] += lam * f[1] / r
        g[2] -= lam * mu
        scale = np.abs(A).max() * (np.abs(f).max() + 1.0) + np.abs(c).max() + lam * (mu + 1.0)
        if np.abs(g).max() <= 1e-15 * scale:
            break
        K = A.copy()
        w = lam / (r * r * r)
        K[0, 0] += w * (f[1] * f[1] + eps)
        K[1, 1] += w * (f[0] * f[0] + eps)
        K[0, 1] -= w * f[0] * f[1]
        K[1, 0] -= w * f[0] * f[1]
        d = -np.linalg.solve(K, g)
        L0 = 0.5 * f @ A @ f + c @ f - lam * cone_value(f, mu, eps)
        slope = g @ d
        t = 1.0
        while t > 1e-12:
            fn = f + t * d
            Ln = 0.5 * fn @ A @ fn + c @ fn - lam * cone_value(fn, mu, eps)
            if Ln <= L0 + 1e-4 * t * slope:
                break
            t *= 0.5
        f = f + t * d
        if np.abs(t * d).max() <= 1e-16 * (np.abs(f).max() + 1e-300):
            break
    return f


def block_solve(A, c, mu, eps, f0):
    """Exact minimizer of ``0.5 f'Af + c'f`` over the smoothed cone.

    ``A`` must be positive definite. Returns ``(f, lam)``; ``lam > 0``
    only when the cone constraint binds. The binding case is a monotone
    root find on the multiplier: ``cone(f(lam))`` increases with ``lam``.
    """
    fu = -np.linalg.solve(A, c)
    if cone_value(fu, mu, eps) >= 0.0:
        return fu, 0.0
    lo, hi = 0.0, np.inf
    f = np.array(f0, dtype=float)
    if not cone_value(f, mu, eps) >= 0.0 or not np.all(np.isfinite(f)):
        f = np.array([0.0, 0.0, np.sqrt(eps) / mu])
    # first guess from linearizing the cone at the unconstrained point
    r = np.sqrt(fu[0] ** 2 + fu[1] ** 2 + eps)
    gc = np.array([-fu[0] / r, -fu[1] / r, mu])
    lam = -cone_value(fu, mu, eps) / (gc @ np.linalg.solve(A, gc))
    for _ in range(100):
        f = _lagrangian_newton(A, c, mu, eps, lam, f)
        phi = cone_value(f, mu, eps)
        if abs(phi) <= 1e-14 * (1.0 + mu * abs(f[2])):
            break
        if phi < 0.0:
            lo = lam
        else:
            hi = lam
        r = np.sqrt(f[0] * f[0] + f[1] * f[1] + eps)
        gc = np.array([-f[0] / r, -f[1] / r, mu])
        K = A.copy()
        w = lam / (r * r * r)
        K[0, 0] += w * (f[1] * f[1] + eps)
        K[1, 1] += w * (f[0] * f[0] + eps)
        K[0, 1] -= w * f[0] * f[1]
        K[1, 0] -= w * f[0] * f[1]
        dphi = gc @ np.linalg.solve(K, gc)
        lam_new = lam - phi / dphi
        if not lo < lam_new < hi:
            lam_new = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * lam + 1e-300
        if np.isfinite(hi) and hi - lo <= 1e-15 * hi:
            break
        lam = lam_new
    phi = cone_value(f, mu, eps)
    if phi < 0.0:
        f[2] -= phi / mu
    return f, lam


def pgs_sweep(H, b, mu, eps, order, f, lam, prox, floor):
    """One Gauss-Seidel sweep over contact blocks, updating ``f``, ``lam`` in place.

    Each block gets a proximal term ``prox * (tr(H_kk) / 3 + floor)``
    around its current value; it vanishes at a fixed point and keeps
    rank-deficient blocks well-posed.
    """
    for k in order:
        s = 3 * k
        A = H[s:s + 3, s:s + 3]
        fk = f[s:s + 3].copy()
        ck = b[s:s + 3] + H[s:s + 3] @ f - A @ fk
        delta = prox * ((A[0, 0] + A[1, 1] + A[2, 2]) / 3.0 + floor)
        Ad = A + delta * np.eye(3)
        fk_new, lk = block_solve(Ad, ck - delta * fk, mu[k], eps, fk)
        f[s:s + 3] = fk_new
        lam[k] = lk
