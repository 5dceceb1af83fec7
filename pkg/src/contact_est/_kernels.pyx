# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of ``_kernels_py``: support calculus, growth solve, PGS."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow, fabs

cnp.import_array()

BACKEND = "compiled"


cdef void _support(const double[:, ::1] V, double p, const double* x,
                   double* h, double* s, double* D) noexcept nogil:
    # h, s (3) and D (3x3 row-major) at x (any nonzero length)
    cdef Py_ssize_t n = V.shape[0], k
    cdef double nx = sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    cdef double u0 = x[0] / nx, u1 = x[1] / nx, u2 = x[2] / nx
    cdef double a, amax = 0.0, b, bp2, bp1, B = 0.0, Bq, c, t
    cdef double sv0 = 0.0, sv1 = 0.0, sv2 = 0.0
    cdef double M[6]
    cdef double r0, r1, r2
    cdef int i
    for i in range(6):
        M[i] = 0.0
    for k in range(n):
        a = V[k, 0] * u0 + V[k, 1] * u1 + V[k, 2] * u2
        if a > amax:
            amax = a
    for k in range(n):
        a = V[k, 0] * u0 + V[k, 1] * u1 + V[k, 2] * u2
        if a <= 0.0:
            continue
        b = a / amax
        bp1 = pow(b, p - 1.0)
        B += bp1 * b
        sv0 += bp1 * V[k, 0]
        sv1 += bp1 * V[k, 1]
        sv2 += bp1 * V[k, 2]
    Bq = pow(B, 1.0 / p - 1.0)
    h[0] = amax * B * Bq * nx
    s[0] = Bq * sv0
    s[1] = Bq * sv1
    s[2] = Bq * sv2
    # D = c Bq sum_k b_k^(p-2) r_k r_k' with r_k = v_k - (b_k / B) sv:
    # a sum of PSD terms, so no cancellation between large quantities
    for k in range(n):
        a = V[k, 0] * u0 + V[k, 1] * u1 + V[k, 2] * u2
        if a <= 0.0:
            continue
        b = a / amax
        bp2 = pow(b, p - 2.0)
        t = b / B
        r0 = V[k, 0] - t * sv0
        r1 = V[k, 1] - t * sv1
        r2 = V[k, 2] - t * sv2
        M[0] += bp2 * r0 * r0
        M[1] += bp2 * r0 * r1
        M[2] += bp2 * r0 * r2
        M[3] += bp2 * r1 * r1
        M[4] += bp2 * r1 * r2
        M[5] += bp2 * r2 * r2
    c = (p - 1.0) / (amax * nx) * Bq
    D[0] = c * M[0]
    D[1] = D[3] = c * M[1]
    D[2] = D[6] = c * M[2]
    D[4] = c * M[3]
    D[5] = D[7] = c * M[4]
    D[8] = c * M[5]


cdef void _rot_t(const double[:, ::1] R, const double* x, double* out) noexcept nogil:
    # out = R^T x
    cdef int i
    for i in range(3):
        out[i] = R[0, i] * x[0] + R[1, i] * x[1] + R[2, i] * x[2]


cdef void _rot(const double[:, ::1] R, const double* x, double* out) noexcept nogil:
    cdef int i
    for i in range(3):
        out[i] = R[i, 0] * x[0] + R[i, 1] * x[1] + R[i, 2] * x[2]


cdef void _conj(const double[:, ::1] R, const double* D, double* out) noexcept nogil:
    # out = R D R^T
    cdef double T[9]
    cdef int i, j, k
    cdef double acc
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += R[i, k] * D[3 * k + j]
            T[3 * i + j] = acc
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += T[3 * i + k] * R[j, k]
            out[3 * i + j] = acc


cdef void _pair(const double[:, ::1] Vi, double pi, const double[:, ::1] Ri,
                const double[:, ::1] Vj, double pj, const double[:, ::1] Rj,
                const double* x, double* hi, double* ri, double* Di,
                double* hj, double* rj, double* Dj) noexcept nogil:
    cdef double xl[3]
    cdef double s[3]
    cdef double D[9]
    _rot_t(Ri, x, xl)
    _support(Vi, pi, xl, hi, s, D)
    _rot(Ri, s, ri)
    _conj(Ri, D, Di)
    _rot_t(Rj, x, xl)
    xl[0] = -xl[0]
    xl[1] = -xl[1]
    xl[2] = -xl[2]
    _support(Vj, pj, xl, hj, s, D)
    _rot(Rj, s, rj)
    _conj(Rj, D, Dj)


def support_eval(const double[:, ::1] V, double p, x):
    """Return ``(h, s, ds/dx)`` of the body-frame support function at ``x``."""
    cdef double xv[3]
    cdef double h
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = np.empty(3)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] D = np.empty((3, 3))
    xv[0] = x[0]
    xv[1] = x[1]
    xv[2] = x[2]
    _support(V, p, xv, &h, <double*> s.data, <double*> D.data)
    return h, s, D


def pair_eval(const double[:, ::1] Vi, double pi, const double[:, ::1] Ri,
              const double[:, ::1] Vj, double pj, const double[:, ::1] Rj, x):
    """World-frame support data for a body pair; see the numpy twin."""
    cdef double xv[3]
    cdef double hi, hj
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ri = np.empty(3)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rj = np.empty(3)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Di = np.empty((3, 3))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Dj = np.empty((3, 3))
    xv[0] = x[0]
    xv[1] = x[1]
    xv[2] = x[2]
    _pair(Vi, pi, Ri, Vj, pj, Rj, xv, &hi, <double*> ri.data, <double*> Di.data,
          &hj, <double*> rj.data, <double*> Dj.data)
    return hi, ri, Di, hj, rj, Dj


# ------------------------------------------------------------ growth solve

cdef double _residual(const double[:, ::1] Vi, double pi, const double[:, ::1] Ri, const double* ti,
                      const double[:, ::1] Vj, double pj, const double[:, ::1] Rj, const double* tj,
                      const double* x, double sigma, double* F, double* J, double* y) noexcept nogil:
    # fills F (4), J (4x4 row-major), y (3); returns |F|
    cdef double hi, hj
    cdef double ri[3]
    cdef double rj[3]
    cdef double Di[9]
    cdef double Dj[9]
    cdef int a, b
    _pair(Vi, pi, Ri, Vj, pj, Rj, x, &hi, ri, Di, &hj, rj, Dj)
    for a in range(3):
        y[a] = ri[a] - rj[a]
        F[a] = sigma * y[a] + (ti[a] - tj[a])
        for b in range(3):
            J[4 * a + b] = sigma * (Di[3 * a + b] + Dj[3 * a + b])
        J[4 * a + 3] = y[a]
        J[12 + a] = 2.0 * x[a]
    J[15] = 0.0
    F[3] = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] - 1.0
    return sqrt(F[0] * F[0] + F[1] * F[1] + F[2] * F[2] + F[3] * F[3])


cdef int _solve4(const double* J, const double* rhs, double* out) noexcept nogil:
    # Gaussian elimination with partial pivoting; returns 0 if singular
    cdef double A[4][5]
    cdef int i, j, k, piv
    cdef double m, t
    for i in range(4):
        for j in range(4):
            A[i][j] = J[4 * i + j]
        A[i][4] = rhs[i]
    for k in range(4):
        piv = k
        for i in range(k + 1, 4):
            if fabs(A[i][k]) > fabs(A[piv][k]):
                piv = i
        if A[piv][k] == 0.0:
            return 0
        if piv != k:
            for j in range(5):
                t = A[k][j]
                A[k][j] = A[piv][j]
                A[piv][j] = t
        for i in range(k + 1, 4):
            m = A[i][k] / A[k][k]
            for j in range(k, 5):
                A[i][j] -= m * A[k][j]
    for i in range(3, -1, -1):
        t = A[i][4]
        for j in range(i + 1, 4):
            t -= A[i][j] * out[j]
        out[i] = t / A[i][i]
    return 1


cdef void _dogleg(const double* F, const double* J, double radius, double* step) noexcept nogil:
    cdef double g[4]
    cdef double Jg[4]
    cdef double gn[4]
    cdef double d[4]
    cdef double gg = 0.0, jgjg = 0.0, ngn = 0.0, nca = 0.0, coef, a, b, c, tau
    cdef int i, j
    for i in range(4):
        g[i] = 0.0
        for j in range(4):
            g[i] += J[4 * j + i] * F[j]
        gg += g[i] * g[i]
    if not _solve4(J, F, gn):
        if gg == 0.0:
            for i in range(4):
                step[i] = 0.0
            return
        coef = -radius / sqrt(gg)
        for i in range(4):
            step[i] = coef * g[i]
        return
    for i in range(4):
        gn[i] = -gn[i]
        ngn += gn[i] * gn[i]
    ngn = sqrt(ngn)
    if ngn <= radius:
        for i in range(4):
            step[i] = gn[i]
        return
    if gg == 0.0:
        for i in range(4):
            step[i] = gn[i] * (radius / ngn)
        return
    for i in range(4):
        Jg[i] = 0.0
        for j in range(4):
            Jg[i] += J[4 * i + j] * g[j]
        jgjg += Jg[i] * Jg[i]
    coef = -gg / jgjg
    for i in range(4):
        step[i] = coef * g[i]
        nca += step[i] * step[i]
    nca = sqrt(nca)
    if nca >= radius:
        for i in range(4):
            step[i] *= radius / nca
        return
    a = 0.0
    b = 0.0
    for i in range(4):
        d[i] = gn[i] - step[i]
        a += d[i] * d[i]
        b += step[i] * d[i]
    b *= 2.0
    c = nca * nca - radius * radius
    tau = (-b + sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    for i in range(4):
        step[i] += tau * d[i]


def dogleg_step(F, J, double radius):
    """Dogleg step for ``J dz = -F`` inside a ball of ``radius``."""
    cdef double[::1] Fv = np.ascontiguousarray(F, dtype=float)
    cdef double[:, ::1] Jv = np.ascontiguousarray(J, dtype=float)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(4)
    _dogleg(&Fv[0], &Jv[0, 0], radius, <double*> out.data)
    return out


def growth_solve(const double[:, ::1] Vi, double pi, const double[:, ::1] Ri, const double[::1] ti,
                 const double[:, ::1] Vj, double pj, const double[:, ::1] Rj, const double[::1] tj,
                 x0, double sigma0, double tol, int max_iter,
                 double radius0, double rmin, double rmax, double accept, double expand,
                 double shrink, double fexpand, double fshrink):
    """Trust-region dogleg on the growth residual; see the numpy twin."""
    cdef double x[3]
    cdef double xn[3]
    cdef double F[4]
    cdef double J[16]
    cdef double Fn[4]
    cdef double Jn[16]
    cdef double Ff[4]
    cdef double Jf[16]
    cdef double y[3]
    cdef double yf[3]
    cdef double step[4]
    cdef double dp[3]
    cdef double sigma = sigma0, sn, sfit, fnorm, fn_new, ffit, nn, pred, actual, ratio, snorm, t, radius = radius0
    cdef double ydp, yy
    cdef int it = 0, i, j
    for i in range(3):
        x[i] = x0[i]
        dp[i] = ti[i] - tj[i]
    with nogil:
        fnorm = _residual(Vi, pi, Ri, &ti[0], Vj, pj, Rj, &tj[0], x, sigma, F, J, y)
        while fnorm > tol and it < max_iter:
            it += 1
            _dogleg(F, J, radius, step)
            nn = 0.0
            for i in range(3):
                xn[i] = x[i] + step[i]
                nn += xn[i] * xn[i]
            if nn < 1e-16:
                radius = max(rmin, fshrink * radius)
                continue
            nn = sqrt(nn)
            for i in range(3):
                xn[i] /= nn
            sn = sigma + step[3]
            fn_new = _residual(Vi, pi, Ri, &ti[0], Vj, pj, Rj, &tj[0], xn, sn, Fn, Jn, y)
            ydp = y[0] * dp[0] + y[1] * dp[1] + y[2] * dp[2]
            yy = y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
            sfit = -ydp / yy
            if sfit > 0.0:
                ffit = _residual(Vi, pi, Ri, &ti[0], Vj, pj, Rj, &tj[0], xn, sfit, Ff, Jf, yf)
                if ffit < fn_new:
                    sn = sfit
                    fn_new = ffit
                    for i in range(4):
                        Fn[i] = Ff[i]
                    for i in range(16):
                        Jn[i] = Jf[i]
            pred = 0.0
            snorm = 0.0
            for i in range(4):
                t = F[i]
                for j in range(4):
                    t += J[4 * i + j] * step[j]
                pred += t * t
                snorm += step[i] * step[i]
            pred = 0.5 * (fnorm * fnorm - pred)
            snorm = sqrt(snorm)
            actual = 0.5 * (fnorm * fnorm - fn_new * fn_new)
            if pred > 0.0:
                ratio = actual / pred
            elif actual > 0.0:
                ratio = 1.0
            else:
                ratio = -1.0
            if ratio < shrink:
                radius = max(rmin, fshrink * snorm)
            elif ratio > expand:
                radius = min(rmax, max(radius, fexpand * snorm))
            if ratio > accept or (fn_new < fnorm and fn_new <= tol):
                for i in range(3):
                    x[i] = xn[i]
                sigma = sn
                fnorm = fn_new
                for i in range(4):
                    F[i] = Fn[i]
                for i in range(16):
                    J[i] = Jn[i]
    return np.array([x[0], x[1], x[2]]), sigma, fnorm, it


# ------------------------------------------------------------------ PGS

cdef inline double _cone(const double* f, double mu, double eps) noexcept nogil:
    return mu * f[2] - sqrt(f[0] * f[0] + f[1] * f[1] + eps)


cdef int _solve3(const double* A, const double* rhs, double* out) noexcept nogil:
    # Gaussian elimination with partial pivoting on a 3x3 system
    cdef double M[3][4]
    cdef int i, j, k, piv
    cdef double m, t
    for i in range(3):
        for j in range(3):
            M[i][j] = A[3 * i + j]
        M[i][3] = rhs[i]
    for k in range(3):
        piv = k
        for i in range(k + 1, 3):
            if fabs(M[i][k]) > fabs(M[piv][k]):
                piv = i
        if M[piv][k] == 0.0:
            return 0
        if piv != k:
            for j in range(4):
                t = M[k][j]
                M[k][j] = M[piv][j]
                M[piv][j] = t
        for i in range(k + 1, 3):
            m = M[i][k] / M[k][k]
            for j in range(k, 4):
                M[i][j] -= m * M[k][j]
    for i in range(2, -1, -1):
        t = M[i][3]
        for j in range(i + 1, 3):
            t -= M[i][j] * out[j]
        out[i] = t / M[i][i]
    return 1


cdef inline double _quad(const double* A, const double* c, const double* f) noexcept nogil:
    cdef double acc = 0.0
    cdef int i, j
    for i in range(3):
        acc += c[i] * f[i]
        for j in range(3):
            acc += 0.5 * f[i] * A[3 * i + j] * f[j]
    return acc


cdef void _lag_hess(const double* A, double lam, const double* f, double eps, double* K) noexcept nogil:
    cdef double r2 = f[0] * f[0] + f[1] * f[1] + eps
    cdef double w = lam / (r2 * sqrt(r2))
    cdef int i
    for i in range(9):
        K[i] = A[i]
    K[0] += w * (f[1] * f[1] + eps)
    K[4] += w * (f[0] * f[0] + eps)
    K[1] -= w * f[0] * f[1]
    K[3] -= w * f[0] * f[1]


cdef void _lag_newton(const double* A, const double* c, double mu, double eps, double lam,
                      double* f) noexcept nogil:
    cdef double g[3]
    cdef double d[3]
    cdef double fn[3]
    cdef double K[9]
    cdef double r, scale, gmax, amax, fmax, cmax, L0, Ln, slope, t, smax
    cdef int it, i, j
    amax = 0.0
    cmax = 0.0
    for i in range(9):
        if fabs(A[i]) > amax:
            amax = fabs(A[i])
    for i in range(3):
        if fabs(c[i]) > cmax:
            cmax = fabs(c[i])
    for it in range(60):
        r = sqrt(f[0] * f[0] + f[1] * f[1] + eps)
        for i in range(3):
            g[i] = c[i]
            for j in range(3):
                g[i] += A[3 * i + j] * f[j]
        g[0] += lam * f[0] / r
        g[1] += lam * f[1] / r
        g[2] -= lam * mu
        fmax = 0.0
        gmax = 0.0
        for i in range(3):
            if fabs(f[i]) > fmax:
                fmax = fabs(f[i])
            if fabs(g[i]) > gmax:
                gmax = fabs(g[i])
        scale = amax * (fmax + 1.0) + cmax + lam * (mu + 1.0)
        if gmax <= 1e-15 * scale:
            break
        _lag_hess(A, lam, f, eps, K)
        if not _solve3(K, g, d):
            break
        for i in range(3):
            d[i] = -d[i]
        L0 = _quad(A, c, f) - lam * _cone(f, mu, eps)
        slope = g[0] * d[0] + g[1] * d[1] + g[2] * d[2]
        t = 1.0
        while t > 1e-12:
            for i in range(3):
                fn[i] = f[i] + t * d[i]
            Ln = _quad(A, c, fn) - lam * _cone(fn, mu, eps)
            if Ln <= L0 + 1e-4 * t * slope:
                break
            t *= 0.5
        smax = 0.0
        for i in range(3):
            f[i] = f[i] + t * d[i]
            if fabs(t * d[i]) > smax:
                smax = fabs(t * d[i])
        fmax = 0.0
        for i in range(3):
            if fabs(f[i]) > fmax:
                fmax = fabs(f[i])
        if smax <= 1e-16 * (fmax + 1e-300):
            break


cdef double _block(const double* A, const double* c, double mu, double eps, double* f) noexcept nogil:
    # f holds the warm start on entry and the minimizer on exit; returns lam
    cdef double fu[3]
    cdef double gc[3]
    cdef double w[3]
    cdef double K[9]
    cdef double negc[3]
    cdef double lo = 0.0, hi = 0.0, lam, phi, r, dphi, lam_new
    cdef int have_hi = 0, it, i
    for i in range(3):
        negc[i] = -c[i]
    _solve3(A, negc, fu)
    if _cone(fu, mu, eps) >= 0.0:
        for i in range(3):
            f[i] = fu[i]
        return 0.0
    if not _cone(f, mu, eps) >= 0.0:
        f[0] = 0.0
        f[1] = 0.0
        f[2] = sqrt(eps) / mu
    r = sqrt(fu[0] * fu[0] + fu[1] * fu[1] + eps)
    gc[0] = -fu[0] / r
    gc[1] = -fu[1] / r
    gc[2] = mu
    _solve3(A, gc, w)
    lam = -_cone(fu, mu, eps) / (gc[0] * w[0] + gc[1] * w[1] + gc[2] * w[2])
    for it in range(100):
        _lag_newton(A, c, mu, eps, lam, f)
        phi = _cone(f, mu, eps)
        if fabs(phi) <= 1e-14 * (1.0 + mu * fabs(f[2])):
            break
        if phi < 0.0:
            lo = lam
        else:
            hi = lam
            have_hi = 1
        r = sqrt(f[0] * f[0] + f[1] * f[1] + eps)
        gc[0] = -f[0] / r
        gc[1] = -f[1] / r
        gc[2] = mu
        _lag_hess(A, lam, f, eps, K)
        _solve3(K, gc, w)
        dphi = gc[0] * w[0] + gc[1] * w[1] + gc[2] * w[2]
        lam_new = lam - phi / dphi
        if not (lam_new > lo and (not have_hi or lam_new < hi)):
            if have_hi:
                lam_new = 0.5 * (lo + hi)
            else:
                lam_new = 2.0 * lam + 1e-300
        if have_hi and hi - lo <= 1e-15 * hi:
            break
        lam = lam_new
    phi = _cone(f, mu, eps)
    if phi < 0.0:
        f[2] -= phi / mu
    return lam


def cone_value(f, double mu, double eps):
    return mu * f[2] - sqrt(f[0] * f[0] + f[1] * f[1] + eps)


def block_solve(A, c, double mu, double eps, f0):
    """Exact minimizer of ``0.5 f'Af + c'f`` over the smoothed cone."""
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=float)
    cdef double[::1] cv = np.ascontiguousarray(c, dtype=float)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] f = np.array(f0, dtype=float)
    cdef double lam = _block(&Av[0, 0], &cv[0], mu, eps, <double*> f.data)
    return f, lam


def pgs_sweep(const double[:, ::1] H, const double[::1] b, const double[::1] mu, double eps,
              const long[::1] order, double[::1] f, double[::1] lam, double prox, double floor):
    """One Gauss-Seidel sweep over contact blocks; see the numpy twin."""
    cdef Py_ssize_t n = f.shape[0], m = order.shape[0], q, s, i, j, col
    cdef long k
    cdef double A[9]
    cdef double c[3]
    cdef double fk[3]
    cdef double delta, acc
    with nogil:
        for q in range(m):
            k = order[q]
            s = 3 * k
            for i in range(3):
                for j in range(3):
                    A[3 * i + j] = H[s + i, s + j]
                fk[i] = f[s + i]
            delta = prox * ((A[0] + A[4] + A[8]) / 3.0 + floor)
            for i in range(3):
                acc = b[s + i]
                for col in range(n):
                    if col < s or col >= s + 3:
                        acc += H[s + i, col] * f[col]
                c[i] = acc - delta * fk[i]
                A[4 * i] += delta
            lam[k] = _block(A, c, mu[k], eps, fk)
            for i in range(3):
                f[s + i] = fk[i]
