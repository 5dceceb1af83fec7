"""Contact-force estimation as a smoothed second-order cone program.

For fixed poses the forces ``f = [f_1, ..., f_m]`` (each in its contact
frame, ordered tangent 1, tangent 2, normal) solve::

    min_f  0.5 |gamma - P f|^2_{Sigma^-1} + 0.5 k0 |D_g^+ f|^2
    s.t.   c_k(f_k) = mu_k f_n - sqrt(f_t1^2 + f_t2^2 + eps) >= 0

i.e. ``min 0.5 f'Hf + b'f`` over a product of smoothed friction cones.
The solver is projected Gauss-Seidel with exact per-contact block
minimization, finished by a Newton step on the active-set KKT system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConvergenceError, IllConditionedError, InvalidArgumentError

log = logging.getLogger(__name__)


# ----------------------------------------------------------- contact frame

def contact_frame(normal) -> np.ndarray:
    """Right-handed frame with columns ``(t1, t2, n)``.

    ``t1`` is the Gram-Schmidt projection of the world x axis, or of the
    y axis when the normal is within ~25 degrees of x.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    seed = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = seed - (seed @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.column_stack([t1, t2, n])


def contact_frame_derivative(normal, dnormal) -> np.ndarray:
    """Derivative of :func:`contact_frame` along ``dnormal`` columns.

    ``normal`` must be unit length. ``dnormal`` is ``3 x k``; returns
    ``k x 3 x 3`` (one frame derivative per column).
    """
    n = np.asarray(normal, dtype=float)
    dN = np.asarray(dnormal, dtype=float).reshape(3, -1)
    seed = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = seed - (seed @ n) * n
    nu = np.linalg.norm(u)
    t1 = u / nu
    out = np.empty((dN.shape[1], 3, 3))
    for j in range(dN.shape[1]):
        dn = dN[:, j]
        du = -(seed @ dn) * n - (seed @ n) * dn
        dt1 = (du - t1 * (t1 @ du)) / nu
        dt2 = np.cross(dn, t1) + np.cross(n, dt1)
        out[j] = np.column_stack([dt1, dt2, dn])
    return out


# ------------------------------------------------------------------ stack

@dataclass(frozen=True)
class ContactStack:
    """Data of one low-level force problem.

    ``P`` is ``n_gamma x 3m`` (block ``k`` maps contact-frame force ``k``
    to measurement units); ``gaps``, ``mu`` are length ``m``.
    """

    P: np.ndarray
    gaps: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    Sigma: np.ndarray
    k0: float = 1e4
    eps: float = 1e-8
    _sigma_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        gaps = np.atleast_1d(np.asarray(self.gaps, dtype=float))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        m = gaps.shape[0]
        if gaps.ndim != 1 or m < 1:
            raise InvalidArgumentError("gaps must be a nonempty vector")
        if mu.shape == (1,) and m > 1:
            mu = np.full(m, mu[0])
        if mu.shape != (m,):
            raise InvalidArgumentError(f"mu has shape {mu.shape}, expected ({m},)")
        if P.shape != (gamma.shape[0], 3 * m):
            raise InvalidArgumentError(
                f"P has shape {P.shape}, expected ({gamma.shape[0]}, {3 * m})"
            )
        if Sigma.shape != (gamma.shape[0], gamma.shape[0]):
            raise InvalidArgumentError(f"Sigma has shape {Sigma.shape}, expected square of size {gamma.shape[0]}")
        if not np.allclose(Sigma, Sigma.T, rtol=1e-12, atol=0.0):
            raise InvalidArgumentError("Sigma must be symmetric")
        try:
            L = np.linalg.cholesky(Sigma)
        except np.linalg.LinAlgError as exc:
            raise InvalidArgumentError("Sigma must be positive definite") from exc
        if not np.all(mu > 0):
            raise InvalidArgumentError("friction coefficients must be positive (the smoothed cone is empty at mu = 0)")
        if not self.k0 > 0 or not self.eps > 0:
            raise InvalidArgumentError("k0 and eps must be positive")
        for name, arr in (("P", P), ("gaps", gaps), ("gamma", gamma)):
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"{name} contains non-finite values")
        Linv = np.linalg.inv(L)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "gaps", gaps)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "k0", float(self.k0))
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "_sigma_inv", Linv.T @ Linv)

    @property
    def m(self) -> int:
        return self.gaps.shape[0]

    @property
    def sigma_inv(self) -> np.ndarray:
        return self._sigma_inv

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(), "gaps": self.gaps.tolist(), "mu": self.mu.tolist(),
            "gamma": self.gamma.tolist(), "Sigma": self.Sigma.tolist(),
            "k0": self.k0, "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContactStack":
        gamma = np.asarray(data["gamma"], dtype=float)
        Sigma = data.get("Sigma", np.eye(gamma.shape[0]))
        return cls(
            P=data["P"], gaps=data["gaps"], mu=data["mu"], gamma=gamma, Sigma=Sigma,
            k0=data.get("k0", 1e4), eps=data.get("eps", 1e-8),
        )


def assemble(stack: ContactStack):
    """Return ``(H, b)`` of the quadratic cost ``0.5 f'Hf + b'f``."""
    if not isinstance(stack, ContactStack):
        raise InvalidArgumentError("expected a ContactStack")
    W = stack.sigma_inv
    H = stack.P.T @ W @ stack.P
    gp = np.maximum(stack.gaps, 0.0)
    H[np.diag_indices_from(H)] += stack.k0 * np.repeat(gp * gp, 3)
    H = 0.5 * (H + H.T)
    b = -stack.P.T @ (W @ stack.gamma)
    return H, b


# -------------------------------------------------------- smoothed cone

def cone_residual(f, mu: float, eps: float) -> float:
    """``mu f_n - sqrt(f_t1^2 + f_t2^2 + eps)``; nonnegative inside the cone."""
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    f = np.asarray(f, dtype=float)
    return float(mu * f[2] - np.sqrt(f[0] ** 2 + f[1] ** 2 + eps))


def cone_gradient(f, mu: float, eps: float) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    r = np.sqrt(f[0] ** 2 + f[1] ** 2 + eps)
    return np.array([-f[0] / r, -f[1] / r, mu])


def cone_hessian(f, mu: float, eps: float) -> np.ndarray:
    """Negative semidefinite Hessian; only the tangent block is nonzero."""
    f = np.asarray(f, dtype=float)
    r2 = f[0] ** 2 + f[1] ** 2 + eps
    r3 = r2 * np.sqrt(r2)
    out = np.zeros((3, 3))
    out[0, 0] = -(f[1] ** 2 + eps) / r3
    out[1, 1] = -(f[0] ** 2 + eps) / r3
    out[0, 1] = out[1, 0] = f[0] * f[1] / r3
    return out


def _cone_all(f, mu, eps):
    F = f.reshape(-1, 3)
    return mu * F[:, 2] - np.sqrt(F[:, 0] ** 2 + F[:, 1] ** 2 + eps)


def _cone_jacobian(f, mu, eps):
    m = mu.shape[0]
    Jc = np.zeros((m, 3 * m))
    for k in range(m):
        Jc[k, 3 * k:3 * k + 3] = cone_gradient(f[3 * k:3 * k + 3], mu[k], eps)
    return Jc


# ----------------------------------------------------------------- solve

@dataclass(frozen=True)
class ForceSolverOptions:
    max_sweeps: int = 500
    tolerance: float = 1e-10
    order: str = "forward"
    prox: float = 1e-10
    polish: bool = True
    active_band: float = 1e-7
    ridge: float = 0.0
    barrier_after: int = 100

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise InvalidArgumentError("max_sweeps must be at least 1")
        if not self.tolerance > 0:
            raise InvalidArgumentError("tolerance must be positive")
        if self.order not in ("forward", "reverse"):
            raise InvalidArgumentError("order must be 'forward' or 'reverse'")
        if self.ridge < 0:
            raise InvalidArgumentError("ridge must be nonnegative")


def _solver_matrices(stack, ridge):
    """``(H, b)`` plus ``ridge * I`` (absolute, in units of ``H``).

    With fewer measurements than force components ``H`` is singular and
    the minimizer need not be unique (two contacts can squeeze against
    each other without changing the measurement). A small ridge selects
    the least-force minimizer and makes the sensitivities well-defined.
    """
    H, b = assemble(stack)
    if ridge > 0.0:
        H[np.diag_indices_from(H)] += ridge
    return H, b


@dataclass(frozen=True)
class ForceSolution:
    forces: np.ndarray
    multipliers: np.ndarray
    cone_residuals: np.ndarray
    stationarity_residual: float
    complementarity_residual: float
    sweeps: int
    polished: bool = False
    ridge: float = 0.0
    method: str = "pgs"

    @property
    def m(self) -> int:
        return self.multipliers.shape[0]

    def force(self, k: int) -> np.ndarray:
        return self.forces[3 * k:3 * k + 3]

    def to_dict(self) -> dict:
        return {
            "forces": self.forces.tolist(),
            "multipliers": self.multipliers.tolist(),
            "cone_residuals": self.cone_residuals.tolist(),
            "stationarity": self.stationarity_residual,
            "complementarity": self.complementarity_residual,
            "sweeps": self.sweeps,
            "polished": self.polished,
            "method": self.method,
        }


def _active_mask(c, f, mu, band):
    F = f.reshape(-1, 3)
    return c < band * (1.0 + mu * np.linalg.norm(F, axis=1))


def _fit_multipliers(H, b, f, mu, eps, active):
    """Per-contact least-squares multipliers for the current ``f``."""
    g = H @ f + b
    lam = np.zeros(mu.shape[0])
    for k in np.flatnonzero(active):
        gk = g[3 * k:3 * k + 3]
        d = cone_gradient(f[3 * k:3 * k + 3], mu[k], eps)
        lam[k] = max(0.0, (d @ gk) / (d @ d))
    return lam


def _stationarity(H, b, f, lam, mu, eps):
    return float(np.linalg.norm(H @ f + b - _cone_jacobian(f, mu, eps).T @ lam))


def _newton_kkt(H, b, f, lam, mu, eps, idx, tol, max_iter=20):
    """Newton iterations on the KKT system with contacts ``idx`` binding.

    Returns ``(f, lam_idx)`` or ``None`` without convergence.
    """
    n = f.shape[0]
    na = idx.shape[0]
    f = f.copy()
    la = lam[idx].copy()
    bscale = 1.0 + np.linalg.norm(b)
    for _ in range(max_iter):
        Jc = _cone_jacobian(f, mu, eps)[idx]
        cA = _cone_all(f, mu, eps)[idx]
        r1 = H @ f + b - Jc.T @ la
        if np.linalg.norm(r1) <= 0.1 * tol * bscale and np.all(np.abs(cA) <= 1e-13 * (1.0 + np.abs(f).max())):
            return f, la
        K = np.zeros((n + na, n + na))
        K[:n, :n] = H
        for j, k in enumerate(idx):
            s = 3 * k
            K[s:s + 3, s:s + 3] -= la[j] * cone_hessian(f[s:s + 3], mu[k], eps)
        K[:n, n:] = -Jc.T
        K[n:, :n] = Jc
        rhs = -np.concatenate([r1, cA])
        try:
            step = np.linalg.solve(K, rhs)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(K, rhs, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return None
        f += step[:n]
        la += step[n:]
    return None


def _newton_polish(H, b, f, lam, mu, eps, active, tol):
    """Primal-dual active-set refinement of a PGS iterate.

    Starting from the binding set ``active``, solve the equality KKT
    system by Newton; drop the most negative multiplier or add the most
    violated slack contact and repeat. Returns ``(f, lam)`` for a
    verified KKT point, else ``None``.
    """
    m = mu.shape[0]
    active = active.copy()
    bscale = 1.0 + np.linalg.norm(b)
    lam = lam.copy()
    for _ in range(2 * m + 2):
        idx = np.flatnonzero(active)
        out = _newton_kkt(H, b, f, lam, mu, eps, idx, tol)
        if out is None:
            return None
        fn, la = out
        c = _cone_all(fn, mu, eps)
        slack = np.flatnonzero(~active)
        if la.size and la.min() < 0.0:
            active[idx[np.argmin(la)]] = False
            lam[idx] = np.maximum(la, 0.0)
            continue
        if slack.size and c[slack].min() < 0.0:
            active[slack[np.argmin(c[slack])]] = True
            continue
        lam_out = np.zeros(m)
        lam_out[idx] = la
        # exact feasibility on binding contacts by lifting along the normal
        for k in idx:
            if c[k] < 0.0:
                fn[3 * k + 2] -= c[k] / mu[k]
        if _stationarity(H, b, fn, lam_out, mu, eps) > tol * bscale:
            return None
        return fn, lam_out
    return None


def _finish(H, b, f, lam, mu, eps, sweeps, polished, ridge, method=None):
    c = _cone_all(f, mu, eps)
    return ForceSolution(
        forces=f, multipliers=lam, cone_residuals=c,
        stationarity_residual=_stationarity(H, b, f, lam, mu, eps),
        complementarity_residual=float(np.max(lam * np.abs(c))),
        sweeps=sweeps, polished=polished, ridge=ridge,
        method=method or ("pgs+newton" if polished else "pgs"),
    )


BARRIER_SLACK = 100.0


def _barrier_fallback(H, b, mu, eps, target, sweeps, ridge):
    out = _barrier_solve(H, b, mu, eps, target)
    if out is None:
        return None
    sol = _finish(H, b, out[0], out[1], mu, eps, sweeps, False, ridge, "barrier")
    # the barrier Newton matrix degrades like 1/t near the end of the path,
    # so stationarity is only verified to BARRIER_SLACK times the target
    if sol.stationarity_residual <= BARRIER_SLACK * target and sol.complementarity_residual <= target:
        return sol
    return None


def _barrier_solve(H, b, mu, eps, target, shrink=0.2, max_newton=60):
    """Log-barrier Newton path for stacks where the sweeps stall.

    Minimizes ``0.5 f'Hf + b'f - t sum log c_k(f)`` for decreasing ``t``
    until ``t`` (the complementarity ``lam_k c_k`` of every contact) is
    below ``target``. The barrier keeps the Newton matrix positive
    definite even when ``H`` is singular, and when the minimizer is not
    unique it returns the point nearest the analytic center of the
    optimal face. Returns ``(f, lam)`` or ``None``.
    """
    m = mu.shape[0]
    dscale = max(float(np.mean(np.diag(H))), 1e-300)
    fscale = 1.0 + np.linalg.norm(b) / dscale
    f = np.zeros(3 * m)
    f[2::3] = (np.sqrt(eps) + 0.1 * fscale) / mu
    t = 0.1 * fscale * (1.0 + np.linalg.norm(b))

    def phi(x, t):
        c = _cone_all(x, mu, eps)
        if np.any(c <= 0.0):
            return np.inf
        return 0.5 * x @ H @ x + b @ x - t * np.sum(np.log(c))

    while True:
        for _ in range(max_newton):
            c = _cone_all(f, mu, eps)
            Jc = _cone_jacobian(f, mu, eps)
            w = t / c
            g = H @ f + b - Jc.T @ w
            K = H + Jc.T @ ((w / c)[:, None] * Jc)
            for k in range(m):
                s = 3 * k
                K[s:s + 3, s:s + 3] -= w[k] * cone_hessian(f[s:s + 3], mu[k], eps)
            try:
                d = -np.linalg.solve(K, g)
            except np.linalg.LinAlgError:
                d = -np.linalg.lstsq(K, g, rcond=None)[0]
            dec = -(g @ d)
            if not np.isfinite(dec):
                return None
            if dec <= 1e-30 * (1.0 + abs(phi(f, t))) or np.linalg.norm(g) <= 0.1 * target:
                break
            a = 1.0
            f0 = phi(f, t)
            while a > 1e-12:
                fn = f + a * d
                v = phi(fn, t)
                if v <= f0 - 1e-4 * a * dec:
                    break
                a *= 0.5
            else:
                break
            f = fn
        if t <= 0.1 * target:
            c = _cone_all(f, mu, eps)
            return f, t / c
        t = max(t * shrink, 0.05 * target)


def solve(stack: ContactStack, options: ForceSolverOptions | None = None, warm_start=None) -> ForceSolution:
    """Projected Gauss-Seidel with exact block solves and a Newton finish.

    Sweeps run in the order given by ``options.order``. After each sweep
    the multipliers are refit to the current forces; the run stops once
    the stationarity and complementarity residuals are both below
    ``tolerance * (1 + |b|)``. When
    the binding set has not changed for two sweeps a Newton step on its
    KKT system is tried (after 1, 2, 4, ... stable sweeps) and kept only if it
    verifies. If the sweeps have not converged after
    ``options.barrier_after`` sweeps, a log-barrier Newton solve is tried
    and returned when it verifies; otherwise sweeping continues.
    """
    opts = options or ForceSolverOptions()
    H, b = _solver_matrices(stack, opts.ridge)
    mu, eps = stack.mu, stack.eps
    m = stack.m
    order = np.arange(m) if opts.order == "forward" else np.arange(m)[::-1].copy()
    if warm_start is not None:
        f = np.array(warm_start, dtype=float).reshape(3 * m)
    else:
        f = np.zeros(3 * m)
        f[2::3] = np.sqrt(eps) / mu
    lam = np.zeros(m)
    floor = 1e-6 * max(float(np.mean(np.diag(H))), 1e-300)
    target = opts.tolerance * (1.0 + np.linalg.norm(b))
    prev_active = None
    stable = 0
    best = None
    for sweep in range(1, opts.max_sweeps + 1):
        kernels.pgs_sweep(H, b, mu, eps, order, f, lam, opts.prox, floor)
        c = _cone_all(f, mu, eps)
        active = _active_mask(c, f, mu, opts.active_band)
        lam_fit = _fit_multipliers(H, b, f, mu, eps, active)
        stat = _stationarity(H, b, f, lam_fit, mu, eps)
        if best is None or stat < best[0]:
            best = (stat, f.copy(), lam_fit.copy(), sweep)
        comp = float(np.max(lam_fit * np.abs(c)))
        if stat <= target and comp <= target:
            return _finish(H, b, f, lam_fit, mu, eps, sweep, False, opts.ridge)
        stable = stable + 1 if prev_active is not None and np.array_equal(active, prev_active) else 0
        prev_active = active
        if opts.polish and stable >= 1 and stable & (stable - 1) == 0:
            out = _newton_polish(H, b, f, lam_fit, mu, eps, active, opts.tolerance)
            if out is not None:
                return _finish(H, b, out[0], out[1], mu, eps, sweep, True, opts.ridge)
        if sweep == opts.barrier_after:
            sol = _barrier_fallback(H, b, mu, eps, target, sweep, opts.ridge)
            if sol is not None:
                return sol
    stat, fb, lb, sw = best
    sol = _finish(H, b, fb, lb, mu, eps, opts.max_sweeps, False, opts.ridge)
    raise ConvergenceError(
        f"force solver stationarity {stat:.3e} above {target:.3e} after {opts.max_sweeps} sweeps",
        best=sol, iterations=opts.max_sweeps,
    )


def kkt_residuals(solution: ForceSolution, stack: ContactStack):
    """``(stationarity, complementarity, feasibility)`` of a solution.

    Stationarity is ``|Hf + b - J_c' lam|``, complementarity
    ``max_k lam_k c_k`` and feasibility ``max(0, -min_k c_k)``. ``H``
    includes the ridge the solution was computed with.
    """
    H, b = _solver_matrices(stack, solution.ridge)
    f = np.asarray(solution.forces, dtype=float)
    lam = np.asarray(solution.multipliers, dtype=float)
    c = _cone_all(f, stack.mu, stack.eps)
    stat = _stationarity(H, b, f, lam, stack.mu, stack.eps)
    comp = float(np.max(lam * c))
    feas = float(max(0.0, -c.min()))
    return stat, comp, feas


# ------------------------------------------------------------ sensitivity

@dataclass(frozen=True)
class StackDerivatives:
    """Parameter derivatives of a stack: ``dP`` is ``n_xi x n_gamma x 3m``,
    ``dgaps`` is ``m x n_xi`` and ``dgamma`` is ``n_gamma x n_xi``."""

    dP: np.ndarray
    dgaps: np.ndarray
    dgamma: np.ndarray | None = None

    @property
    def n_params(self) -> int:
        return self.dP.shape[0]


@dataclass(frozen=True)
class ForceSensitivity:
    dforces: np.ndarray
    dmultipliers: np.ndarray
    active: np.ndarray
    fallback_used: bool
    condition: float


def cost_derivative_terms(solution: ForceSolution, stack: ContactStack, deriv: StackDerivatives):
    """Columns of ``(dH/dxi) f* + db/dxi`` (``3m x n_xi``)."""
    f = solution.forces
    W = stack.sigma_inv
    P = stack.P
    Pf = P @ f
    resid = W @ (Pf - stack.gamma)
    gp = np.maximum(stack.gaps, 0.0)
    out = np.empty((3 * stack.m, deriv.n_params))
    for i in range(deriv.n_params):
        dP = deriv.dP[i]
        # d(P'W(Pf - gamma)) with f held fixed
        col = dP.T @ resid + P.T @ (W @ (dP @ f))
        col += stack.k0 * np.repeat(2.0 * gp * deriv.dgaps[:, i], 3) * f
        if deriv.dgamma is not None:
            col -= P.T @ (W @ deriv.dgamma[:, i])
        out[:, i] = col
    return out


def differentiate(solution: ForceSolution, stack: ContactStack, deriv: StackDerivatives,
                  active_band: float = 1e-7, cond_limit: float = 1e12) -> ForceSensitivity:
    """Solution sensitivity by implicit differentiation of the KKT system.

    Binding contacts keep their multiplier as an unknown and contribute
    the row ``lam_k J_k df = 0``; slack contacts have zero multiplier
    derivative. A singular system (a binding contact with zero
    multiplier, say) is solved in the least-squares sense.
    """
    H, b = _solver_matrices(stack, solution.ridge)
    mu, eps = stack.mu, stack.eps
    f, lam = solution.forces, solution.multipliers
    m = stack.m
    n = 3 * m
    c = _cone_all(f, mu, eps)
    active = _active_mask(c, f, mu, active_band)
    idx = np.flatnonzero(active)
    na = idx.shape[0]
    K = np.zeros((n + na, n + na))
    K[:n, :n] = H
    Jc = _cone_jacobian(f, mu, eps)
    for k in idx:
        s = 3 * k
        K[s:s + 3, s:s + 3] -= lam[k] * cone_hessian(f[s:s + 3], mu[k], eps)
    K[:n, n:] = -Jc[idx].T
    K[n:, :n] = lam[idx, None] * Jc[idx]
    rhs = np.zeros((n + na, deriv.n_params))
    rhs[:n] = -cost_derivative_terms(solution, stack, deriv)
    cond = float(np.linalg.cond(K)) if K.size else 1.0
    fallback = not np.isfinite(cond) or cond > cond_limit
    if fallback:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        resid = np.linalg.norm(K @ sol - rhs)
        if not np.all(np.isfinite(sol)) or resid > 1e-6 * (1.0 + np.linalg.norm(rhs)):
            raise IllConditionedError(
                f"force sensitivity system is inconsistent (condition {cond:.3e})", cond,
            )
        log.debug("force sensitivity used least squares (condition %.3e)", cond)
    else:
        sol = np.linalg.solve(K, rhs)
    dlam = np.zeros((m, deriv.n_params))
    dlam[idx] = sol[n:]
    return ForceSensitivity(
        dforces=sol[:n], dmultipliers=dlam, active=active, fallback_used=fallback, condition=cond,
    )
