"""Pure numpy kernels of the semi-global step (fallback implementation)."""
from __future__ import annotations

from math import factorial

import numpy as np

SERIES_LIMIT = 8.0


def fm_scalar(z, t, m):
    """f_m(z, t) = (e^{zt} - sum_{j<m} (zt)^j / j!) / z^m, stable near z t = 0."""
    z = np.asarray(z, complex)
    t = np.asarray(t, float)
    zt = z * t
    out = np.empty(np.broadcast(z, t).shape, complex)
    small = np.abs(zt) < 4.0 + m / 2.0
    zb, tb, ztb = np.broadcast_arrays(z, t, zt)
    if np.any(small):
        x = ztb[small]
        term = np.ones_like(x) / factorial(m)
        acc = term.copy()
        for j in range(1, 120):
            term = term * x / (j + m)
            acc = acc + term
            if np.all(np.abs(term) <= 1e-18 * np.abs(acc)):
                break
        out[small] = acc * tb[small] ** m
    big = ~small
    if np.any(big):
        x = ztb[big]
        poly = sum(x**j / factorial(j) for j in range(m))
        out[big] = (np.exp(x) - poly) / zb[big] ** m
    return out


def taylor_weights(times, m):
    """w[t, n] = t^n / n! for n < m."""
    times = np.asarray(times, float)
    n = np.arange(m)
    fact = np.array([factorial(i) for i in range(m)], float)
    return times[:, None] ** n[None, :] / fact[None, :]


def arnoldi(op, v, k):
    """Batched Arnoldi: one Krylov space per column of ``v``.

    Returns (Q, H, beta) with Q of shape (k, n, ncol), H (ncol, k, k).
    Lucky breakdown leaves the remaining basis vectors at zero, which keeps
    f(H) e1 confined to the invariant block.
    """
    n, ncol = v.shape
    beta = np.linalg.norm(v, axis=0)
    safe = np.where(beta > 0, beta, 1.0)
    q = np.zeros((k, n, ncol), complex)
    h = np.zeros((ncol, k, k), complex)
    q[0] = v / safe
    for j in range(k):
        w = op @ q[j]
        for _ in range(2):
            coef = np.einsum("inc,nc->ic", q[: j + 1].conj(), w)
            w = w - np.einsum("ic,inc->nc", coef, q[: j + 1])
            h[:, : j + 1, j] += coef.T
        if j + 1 < k:
            hn = np.linalg.norm(w, axis=0)
            ok = hn > 1e-13 * np.maximum(beta, 1e-300)
            h[:, j + 1, j] = np.where(ok, hn, 0.0)
            q[j + 1] = np.where(ok, w / np.where(ok, hn, 1.0), 0.0)
    return q, h, beta


def fm_small(h, times, m):
    """f_m(H t) e1 for a stack of small matrices H (ncol, k, k) at every time.

    Uses the power series sum_j t^{j+m}/(j+m)! H^j e1 when |H| t is moderate,
    otherwise an eigendecomposition of each H.
    Returns shape (ntimes, ncol, k).
    """
    times = np.asarray(times, float)
    ncol, k, _ = h.shape
    tmax = float(np.max(np.abs(times))) if times.size else 0.0
    rho = float(np.max(np.sum(np.abs(h), axis=1), initial=0.0))
    if rho * tmax <= SERIES_LIMIT:
        p = np.zeros((ncol, k), complex)
        p[:, 0] = 1.0
        out = np.zeros((times.size, ncol, k), complex)
        # coefficient t^{j+m}/(j+m)! built incrementally
        coef = times**m / factorial(m)
        bound = 1.0
        for j in range(200):
            out += coef[:, None, None] * p[None]
            p = np.einsum("cab,cb->ca", h, p)
            coef = coef * times / (j + 1 + m)
            bound = bound * rho * tmax / (j + 1 + m)
            if bound < 1e-18:
                break
        return out
    lam, x = np.linalg.eig(h)
    xinv_e1 = np.linalg.solve(x, np.broadcast_to(np.eye(k)[:, :1], (ncol, k, 1)))[..., 0]
    fvals = fm_scalar(lam[None, :, :], times[:, None, None], m)  # (nt, ncol, k)
    return np.einsum("cab,tcb,cb->tca", x, fvals, xinv_e1)


def fm_apply_vectors(op, v, times, m, k):
    """f_m(op, t) v for each column of v, through a k-dimensional Krylov space."""
    n = op.shape[0]
    k = min(k, n)
    q, h, beta = arnoldi(op, v, k)
    f = fm_small(h, times, m)
    return np.einsum("tci,inc->tnc", f, q) * beta


def solution_at(l0, vs, times, m, k):
    """u(t) = sum_{n<m} t^n/n! v_n + f_m(L0, t) v_m at each time."""
    w = taylor_weights(times, m)
    poly = np.einsum("tn,nac->tac", w, vs[:m])
    return poly + fm_apply_vectors(l0, vs[m], times, m, k)


def recursion(l0, lam0, coeffs):
    """v_0 = lam0, v_{n+1} = L0 v_n + s_n."""
    m = coeffs.shape[0]
    vs = np.empty((m + 1,) + lam0.shape, complex)
    vs[0] = lam0
    for n in range(m):
        vs[n + 1] = l0 @ vs[n] + coeffs[n]
    return vs


def sg_step(l0, dl, lam0, guess, amat, s_pts, dt, k, tol, max_iter):
    """One semi-global step acting on the columns of ``lam0``.

    ``dl[j] = L(s_j) - L0`` at the Chebyshev points ``s_pts``; ``guess[j]`` is
    the current estimate of the solution there. ``amat`` maps source samples
    to scaled Taylor coefficients. Returns (end, at_points, next_guess,
    iterations, residual).
    """
    m = len(s_pts)
    times = np.concatenate([s_pts, [dt], dt + s_pts])
    u_pts = np.array(guess, complex, copy=True)
    end = None
    resid = np.inf
    it = 0
    while it < max_iter:
        it += 1
        src = np.einsum("jab,jbc->jac", dl, u_pts)
        coeffs = np.einsum("nj,jac->nac", amat, src)
        vs = recursion(l0, lam0, coeffs)
        sol = solution_at(l0, vs, times, m, k)
        new_pts, new_end = sol[:m], sol[m]
        resid = float(np.max(np.abs(new_pts - u_pts)))
        if end is not None:
            resid = max(resid, float(np.max(np.abs(new_end - end))))
        u_pts, end = new_pts, new_end
        nxt = sol[m + 1:]
        if resid <= tol:
            break
    return end, u_pts, nxt, it, resid
