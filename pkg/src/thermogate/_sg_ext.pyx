# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled semi-global step. Same contract as ``_sg_py.sg_step``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt
from scipy.linalg.cython_blas cimport zgemm

from . import _sg_py

cnp.import_array()

cdef double SERIES_LIMIT = 8.0


cdef inline void matmul(double complex[:, ::1] a, double complex[:, ::1] b, double complex[:, ::1] c,
                        double complex beta) nogil:
    # row-major c = a @ b + beta c, via column-major c^T = b^T a^T
    cdef int n = a.shape[0]
    cdef int kk = a.shape[1]
    cdef int m = b.shape[1]
    cdef double complex one = 1.0
    zgemm(b"N", b"N", &m, &n, &kk, &one, &b[0, 0], &m, &a[0, 0], &kk, &beta, &c[0, 0], &m)


cdef inline double cabs2(double complex z) nogil:
    return z.real * z.real + z.imag * z.imag


def sg_step(l0_in, dl_in, lam0_in, guess_in, amat_in, s_pts_in, double dt, int kdim, double tol, int max_iter):
    cdef double complex[:, ::1] l0 = np.require(l0_in, complex, ["C", "W"])
    cdef double complex[:, :, ::1] dl = np.require(dl_in, complex, ["C", "W"])
    cdef double complex[:, ::1] lam0 = np.require(lam0_in, complex, ["C", "W"])
    cdef double[:, ::1] amat = np.require(amat_in, float, ["C", "W"])
    cdef double[::1] s_pts = np.require(s_pts_in, float, ["C", "W"])
    cdef int mm = s_pts.shape[0]
    cdef int n = l0.shape[0]
    cdef int ncol = lam0.shape[1]
    cdef int kd = min(kdim, n)
    cdef int nt = 2 * mm + 1
    cdef int i, j, a, c, p, q, it, jj, nterms
    cdef double r, bound, rho, tmax, hn, tt, colsum
    cdef double complex z, acc

    u_np = np.array(guess_in, dtype=complex, order="C", copy=True)
    cdef double complex[:, :, ::1] u = u_np
    src_np = np.empty((mm, n, ncol), dtype=complex)
    cdef double complex[:, :, ::1] src = src_np
    cdef double complex[:, :, ::1] vs = np.empty((mm + 1, n, ncol), dtype=complex)
    cdef double complex[:, :, ::1] qk = np.empty((kd, n, ncol), dtype=complex)
    cdef double complex[:, ::1] w = np.empty((n, ncol), dtype=complex)
    cdef double complex[:, :, ::1] hm = np.empty((ncol, kd, kd), dtype=complex)
    cdef double[::1] beta = np.empty(ncol)
    sol_np = np.empty((nt, n, ncol), dtype=complex)
    cdef double complex[:, :, ::1] sol = sol_np
    cdef double complex[:, :, ::1] fk = np.empty((nt, ncol, kd), dtype=complex)
    cdef double complex[:, ::1] pw = np.empty((ncol, kd), dtype=complex)
    cdef double complex[:, ::1] pw2 = np.empty((ncol, kd), dtype=complex)
    cdef double[::1] times = np.empty(nt)
    cdef double[::1] coef = np.empty(nt)
    cdef double[:, ::1] tw = np.empty((nt, mm))
    cdef double complex[:, ::1] end_prev = np.empty((n, ncol), dtype=complex)
    cdef bint have_end = False

    for j in range(mm):
        times[j] = s_pts[j]
        times[mm + 1 + j] = dt + s_pts[j]
    times[mm] = dt
    tmax = 0.0
    for p in range(nt):
        if times[p] > tmax:
            tmax = times[p]
        tw[p, 0] = 1.0
        for j in range(1, mm):
            tw[p, j] = tw[p, j - 1] * times[p] / j

    r = 1e300
    it = 0
    while it < max_iter:
        it += 1
        # source samples and their Taylor coefficients (stored in vs[1:] temporarily via src)
        for j in range(mm):
            matmul(dl[j], u[j], src[j], 0.0)
        # v_0 = lam0 ; v_{q+1} = l0 v_q + c_q with c_q = sum_j amat[q, j] src_j
        for a in range(n):
            for c in range(ncol):
                vs[0, a, c] = lam0[a, c]
        for q in range(mm):
            for a in range(n):
                for c in range(ncol):
                    acc = 0.0
                    for j in range(mm):
                        acc = acc + amat[q, j] * src[j, a, c]
                    vs[q + 1, a, c] = acc
            matmul(l0, vs[q], vs[q + 1], 1.0)

        # Arnoldi from the columns of v_M
        for c in range(ncol):
            hn = 0.0
            for a in range(n):
                hn += cabs2(vs[mm, a, c])
            beta[c] = sqrt(hn)
            for a in range(n):
                qk[0, a, c] = vs[mm, a, c] / beta[c] if beta[c] > 0 else 0.0
        hm[:, :, :] = 0.0
        for j in range(kd):
            matmul(l0, qk[j], w, 0.0)
            for _pass in range(2):
                for c in range(ncol):
                    for i in range(j + 1):
                        acc = 0.0
                        for a in range(n):
                            acc = acc + qk[i, a, c].conjugate() * w[a, c]
                        hm[c, i, j] = hm[c, i, j] + acc
                        for a in range(n):
                            w[a, c] = w[a, c] - acc * qk[i, a, c]
            if j + 1 < kd:
                for c in range(ncol):
                    hn = 0.0
                    for a in range(n):
                        hn += cabs2(w[a, c])
                    hn = sqrt(hn)
                    if hn > 1e-13 * (beta[c] if beta[c] > 1e-300 else 1e-300):
                        hm[c, j + 1, j] = hn
                        for a in range(n):
                            qk[j + 1, a, c] = w[a, c] / hn
                    else:
                        hm[c, j + 1, j] = 0.0
                        for a in range(n):
                            qk[j + 1, a, c] = 0.0

        rho = 0.0
        for c in range(ncol):
            for j in range(kd):
                colsum = 0.0
                for i in range(kd):
                    colsum += sqrt(cabs2(hm[c, i, j]))
                if colsum > rho:
                    rho = colsum
        if rho * tmax <= SERIES_LIMIT:
            fk[:, :, :] = 0.0
            pw[:, :] = 0.0
            for c in range(ncol):
                pw[c, 0] = 1.0
            for p in range(nt):
                tt = 1.0
                for j in range(mm):
                    tt = tt * times[p] / (j + 1)
                coef[p] = tt
            bound = 1.0
            for jj in range(200):
                for p in range(nt):
                    for c in range(ncol):
                        for i in range(kd):
                            fk[p, c, i] = fk[p, c, i] + coef[p] * pw[c, i]
                for c in range(ncol):
                    for i in range(kd):
                        acc = 0.0
                        for a in range(kd):
                            acc = acc + hm[c, i, a] * pw[c, a]
                        pw2[c, i] = acc
                pw[:, :] = pw2
                for p in range(nt):
                    coef[p] = coef[p] * times[p] / (jj + 1 + mm)
                bound = bound * rho * tmax / (jj + 1 + mm)
                if bound < 1e-18:
                    break
        else:
            fk = _sg_py.fm_small(np.asarray(hm), np.asarray(times), mm).astype(complex)

        # assemble u(t) = sum_q t^q/q! v_q + beta Q f(H t) e1
        for p in range(nt):
            for a in range(n):
                for c in range(ncol):
                    acc = 0.0
                    for j in range(mm):
                        acc = acc + tw[p, j] * vs[j, a, c]
                    for i in range(kd):
                        acc = acc + beta[c] * fk[p, c, i] * qk[i, a, c]
                    sol[p, a, c] = acc

        r = 0.0
        for j in range(mm):
            for a in range(n):
                for c in range(ncol):
                    z = sol[j, a, c] - u[j, a, c]
                    hn = sqrt(cabs2(z))
                    if hn > r:
                        r = hn
                    u[j, a, c] = sol[j, a, c]
        if have_end:
            for a in range(n):
                for c in range(ncol):
                    z = sol[mm, a, c] - end_prev[a, c]
                    hn = sqrt(cabs2(z))
                    if hn > r:
                        r = hn
        for a in range(n):
            for c in range(ncol):
                end_prev[a, c] = sol[mm, a, c]
        have_end = True
        if r <= tol:
            break

    return (sol_np[mm].copy(), u_np, sol_np[mm + 1:].copy(), it, float(r))
