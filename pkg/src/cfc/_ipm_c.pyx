# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled interior-point kernel for pinball fits.

Same algorithm as ``cfc._ipm`` (bounded-dual Mehrotra predictor-corrector,
d x d Newton systems); see that module for the derivation.  This version
runs the whole iteration in C with the GIL released, which is what makes
per-prompt augmented refits affordable at calibration sizes in the
thousands.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

DEF MAXD = 16

cdef double _STEP = 0.9995
cdef double _GAP_TOL = 1e-12
cdef double _DUAL_TOL = 1e-10


cdef int _chol_factor(double* M, int d) nogil:
    cdef int i, j, k
    cdef double s
    for j in range(d):
        s = M[j * d + j]
        for k in range(j):
            s -= M[j * d + k] * M[j * d + k]
        if s <= 0.0:
            return 1
        M[j * d + j] = sqrt(s)
        for i in range(j + 1, d):
            s = M[i * d + j]
            for k in range(j):
                s -= M[i * d + k] * M[j * d + k]
            M[i * d + j] = s / M[j * d + j]
    return 0


cdef void _chol_solve(double* L, double* rhs, double* out, int d) nogil:
    cdef int i, k
    cdef double s
    for i in range(d):
        s = rhs[i]
        for k in range(i):
            s -= L[i * d + k] * out[k]
        out[i] = s / L[i * d + i]
    for i in range(d - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, d):
            s -= L[k * d + i] * out[k]
        out[i] = s / L[i * d + i]


cdef int _solve(double[:, ::1] X, double[::1] y, double tau, double ridge,
                int max_iter, double[::1] beta,
                double[::1] a, double[::1] s, double[::1] z, double[::1] w,
                double[::1] da, double[::1] dz, double[::1] dw,
                double[::1] dinv, double[::1] rhs, double[::1] rd,
                double[::1] xv, double[::1] rcz, double[::1] rcw,
                int* iters) nogil:
    cdef int n = X.shape[0]
    cdef int d = X.shape[1]
    cdef double c = ridge * n
    cdef double b[MAXD]
    cdef double v[MAXD]
    cdef double dv[MAXD]
    cdef double t_small[MAXD]
    cdef double M[MAXD * MAXD]
    cdef double L[MAXD * MAXD]
    cdef int i, j, k, it
    cdef bint converged = 0
    cdef double acc, gap, mu, scale, rdmax, ap, ad, mu_aff, sigma

    for j in range(d):
        acc = 0.0
        for i in range(n):
            acc += X[i, j]
        b[j] = (1.0 - tau) * acc

    for i in range(n):
        a[i] = 1.0 - tau
        s[i] = tau

    # Initial v: ridge recovery when ridge > 0, else jittered normal equations.
    if ridge > 0.0:
        for j in range(d):
            acc = 0.0
            for i in range(n):
                acc += X[i, j] * a[i]
            v[j] = (acc - b[j]) / c
    else:
        for j in range(d):
            for k in range(d):
                M[j * d + k] = 0.0
            t_small[j] = 0.0
        for i in range(n):
            for j in range(d):
                for k in range(j + 1):
                    M[j * d + k] += X[i, j] * X[i, k]
                t_small[j] += X[i, j] * y[i]
        acc = 0.0
        for j in range(d):
            for k in range(j + 1, d):
                M[j * d + k] = M[k * d + j]
            acc += M[j * d + j]
        for j in range(d):
            M[j * d + j] += 1e-10 * (1.0 + acc)
        for j in range(d * d):
            L[j] = M[j]
        if _chol_factor(L, d):
            return -1
        _chol_solve(L, t_small, v, d)

    scale = 1.0
    for i in range(n):
        if fabs(y[i]) + 1.0 > scale:
            scale = 1.0 + fabs(y[i])
        acc = 0.0
        for j in range(d):
            acc += X[i, j] * v[j]
        xv[i] = acc
        acc = y[i] - acc
        if acc > 0.0:
            w[i] = acc + 1e-2
            z[i] = 1e-2
        else:
            w[i] = 1e-2
            z[i] = 1e-2 - acc

    for it in range(1, max_iter + 1):
        iters[0] = it
        if ridge > 0.0:
            for j in range(d):
                acc = 0.0
                for i in range(n):
                    acc += X[i, j] * a[i]
                v[j] = (acc - b[j]) / c
            for i in range(n):
                acc = 0.0
                for j in range(d):
                    acc += X[i, j] * v[j]
                xv[i] = acc

        gap = 0.0
        rdmax = 0.0
        for i in range(n):
            rd[i] = y[i] - xv[i] - w[i] + z[i]
            if fabs(rd[i]) > rdmax:
                rdmax = fabs(rd[i])
            gap += a[i] * z[i] + s[i] * w[i]
        mu = gap / (2.0 * n)
        if gap <= _GAP_TOL * n * scale and rdmax <= _DUAL_TOL * scale:
            converged = 1
            break

        # Newton matrix, factored once per iteration; both solves reuse it.
        for i in range(n):
            dinv[i] = 1.0 / (w[i] / s[i] + z[i] / a[i])
        for j in range(d):
            for k in range(j + 1):
                acc = 0.0
                for i in range(n):
                    acc += X[i, j] * X[i, k] * dinv[i]
                M[j * d + k] = acc
                M[k * d + j] = acc
        if ridge > 0.0:
            for j in range(d):
                M[j * d + j] += c
        for j in range(d * d):
            L[j] = M[j]
        if _chol_factor(L, d):
            acc = 0.0
            for j in range(d):
                acc += M[j * d + j]
            for j in range(d):
                M[j * d + j] += 1e-12 * (1.0 + acc)
            for j in range(d * d):
                L[j] = M[j]
            if _chol_factor(L, d):
                return -1

        # Affine direction: rcz = -a*z, rcw = -s*w collapse rhs to y - Xv.
        for i in range(n):
            rhs[i] = y[i] - xv[i]
        for j in range(d):
            acc = 0.0
            for i in range(n):
                acc += X[i, j] * dinv[i] * rhs[i]
            t_small[j] = acc
        _chol_solve(L, t_small, dv, d)
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += X[i, j] * dv[j]
            da[i] = dinv[i] * (rhs[i] - acc)
            dz[i] = -(z[i] * (a[i] + da[i])) / a[i]
            dw[i] = -(w[i] * (s[i] - da[i])) / s[i]

        ap = 1e308
        ad = 1e308
        for i in range(n):
            if da[i] < 0.0 and -a[i] / da[i] < ap:
                ap = -a[i] / da[i]
            if da[i] > 0.0 and s[i] / da[i] < ap:
                ap = s[i] / da[i]
            if dz[i] < 0.0 and -z[i] / dz[i] < ad:
                ad = -z[i] / dz[i]
            if dw[i] < 0.0 and -w[i] / dw[i] < ad:
                ad = -w[i] / dw[i]
        if ap > 1.0:
            ap = 1.0
        if ad > 1.0:
            ad = 1.0

        mu_aff = 0.0
        for i in range(n):
            mu_aff += (a[i] + ap * da[i]) * (z[i] + ad * dz[i])
            mu_aff += (s[i] - ap * da[i]) * (w[i] + ad * dw[i])
        mu_aff /= 2.0 * n
        if mu > 0.0:
            sigma = (mu_aff / mu) * (mu_aff / mu) * (mu_aff / mu)
        else:
            sigma = 0.1
        if sigma < 1e-8:
            sigma = 1e-8
        if sigma > 0.99:
            sigma = 0.99

        # Corrector residuals keep the affine cross terms.
        for i in range(n):
            rcz[i] = sigma * mu - a[i] * z[i] - da[i] * dz[i]
            rcw[i] = sigma * mu - s[i] * w[i] + da[i] * dw[i]
            rhs[i] = rd[i] - rcw[i] / s[i] + rcz[i] / a[i]
        for j in range(d):
            acc = 0.0
            for i in range(n):
                acc += X[i, j] * dinv[i] * rhs[i]
            t_small[j] = acc
        _chol_solve(L, t_small, dv, d)
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += X[i, j] * dv[j]
            da[i] = dinv[i] * (rhs[i] - acc)
            dz[i] = (rcz[i] - z[i] * da[i]) / a[i]
            dw[i] = (rcw[i] + w[i] * da[i]) / s[i]

        ap = 1e308
        ad = 1e308
        for i in range(n):
            if da[i] < 0.0 and -a[i] / da[i] < ap:
                ap = -a[i] / da[i]
            if da[i] > 0.0 and s[i] / da[i] < ap:
                ap = s[i] / da[i]
            if dz[i] < 0.0 and -z[i] / dz[i] < ad:
                ad = -z[i] / dz[i]
            if dw[i] < 0.0 and -w[i] / dw[i] < ad:
                ad = -w[i] / dw[i]
        ap = _STEP * ap
        ad = _STEP * ad
        if ap > 1.0:
            ap = 1.0
        if ad > 1.0:
            ad = 1.0

        for i in range(n):
            a[i] += ap * da[i]
            if a[i] < 1e-14:
                a[i] = 1e-14
            if a[i] > 1.0 - 1e-14:
                a[i] = 1.0 - 1e-14
            s[i] = 1.0 - a[i]
            z[i] += ad * dz[i]
            if z[i] < 1e-14:
                z[i] = 1e-14
            w[i] += ad * dw[i]
            if w[i] < 1e-14:
                w[i] = 1e-14
        if ridge == 0.0:
            for j in range(d):
                v[j] += ad * dv[j]
            for i in range(n):
                acc = 0.0
                for j in range(d):
                    acc += X[i, j] * v[j]
                xv[i] = acc

    if ridge > 0.0:
        for j in range(d):
            acc = 0.0
            for i in range(n):
                acc += X[i, j] * a[i]
            v[j] = (acc - b[j]) / c
    for j in range(d):
        beta[j] = v[j]
    return 0 if converged else 1


def pinball_fit(X, y, double tau, double ridge=0.0, int max_iter=200):
    """Return ``(beta, iterations, converged)``; see ``cfc._ipm``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    cdef int n = X.shape[0]
    cdef int d = X.shape[1]
    if d > MAXD:
        raise ValueError(f"compiled kernel supports d <= {MAXD}, got {d}")

    beta = np.empty(d)
    work = [np.empty(n) for _ in range(11)]

    cdef double[:, ::1] Xv = X
    cdef double[::1] yv = y
    cdef double[::1] betav = beta
    cdef double[::1] av = work[0]
    cdef double[::1] sv = work[1]
    cdef double[::1] zv = work[2]
    cdef double[::1] wv = work[3]
    cdef double[::1] dav = work[4]
    cdef double[::1] dzv = work[5]
    cdef double[::1] dwv = work[6]
    cdef double[::1] dinvv = work[7]
    cdef double[::1] rhsv = work[8]
    cdef double[::1] rdv = work[9]
    cdef double[::1] xvv = work[10]
    rczw = np.empty((2, n))
    cdef double[::1] rczv = rczw[0]
    cdef double[::1] rcwv = rczw[1]
    cdef int iters = 0
    cdef int status

    with nogil:
        status = _solve(Xv, yv, tau, ridge, max_iter, betav,
                        av, sv, zv, wv, dav, dzv, dwv,
                        dinvv, rhsv, rdv, xvv, rczv, rcwv, &iters)
    if status < 0:
        raise FloatingPointError("pinball kernel: Newton system not positive definite")
    return beta, iters, status == 0
