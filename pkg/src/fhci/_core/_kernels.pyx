# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: adjusted residual log-likelihood, its score, and the
bracketed 1-D maximizer.  Same contract as ``_fallback``."""

from libc.math cimport log, sqrt, INFINITY
from libc.stdlib cimport malloc, free

import numpy as np

cdef double _INVPHI = (sqrt(5.0) - 1.0) / 2.0
cdef double _SWITCH_RTOL = 1e-6
# Cholesky pivots this small relative to the diagonal mean X'V^-1X is singular
cdef double _PIVOT_RTOL = 1e-14


cdef int _eval(const double[::1] y, const double[:, ::1] X, const double[::1] D,
               double A, double log_a, double log_ad, double shift,
               double* work, double* value, double* score) noexcept nogil:
    """Returns 0 on success, 1 if A + D_i <= 0, 2 if X'V^-1X is singular."""
    cdef Py_ssize_t m = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t i, j, k, l
    cdef double* G = work
    cdef double* H = work + p * p
    cdef double* L = work + 2 * p * p
    cdef double* Li = work + 3 * p * p
    cdef double* b = work + 4 * p * p
    cdef double* beta = b + p
    cdef double* t = beta + p
    cdef double w, w2, s, r, sumw = 0.0, sumlogw = 0.0, q = 0.0, q2 = 0.0
    cdef double logdet = 0.0, tr = 0.0, ginv

    if log_a != 0.0 and A <= 0.0:
        value[0] = -INFINITY
        score[0] = INFINITY
        return 0

    for j in range(p * p):
        G[j] = 0.0
        H[j] = 0.0
        Li[j] = 0.0
    for j in range(p):
        b[j] = 0.0

    for i in range(m):
        s = A + D[i]
        if s <= 0.0:
            return 1
        w = 1.0 / s
        w2 = w * w
        sumw += w
        sumlogw += log(w)
        for j in range(p):
            b[j] += w * X[i, j] * y[i]
            for k in range(j + 1):
                G[j * p + k] += w * X[i, j] * X[i, k]
                H[j * p + k] += w2 * X[i, j] * X[i, k]
    for j in range(p):
        for k in range(j):
            G[k * p + j] = G[j * p + k]
            H[k * p + j] = H[j * p + k]

    # Cholesky G = L L'
    for j in range(p):
        s = G[j * p + j]
        for k in range(j):
            s -= L[j * p + k] * L[j * p + k]
        if s <= _PIVOT_RTOL * G[j * p + j]:
            return 2
        L[j * p + j] = sqrt(s)
        logdet += log(s)
        for i in range(j + 1, p):
            s = G[i * p + j]
            for k in range(j):
                s -= L[i * p + k] * L[j * p + k]
            L[i * p + j] = s / L[j * p + j]
        for k in range(j + 1, p):
            L[j * p + k] = 0.0

    # L^-1 by forward substitution, column by column
    for l in range(p):
        for i in range(p):
            s = 1.0 if i == l else 0.0
            for k in range(i):
                s -= L[i * p + k] * Li[k * p + l]
            Li[i * p + l] = s / L[i * p + i]

    # beta = L^-T L^-1 b
    for i in range(p):
        s = 0.0
        for k in range(i + 1):
            s += Li[i * p + k] * b[k]
        t[i] = s
    for i in range(p):
        s = 0.0
        for k in range(i, p):
            s += Li[k * p + i] * t[k]
        beta[i] = s

    for i in range(m):
        r = y[i]
        for j in range(p):
            r -= X[i, j] * beta[j]
        w = 1.0 / (A + D[i])
        q += w * r * r
        q2 += w * w * r * r

    # tr(G^-1 H), G^-1 = L^-T L^-1
    for j in range(p):
        for k in range(p):
            ginv = 0.0
            for l in range(j if j > k else k, p):
                ginv += Li[l * p + j] * Li[l * p + k]
            tr += ginv * H[k * p + j]

    value[0] = -0.5 * logdet + 0.5 * sumlogw - 0.5 * q
    score[0] = -0.5 * sumw + 0.5 * tr + 0.5 * q2
    if log_a != 0.0:
        value[0] += log_a * log(A)
        score[0] += log_a / A
    if log_ad != 0.0:
        value[0] += log_ad * log(A + shift)
        score[0] += log_ad / (A + shift)
    return 0


cdef double* _alloc_work(Py_ssize_t p) except NULL:
    cdef double* work = <double*> malloc((5 * p * p + 3 * p + 1) * sizeof(double))
    if work == NULL:
        raise MemoryError()
    return work


cdef _raise(int rc):
    if rc == 1:
        raise ValueError("A + D_i must be positive for every area")
    raise np.linalg.LinAlgError("X'V^-1X is numerically singular")


def adjusted_value_and_score(const double[::1] y, const double[:, ::1] X, const double[::1] D,
                             double A, double log_a=0.0, double log_ad=0.0, double shift=0.0):
    """Adjusted residual log-likelihood and its derivative in ``A``."""
    cdef double value, score
    cdef int rc
    cdef double* work = _alloc_work(X.shape[1])
    try:
        with nogil:
            rc = _eval(y, X, D, A, log_a, log_ad, shift, work, &value, &score)
    finally:
        free(work)
    if rc:
        _raise(rc)
    return value, score


def search_grid(double a_max, Py_ssize_t grid_points, bint include_zero):
    pts = a_max * np.logspace(-10.0, 0.0, grid_points)
    if include_zero:
        pts = np.concatenate(([0.0], pts))
    return pts


def maximize_adjusted(const double[::1] y, const double[:, ::1] X, const double[::1] D,
                      double log_a, double log_ad, double shift, double a_max,
                      Py_ssize_t grid_points, double abs_tol, Py_ssize_t max_iter):
    """Bracket on a log grid, refine by golden section then score bisection.

    Returns ``(a_hat, value, iterations, converged, lo, hi)``.
    """
    cdef const double[::1] grid = search_grid(a_max, grid_points, log_a == 0.0)
    cdef Py_ssize_t n = grid.shape[0], k = 0, g
    cdef double best = -INFINITY, v, sc, lo, hi, c, d, fc, fd, mid, switch, slo, shi
    cdef double a_hat, value
    cdef Py_ssize_t it = 0
    cdef int rc = 0
    cdef bint bisect = False
    cdef double* work = _alloc_work(X.shape[1])
    try:
        with nogil:
            for g in range(n):
                rc = _eval(y, X, D, grid[g], log_a, log_ad, shift, work, &v, &sc)
                if rc:
                    break
                if v > best:
                    best = v
                    k = g
            if rc == 0:
                lo = grid[k - 1] if k > 0 else grid[0]
                hi = grid[k + 1] if k < n - 1 else grid[n - 1]
                c = hi - _INVPHI * (hi - lo)
                d = lo + _INVPHI * (hi - lo)
                rc = _eval(y, X, D, c, log_a, log_ad, shift, work, &fc, &sc)
                rc = rc or _eval(y, X, D, d, log_a, log_ad, shift, work, &fd, &sc)
                switch = abs_tol
                if _SWITCH_RTOL * (1.0 + 0.5 * (lo + hi)) > switch:
                    switch = _SWITCH_RTOL * (1.0 + 0.5 * (lo + hi))
                while rc == 0 and it < max_iter and hi - lo > abs_tol:
                    if not bisect and hi - lo <= switch:
                        switch = -1.0
                        if lo > 0.0:
                            rc = _eval(y, X, D, lo, log_a, log_ad, shift, work, &v, &slo)
                            rc = rc or _eval(y, X, D, hi, log_a, log_ad, shift, work, &v, &shi)
                            bisect = slo > 0.0 and shi < 0.0
                        continue
                    if bisect:
                        mid = 0.5 * (lo + hi)
                        rc = _eval(y, X, D, mid, log_a, log_ad, shift, work, &v, &sc)
                        if sc > 0.0:
                            lo = mid
                        else:
                            hi = mid
                    elif fc >= fd:
                        hi = d
                        d = c
                        fd = fc
                        c = hi - _INVPHI * (hi - lo)
                        rc = _eval(y, X, D, c, log_a, log_ad, shift, work, &fc, &sc)
                    else:
                        lo = c
                        c = d
                        fc = fd
                        d = lo + _INVPHI * (hi - lo)
                        rc = _eval(y, X, D, d, log_a, log_ad, shift, work, &fd, &sc)
                    it += 1
                if rc == 0:
                    a_hat = 0.5 * (lo + hi)
                    rc = _eval(y, X, D, a_hat, log_a, log_ad, shift, work, &value, &sc)
    finally:
        free(work)
    if rc:
        _raise(rc)
    if value < best:
        a_hat = grid[k]
        value = best
    return a_hat, value, it, hi - lo <= abs_tol, lo, hi


def quad_forms(const double[:, ::1] X, const double[::1] D, double A):
    """``x_i'(X'V^-1X)^-1 x_i`` for every area."""
    cdef Py_ssize_t m = X.shape[0], p = X.shape[1], i, j, k
    cdef double* work = _alloc_work(p)
    cdef double* G = work
    cdef double* L = work + 2 * p * p
    cdef double s, w
    out = np.empty(m)
    cdef double[::1] o = out
    cdef int rc = 0
    try:
        with nogil:
            for j in range(p * p):
                G[j] = 0.0
                L[j] = 0.0
            for i in range(m):
                w = 1.0 / (A + D[i])
                for j in range(p):
                    for k in range(j + 1):
                        G[j * p + k] += w * X[i, j] * X[i, k]
            for j in range(p):
                s = G[j * p + j]
                for k in range(j):
                    s -= L[j * p + k] * L[j * p + k]
                if s <= _PIVOT_RTOL * G[j * p + j]:
                    rc = 2
                    break
                L[j * p + j] = sqrt(s)
                for i in range(j + 1, p):
                    s = G[i * p + j]
                    for k in range(j):
                        s -= L[i * p + k] * L[j * p + k]
                    L[i * p + j] = s / L[j * p + j]
            if rc == 0:
                # ||L^-1 x_i||^2
                for i in range(m):
                    w = 0.0
                    for j in range(p):
                        s = X[i, j]
                        for k in range(j):
                            s -= L[j * p + k] * work[3 * p * p + k]
                        work[3 * p * p + j] = s / L[j * p + j]
                        w += work[3 * p * p + j] * work[3 * p * p + j]
                    o[i] = w
    finally:
        free(work)
    if rc:
        _raise(rc)
    return out
