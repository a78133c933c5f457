"""Pure numpy implementation of the hot kernels.

Mirrors ``_kernels.pyx`` call for call; used when the compiled extension is
unavailable or ``FHCI_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import math

import numpy as np

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
# below this relative bracket width golden section hands over to score bisection
_SWITCH_RTOL = 1e-6
# Cholesky pivots this small relative to the diagonal mean X'V^-1X is singular
_PIVOT_RTOL = 1e-14


def _residual_terms(y, X, D, A):
    v = A + D
    if np.any(v <= 0.0):
        raise ValueError("A + D_i must be positive for every area")
    w = 1.0 / v
    G = (X * w[:, None]).T @ X
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("X'V^-1X is numerically singular") from exc
    if np.any(np.diag(L) ** 2 <= _PIVOT_RTOL * np.diag(G)):
        raise np.linalg.LinAlgError("X'V^-1X is numerically singular")
    beta = np.linalg.solve(G, (X * w[:, None]).T @ y)
    r = y - X @ beta
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    Ginv = np.linalg.inv(G)
    H = (X * (w * w)[:, None]).T @ X
    value = -0.5 * logdet + 0.5 * np.sum(np.log(w)) - 0.5 * np.dot(w * r, r)
    score = (
        -0.5 * np.sum(w)
        + 0.5 * np.sum(Ginv * H)
        + 0.5 * np.dot(w * w * r, r)
    )
    return float(value), float(score)


def adjusted_value_and_score(y, X, D, A, log_a=0.0, log_ad=0.0, shift=0.0):
    """Adjusted residual log-likelihood and its derivative in ``A``.

    The adjustment is ``log_a * ln(A) + log_ad * ln(A + shift)``.
    """
    A = float(A)
    if log_a != 0.0 and A <= 0.0:
        return -math.inf, math.inf
    value, score = _residual_terms(y, X, D, A)
    if log_a != 0.0:
        value += log_a * math.log(A)
        score += log_a / A
    if log_ad != 0.0:
        value += log_ad * math.log(A + shift)
        score += log_ad / (A + shift)
    return value, score


def _grid_values(y, X, D, grid, log_a, log_ad, shift):
    # batched over the grid: (G, m) weights, (G, p, p) information matrices
    w = 1.0 / (grid[:, None] + D[None, :])
    Gm = np.einsum("gi,ij,ik->gjk", w, X, X)
    bm = np.einsum("gi,ij,i->gj", w, X, y)
    L = np.linalg.cholesky(Gm)
    beta = np.linalg.solve(Gm, bm[..., None])[..., 0]
    r = y[None, :] - beta @ X.T
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    vals = -0.5 * logdet + 0.5 * np.sum(np.log(w), axis=1) - 0.5 * np.sum(w * r * r, axis=1)
    with np.errstate(divide="ignore"):
        if log_a != 0.0:
            vals = vals + log_a * np.where(grid > 0.0, np.log(np.where(grid > 0, grid, 1.0)), -np.inf)
        if log_ad != 0.0:
            vals = vals + log_ad * np.log(grid + shift)
    return vals


def search_grid(a_max, grid_points, include_zero):
    pts = a_max * np.logspace(-10.0, 0.0, grid_points)
    if include_zero:
        pts = np.concatenate(([0.0], pts))
    return pts


def maximize_adjusted(y, X, D, log_a, log_ad, shift, a_max, grid_points, abs_tol, max_iter):
    """Bracket on a log grid, refine by golden section then score bisection.

    Returns ``(a_hat, value, iterations, converged, lo, hi)``.
    """
    grid = search_grid(a_max, grid_points, log_a == 0.0)
    vals = _grid_values(y, X, D, grid, log_a, log_ad, shift)
    k = int(np.argmax(vals))
    n = grid.size
    lo = grid[k - 1] if k > 0 else grid[0]
    hi = grid[k + 1] if k < n - 1 else grid[n - 1]

    def f(a):
        return adjusted_value_and_score(y, X, D, a, log_a, log_ad, shift)[0]

    def s(a):
        return adjusted_value_and_score(y, X, D, a, log_a, log_ad, shift)[1]

    it = 0
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    switch = max(abs_tol, _SWITCH_RTOL * (1.0 + 0.5 * (lo + hi)))
    bisect = False
    while it < max_iter and hi - lo > abs_tol:
        if not bisect and hi - lo <= switch:
            if lo > 0.0 and s(lo) > 0.0 and s(hi) < 0.0:
                bisect = True
            else:
                switch = -1.0
            continue
        if bisect:
            mid = 0.5 * (lo + hi)
            if s(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        elif fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
        it += 1
    converged = hi - lo <= abs_tol
    a_hat = 0.5 * (lo + hi)
    value = f(a_hat)
    if value < vals[k]:
        a_hat, value = float(grid[k]), float(vals[k])
    return float(a_hat), float(value), it, converged, float(lo), float(hi)


def quad_forms(X, D, A):
    """``x_i'(X'V^-1X)^-1 x_i`` for every area."""
    w = 1.0 / (A + D)
    G = (X * w[:, None]).T @ X
    Ginv = np.linalg.inv(G)
    return np.einsum("ij,jk,ik->i", X, Ginv, X)
