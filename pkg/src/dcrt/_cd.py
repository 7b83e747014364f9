"""Compiled weighted coordinate-descent kernel.

Solves ``min (1/2n) sum_i w_i (z_i - b0 - x_i' beta)^2 + lam * ||beta||_1`` over
standardized columns, updating ``beta`` and the working residual in place.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True, nogil=True)
def _objective(r, w, beta, lam):
    n = r.shape[0]
    s = 0.0
    for i in range(n):
        s += w[i] * r[i] * r[i]
    pen = 0.0
    for j in range(beta.shape[0]):
        pen += abs(beta[j])
    return 0.5 * s / n + lam * pen


@njit(cache=True, fastmath=True, nogil=True)
def _sweep(X, r, w, beta, xw2, usable, lam, n, coords, ncoord):
    # one pass over `coords`; returns the largest scaled coordinate move
    # and whether any coefficient left or entered zero
    max_move = 0.0
    changed = False
    for c in range(ncoord):
        j = coords[c]
        if not usable[j] or xw2[j] <= 0.0:
            continue
        old = beta[j]
        g = 0.0
        for i in range(n):
            g += w[i] * X[i, j] * r[i]
        a = xw2[j] / n
        u = g / n + a * old
        if u > lam:
            new = (u - lam) / a
        elif u < -lam:
            new = (u + lam) / a
        else:
            new = 0.0
        d = new - old
        if d != 0.0:
            beta[j] = new
            for i in range(n):
                r[i] -= d * X[i, j]
            if (old == 0.0) != (new == 0.0):
                changed = True
            move = abs(d) * np.sqrt(a)
            if move > max_move:
                max_move = move
    return max_move, changed


@njit(cache=True, fastmath=True, nogil=True)
def _center(r, w, fit_intercept):
    if not fit_intercept:
        return 0.0
    sw = 0.0
    sr = 0.0
    for i in range(r.shape[0]):
        sw += w[i]
        sr += w[i] * r[i]
    d = sr / sw
    if d != 0.0:
        for i in range(r.shape[0]):
            r[i] -= d
    return d


@njit(cache=True, fastmath=True, nogil=True)
def wls_cd(X, r, w, beta, lam, usable, tol, max_sweeps, fit_intercept, debug):
    """Coordinate descent on the weighted lasso problem.

    ``r`` must hold ``z - b0 - X @ beta`` on entry. Returns
    ``(intercept shift, sweeps, converged, monotone)``.
    """
    n, p = X.shape
    xw2 = np.empty(p)
    sw = 0.0
    for i in range(n):
        sw += w[i]
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += w[i] * X[i, j] * X[i, j]
        xw2[j] = s
    # scale for the stopping rule: weighted sd of the working response
    # z = r + X beta, which unlike r does not shrink along the path
    z = r.copy()
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                z[i] += X[i, j] * beta[j]
    mz = 0.0
    for i in range(n):
        mz += w[i] * z[i]
    mz /= sw
    vz = 0.0
    for i in range(n):
        vz += w[i] * (z[i] - mz) ** 2
    scale = np.sqrt(vz / sw)
    if scale <= 0.0:
        scale = 1.0
    thresh = tol * scale * np.sqrt(sw / n)

    all_coords = np.arange(p)
    act = np.empty(p, dtype=np.int64)
    b0 = _center(r, w, fit_intercept)
    sweeps = 0
    monotone = True
    prev = _objective(r, w, beta, lam) if debug else 0.0
    converged = False
    while sweeps < max_sweeps:
        move, _ = _sweep(X, r, w, beta, xw2, usable, lam, n, all_coords, p)
        b0 += _center(r, w, fit_intercept)
        sweeps += 1
        if debug:
            cur = _objective(r, w, beta, lam)
            if cur > prev * (1 + 1e-12) + 1e-15:
                monotone = False
            prev = cur
        if move < thresh:
            converged = True
            break
        # iterate on the current active set until it settles
        na = 0
        for j in range(p):
            if beta[j] != 0.0:
                act[na] = j
                na += 1
        while sweeps < max_sweeps:
            move, _ = _sweep(X, r, w, beta, xw2, usable, lam, n, act, na)
            b0 += _center(r, w, fit_intercept)
            sweeps += 1
            if debug:
                cur = _objective(r, w, beta, lam)
                if cur > prev * (1 + 1e-12) + 1e-15:
                    monotone = False
                prev = cur
            if move < thresh:
                break
    return b0, sweeps, converged, monotone
