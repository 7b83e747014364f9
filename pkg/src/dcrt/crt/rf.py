"""Closed-form ("resampling-free") calibrations for Gaussian conditional laws.

Both use the exact null ``x - d_x ~ N(0, diag(sigma_i^2))`` and replace the
random denominator of the statistic by its expectation, which leaves a
linear (d0) or quadratic (dI) function of a Gaussian vector.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .._errors import NumericalError
from ..distill import Distillation
from .outcome import TestOutcome
from .quadform import imhof_tail

TINY = np.finfo(float).tiny


def d0_rf_p_value(y, x, dist: Distillation) -> TestOutcome:
    """Two-sided normal p-value for ``T' = |(y - d_y)'(x - d_x)|``.

    With a single conditional sd the null sd of the inner product is
    ``sigma_x ||y - d_y||``; with per-row sds it is
    ``sqrt(sum sigma_i^2 r_i^2)``.
    """
    r = dist.residual(y)
    e = np.asarray(x, dtype=float) - dist.d_x
    t = float(abs(r @ e))
    if dist.heteroscedastic:
        scale = float(np.sqrt(np.sum((dist.sigma_rows * r) ** 2)))
    else:
        scale = dist.sigma_x * float(np.linalg.norm(r))
    if scale == 0:
        warnings.warn("response equals its distillation; returning p = 1",
                      RuntimeWarning, stacklevel=2)
        return TestOutcome(1.0, t, "d0_rf", 0)
    p = 2 * norm.sf(t / scale)
    return TestOutcome(float(min(1.0, max(p, TINY))), t, "d0_rf", 0)


def dI_quadform(y, dist: Distillation):
    """Linear map ``B`` with ``t = ||B e||^2`` and the weights of its null law.

    ``B = W H^{-1} A' diag(r)`` where ``A = [1, Z_top]``,
    ``H = A' diag(sigma^2) A`` and ``W = diag(1, k^{-1/2}, ..)``. Under the
    null, ``t`` is distributed as ``sum_j w_j chi2_1`` with ``w`` the
    eigenvalues of ``B diag(sigma^2) B'``.
    """
    r = dist.residual(y)
    k = dist.k
    A = np.column_stack([np.ones(dist.n), dist.top_cols])
    s2 = dist.row_sigma() ** 2
    H = A.T @ (s2[:, None] * A)
    try:
        c = linalg.cho_factor(H, lower=True)
        d = np.diag(c[0]) ** 2
        if d.min() <= 1e-12 * d.max():
            raise linalg.LinAlgError
    except linalg.LinAlgError:
        raise NumericalError(
            f"interaction Gram matrix is singular (condition estimate "
            f"{np.linalg.cond(H):.3e})") from None
    wdiag = np.ones(k + 1)
    if k:
        wdiag[1:] = 1 / np.sqrt(k)
    B = wdiag[:, None] * linalg.cho_solve(c, A.T * r[None, :])
    Bs = B * np.sqrt(s2)[None, :]
    weights = np.clip(linalg.eigvalsh(Bs @ Bs.T), 0.0, None)
    return B, weights


def dI_rf_p_value(y, x, dist: Distillation) -> TestOutcome:
    """Weighted chi-square tail of the linearized interaction statistic."""
    B, weights = dI_quadform(y, dist)
    e = np.asarray(x, dtype=float) - dist.d_x
    t = float(np.sum((B @ e) ** 2))
    if weights.max(initial=0.0) <= 0:
        return TestOutcome(1.0, t, "dI_rf", 0)
    return TestOutcome(imhof_tail(weights, t), t, "dI_rf", 0)
