"""Test statistics computed from distillations, one column or many at once.

The batched forms take an ``(n, M)`` matrix whose columns are candidate
x-vectors and return ``M`` values; the scalar forms call them with ``M = 1``
so observed and resampled statistics go through identical arithmetic.
"""

from __future__ import annotations

import warnings

import numpy as np

from .._errors import NumericalError, ValidationError
from ..distill import Distillation
from ..lasso import LassoConfig, cross_validate, default_grid, loss_for, make_folds

OCRT_VARIANTS = ("original", "no_soft", "centered")


def _as_cols(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def d0_batch(y, xs, dist: Distillation) -> np.ndarray:
    """``|(y - d_y)'(x - d_x)| / ||x - d_x||^2`` for every column of ``xs``."""
    r = dist.residual(y)
    e = _as_cols(xs) - dist.d_x[:, None]
    den = np.einsum("im,im->m", e, e)
    if np.any(den <= 0):
        raise NumericalError("x equals its distilled mean; the d0 statistic is undefined")
    return np.abs(r @ e) / den


def d0_statistic(y, x, dist: Distillation) -> float:
    return float(d0_batch(y, x, dist)[0])


def inner_batch(y, xs, dist: Distillation) -> np.ndarray:
    """``|(y - d_y)'(x - d_x)|``, the denominator-free d0 numerator."""
    return np.abs(dist.residual(y) @ (_as_cols(xs) - dist.d_x[:, None]))


def inner_statistic(y, x, dist: Distillation) -> float:
    return float(inner_batch(y, x, dist)[0])


def dI_batch(y, xs, dist: Distillation) -> np.ndarray:
    """Main effect squared plus the mean squared interaction coefficient.

    Each column ``x`` gives the least-squares fit of ``y - d_y`` on
    ``[e, e * Z_top]`` with ``e = x - d_x``. Rank-deficient designs fall back
    to the pseudoinverse with a warning.
    """
    k = dist.k
    if k < 1:
        raise ValidationError("the interaction statistic needs k >= 1")
    r = dist.residual(y)
    e = _as_cols(xs) - dist.d_x[:, None]
    A = np.column_stack([np.ones(dist.n), dist.top_cols])
    # D_m = diag(e_m) A, so D'D = A' diag(e^2) A and D'r = A' (e * r)
    gram = np.einsum("im,ia,ib->mab", e * e, A, A)
    rhs = np.einsum("im,ia->ma", e * r[:, None], A)
    b = np.empty_like(rhs)
    s = np.linalg.svd(gram, compute_uv=False)
    ok = s[:, -1] > 1e-10 * s[:, 0]
    if np.any(ok):
        b[ok] = np.linalg.solve(gram[ok], rhs[ok][..., None])[..., 0]
    if not np.all(ok):
        warnings.warn("interaction design is rank deficient; using the pseudoinverse",
                      RuntimeWarning, stacklevel=2)
        bad = ~ok
        b[bad] = np.einsum("mab,mb->ma", np.linalg.pinv(gram[bad], hermitian=True), rhs[bad])
    return b[:, 0] ** 2 + np.mean(b[:, 1:] ** 2, axis=1)


def dI_statistic(y, x, dist: Distillation) -> float:
    return float(dI_batch(y, x, dist)[0])


class OcrtStatistic:
    """Lasso coefficient of x from a cross-validated joint fit on ``[x, Z]``.

    The fold partition is fixed at construction and shared by every
    evaluation; the penalty grid is rebuilt from each candidate column so the
    statistic treats observed and resampled columns alike. Variants:

    ``original``
        ``|beta_x|``.
    ``no_soft``
        ``|W|`` with ``W = xc'(y - Z beta_z) / ||xc||^2``, ``xc`` the centered
        column; the lasso coefficient is ``W`` soft-thresholded.
    ``centered``
        signed ``W``, calibrated two-sided.
    """

    def __init__(self, y, Z, variant="original", response_kind="continuous",
                 config: LassoConfig | None = None, rng=None):
        if variant not in OCRT_VARIANTS:
            raise ValidationError(f"unknown oCRT variant {variant!r}")
        self.y = np.asarray(y, dtype=float)
        self.Z = np.asarray(Z, dtype=float)
        self.variant = variant
        self.loss = loss_for(response_kind)
        self.config = config or LassoConfig()
        self.folds = make_folds(self.y.shape[0], self.config.n_folds,
                                rng if rng is not None else 0)
        self.last_fit = None

    def __call__(self, y, x, context=None) -> float:
        x = np.asarray(x, dtype=float)
        XZ = np.column_stack([x, self.Z])
        grid = default_grid(XZ, self.y, self.loss, self.config.n_lambdas,
                            self.config.ratio_for(XZ))
        cv = cross_validate(XZ, self.y, self.loss, grid, rule=self.config.delta,
                            config=self.config, folds=self.folds)
        fit = cv.selected
        self.last_fit = fit
        if self.variant == "original":
            return abs(float(fit.beta[0]))
        xc = x - x.mean()
        ss = float(xc @ xc)
        if ss <= 0:
            raise NumericalError("tested column is constant")
        w = float(xc @ (self.y - self.Z @ fit.beta[1:])) / ss
        return abs(w) if self.variant == "no_soft" else w

    def batch(self, y, xs, context=None) -> np.ndarray:
        xs = _as_cols(xs)
        return np.array([self(y, xs[:, m]) for m in range(xs.shape[1])])


def ocrt_statistic(y, x, Z, variant="original", config: LassoConfig | None = None,
                   rng=None, response_kind="continuous") -> float:
    """One evaluation of the oCRT statistic on the observed data."""
    stat = OcrtStatistic(y, Z, variant, response_kind, config, rng)
    return stat(y, x)
