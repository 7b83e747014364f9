"""Distillation: compress Z into the summaries every dCRT statistic uses.

``d_y`` comes from a cross-validated lasso of y on Z and never sees x;
``d_x`` is the conditional mean of x given Z under the supplied law and
never sees y or x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from ._errors import ValidationError
from .data import ConditionalLaw
from .lasso import CvLassoFit, LassoConfig, cv_lasso, loss_for


@dataclass(frozen=True, eq=False)
class Distillation:
    """Low-dimensional summaries for one tested variable.

    Attributes
    ----------
    d_y : (n,) array
        Fitted values of y on Z; the linear predictor when ``link="logit"``.
    top_cols : (n, k) array
        Columns of Z with the largest absolute lasso coefficients.
    top_idx : tuple of int
        Their indices into Z.
    d_x : (n,) array
        E[x | Z].
    sigma_x : float
        Conditional standard deviation of x (homoscedastic summary).
    sigma_rows : (n,) array or None
        Per-row conditional standard deviations, when they differ.
    link : {"identity", "logit"}
    """

    d_y: np.ndarray
    d_x: np.ndarray
    sigma_x: float
    top_cols: np.ndarray = None
    top_idx: tuple = ()
    sigma_rows: np.ndarray | None = None
    link: str = "identity"

    def __post_init__(self):
        d_y = np.asarray(self.d_y, dtype=float)
        n = d_y.shape[0]
        top = np.zeros((n, 0)) if self.top_cols is None else np.asarray(self.top_cols, dtype=float)
        if top.ndim != 2 or top.shape[0] != n or top.shape[1] != len(self.top_idx):
            raise ValidationError("top_cols does not match top_idx")
        if not self.sigma_x > 0:
            raise ValidationError("sigma_x must be positive")
        if self.link not in ("identity", "logit"):
            raise ValidationError(f"unknown link {self.link!r}")
        object.__setattr__(self, "d_y", d_y)
        object.__setattr__(self, "d_x", np.asarray(self.d_x, dtype=float))
        object.__setattr__(self, "top_cols", top)
        object.__setattr__(self, "top_idx", tuple(int(i) for i in self.top_idx))
        object.__setattr__(self, "sigma_x", float(self.sigma_x))
        if self.sigma_rows is not None:
            s = np.asarray(self.sigma_rows, dtype=float)
            if s.shape != (n,) or np.any(s <= 0):
                raise ValidationError("sigma_rows must be positive with one entry per row")
            object.__setattr__(self, "sigma_rows", s)

    @property
    def k(self) -> int:
        return len(self.top_idx)

    @property
    def n(self) -> int:
        return self.d_y.shape[0]

    def residual(self, y) -> np.ndarray:
        """``y - d_y`` on the response scale (``y - expit(d_y)`` for the logit link)."""
        y = np.asarray(y, dtype=float)
        if self.link == "logit":
            return y - expit(self.d_y)
        return y - self.d_y

    def row_sigma(self) -> np.ndarray:
        if self.sigma_rows is not None:
            return self.sigma_rows
        return np.full(self.n, self.sigma_x)

    @property
    def heteroscedastic(self) -> bool:
        return self.sigma_rows is not None

    def with_top(self, k: int) -> "Distillation":
        """Keep only the first ``k`` top columns (k=0 gives the d0 summary)."""
        return replace(self, top_cols=self.top_cols[:, :k], top_idx=self.top_idx[:k])

    def to_dict(self) -> dict:
        return {"d_y": self.d_y.tolist(), "d_x": self.d_x.tolist(),
                "sigma_x": self.sigma_x, "top_idx": list(self.top_idx),
                "top_cols": self.top_cols.tolist(), "link": self.link,
                "sigma_rows": None if self.sigma_rows is None else self.sigma_rows.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Distillation":
        d = json.loads(text)
        n = len(d["d_y"])
        top = np.asarray(d["top_cols"], dtype=float).reshape(n, len(d["top_idx"]))
        return cls(d_y=d["d_y"], d_x=d["d_x"], sigma_x=d["sigma_x"], top_cols=top,
                   top_idx=d["top_idx"], link=d["link"], sigma_rows=d["sigma_rows"])


def default_k(p: int) -> int:
    """``ceil(2 log p)`` for p covariates in total."""
    return max(1, math.ceil(2 * math.log(p))) if p > 1 else 1


def link_for(response_kind: str) -> str:
    return "logit" if response_kind == "binary" else "identity"


def _intercept_only(y, response_kind):
    m = float(np.mean(y))
    if response_kind == "binary":
        m = min(max(m, 1e-6), 1 - 1e-6)
        m = math.log(m / (1 - m))
    return np.full(len(y), m)


def fit_y(Z, y, response_kind="continuous", config: LassoConfig | None = None,
          rng=None) -> CvLassoFit | None:
    """Cross-validated lasso of y on Z; ``None`` when there is nothing to fit."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[1] == 0 or np.ptp(y) == 0:
        return None
    try:
        return cv_lasso(Z, y, loss_for(response_kind), config, rng)
    except ValidationError as exc:
        # y uncorrelated with every column (degenerate penalty grid)
        if "degenerate" in str(exc):
            return None
        raise


def _dy_from_fit(Z, y, response_kind, fit):
    if fit is None:
        return _intercept_only(y, response_kind), np.zeros(np.shape(Z)[1] if np.ndim(Z) == 2 else 0)
    sel = fit.selected
    return sel.predict(Z), sel.beta


def distill_y_d0(Z, y, response_kind="continuous", config: LassoConfig | None = None,
                 rng=None):
    """``(d_y, beta_z)`` from a cross-validated lasso of y on Z.

    For a binary response ``d_y`` is the logistic linear predictor.
    """
    y = np.asarray(y, dtype=float)
    fit = fit_y(Z, y, response_kind, config, rng)
    return _dy_from_fit(np.asarray(Z, dtype=float), y, response_kind, fit)


def top_k_indices(beta_z, Z, y, k: int) -> tuple:
    """Indices of the ``k`` largest ``|beta_z|``, padded by marginal correlation.

    Ties go to the lower column index.
    """
    beta_z = np.asarray(beta_z, dtype=float)
    q = beta_z.shape[0]
    if not 0 <= k <= q:
        raise ValidationError(f"k must lie in [0, {q}], got {k}")
    idx = np.arange(q)
    nz = idx[beta_z != 0]
    order = nz[np.lexsort((nz, -np.abs(beta_z[nz])))]
    chosen = list(order[:k])
    if len(chosen) < k:
        Z = np.asarray(Z, dtype=float)
        y = np.asarray(y, dtype=float)
        zc = Z - Z.mean(axis=0)
        yc = y - y.mean()
        den = np.sqrt(np.sum(zc ** 2, axis=0)) * math.sqrt(np.sum(yc ** 2))
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.where(den > 0, np.abs(zc.T @ yc) / den, 0.0)
        rest = np.setdiff1d(idx, chosen)
        rest = rest[np.lexsort((rest, -corr[rest]))]
        chosen.extend(rest[:k - len(chosen)])
    return tuple(int(i) for i in chosen)


def distill_y_dI(Z, y, response_kind="continuous", k: int | None = None,
                 config: LassoConfig | None = None, rng=None):
    """``(d_y1, top_cols, top_idx)`` for the interaction statistic.

    ``k`` defaults to ``ceil(2 log p)`` with ``p = Z.shape[1] + 1``, capped at
    the number of columns of Z.
    """
    Z = np.asarray(Z, dtype=float)
    q = Z.shape[1]
    if k is None:
        k = min(default_k(q + 1), q)
    if not 1 <= k <= q:
        raise ValidationError(f"k must lie in [1, {q}], got {k}")
    d_y, beta = distill_y_d0(Z, y, response_kind, config, rng)
    idx = top_k_indices(beta, Z, y, k)
    return d_y, Z[:, list(idx)], idx


def distill_x(law: ConditionalLaw, Z):
    """``(d_x, sigma_x)``: the conditional mean and sd of x given Z.

    The observed column is deliberately not an argument.
    """
    return law.mean(Z), law.sigma


def distill(Z, y, law: ConditionalLaw, response_kind="continuous", k: int = 0,
            config: LassoConfig | None = None, rng=None, fit: CvLassoFit | None = None,
            d_y=None, beta_z=None) -> Distillation:
    """Assemble a :class:`Distillation`.

    A precomputed ``fit`` (or ``d_y`` with ``beta_z``) skips the lasso, which
    is how recycled fits are reused.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if d_y is None:
        if fit is None:
            fit = fit_y(Z, y, response_kind, config, rng)
        d_y, beta_z = _dy_from_fit(Z, y, response_kind, fit)
    idx = top_k_indices(beta_z, Z, y, k) if k else ()
    d_x, sigma_x = distill_x(law, Z)
    sig = None if law.is_gaussian else law.row_sigma(Z.shape[0])
    if sig is not None and np.all(sig == sig[0]):
        sig = None
    return Distillation(d_y=d_y, d_x=d_x, sigma_x=sigma_x, top_cols=Z[:, list(idx)],
                        top_idx=idx, sigma_rows=sig, link=link_for(response_kind))

