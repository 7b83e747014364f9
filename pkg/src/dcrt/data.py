"""Datasets, covariate models and the conditional law of one column given the rest.

A :class:`CovariateModel` stores the joint Gaussian description of the
covariates; :func:`conditional_law` turns it into the regression form
``X_j = intercept + X_{-j} @ gamma + noise`` that every test consumes.
Nodewise estimation skips the joint model and yields the per-column laws
directly.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from ._errors import NumericalError, ValidationError

RESPONSE_KINDS = ("continuous", "binary")
MODEL_SOURCES = ("exact", "ledoit_wolf", "nodewise")
LAW_FAMILIES = ("gaussian", "empirical_discrete", "continuous")

# Cholesky pivots below this fraction of the largest pivot are rejected.
PIVOT_RATIO = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def infer_response_kind(y) -> str:
    y = np.asarray(y, dtype=float)
    return "binary" if np.all((y == 0.0) | (y == 1.0)) else "continuous"


@dataclass(frozen=True, eq=False)
class DataSet:
    """Response vector plus covariate matrix with column labels.

    Parameters
    ----------
    y : array_like, shape (n,)
        Response, real valued or coded 0/1.
    X : array_like, shape (n, p)
        Covariates.
    names : sequence of str, optional
        Unique column labels; defaults to ``x0 .. x{p-1}``.
    response_kind : {"continuous", "binary"}, optional
        Inferred from ``y`` when omitted.
    """

    y: np.ndarray
    X: np.ndarray
    names: tuple = None
    response_kind: str = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValidationError("X must be a 2-d array")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValidationError(
                f"y has shape {y.shape}, expected ({X.shape[0]},)")
        n, p = X.shape
        if n < 2:
            raise ValidationError(f"need at least 2 rows, got {n}")
        if p < 1:
            raise ValidationError("need at least one covariate")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValidationError("non-finite entries in data")
        names = self.names
        if names is None:
            names = tuple(f"x{j}" for j in range(p))
        names = tuple(str(s) for s in names)
        if len(names) != p:
            raise ValidationError(f"{len(names)} names for {p} columns")
        if len(set(names)) != p:
            raise ValidationError("column names must be unique")
        kind = self.response_kind or infer_response_kind(y)
        if kind not in RESPONSE_KINDS:
            raise ValidationError(f"unknown response kind {kind!r}")
        if kind == "binary" and not np.all((y == 0.0) | (y == 1.0)):
            raise ValidationError("binary response must contain only 0 and 1")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "response_kind", kind)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown variable {name!r}") from None

    def split(self, j: int):
        """Return ``(x, Z)``: column ``j`` and the remaining columns."""
        return self.X[:, j], np.delete(self.X, j, axis=1)


def load_csv(path, response_column: str) -> DataSet:
    """Read a comma-delimited file with one header row into a :class:`DataSet`.

    Covariates keep their header order; the response column is removed from
    them. The response is binary iff every value is 0 or 1.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=",", quoting=csv.QUOTE_NONE)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        seen = set()
        for h in header:
            if h in seen:
                raise ValidationError(f"{path}: duplicate header {h!r}")
            seen.add(h)
        if response_column not in header:
            raise ValidationError(
                f"{path}: response column {response_column!r} not in header")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: line {line_no} has {len(row)} fields, "
                    f"expected {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise ValidationError(
                        f"{path}: line {line_no}, column {col!r}: "
                        f"cannot parse {cell!r} as a finite number")
                values.append(v)
            rows.append(values)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    table = np.array(rows)
    r = header.index(response_column)
    keep = [i for i in range(len(header)) if i != r]
    return DataSet(y=table[:, r], X=table[:, keep],
                   names=tuple(header[i] for i in keep))


def _check_pivots(chol_diag, what):
    piv = chol_diag ** 2
    if piv.min() < PIVOT_RATIO * piv.max():
        raise NumericalError(
            f"{what} is numerically singular "
            f"(smallest/largest Cholesky pivot {piv.min() / piv.max():.2e})")


@dataclass(frozen=True, eq=False)
class CovariateModel:
    """Joint Gaussian covariate model N(mean, covariance)."""

    mean: np.ndarray
    covariance: np.ndarray
    source: str = "exact"

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        p = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (p, p):
            raise ValidationError(
                f"mean has shape {mean.shape}, covariance {cov.shape}")
        if self.source not in MODEL_SOURCES:
            raise ValidationError(f"unknown model source {self.source!r}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValidationError("non-finite entries in covariate model")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10:
            raise ValidationError("covariance is not symmetric")
        if np.any(np.diag(cov) <= 0):
            raise ValidationError("covariance has a non-positive diagonal entry")
        cov = (cov + cov.T) / 2
        try:
            chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            raise ValidationError("covariance is not positive definite") from None
        try:
            _check_pivots(np.diag(chol), "covariance")
        except NumericalError as exc:
            raise ValidationError(str(exc)) from None
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(cov))

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def precision(self) -> np.ndarray:
        c = linalg.cho_factor(self.covariance, lower=True)
        theta = linalg.cho_solve(c, np.eye(self.p))
        return (theta + theta.T) / 2

    def sample(self, n: int, rng) -> np.ndarray:
        chol = linalg.cholesky(self.covariance, lower=True)
        return self.mean + rng.standard_normal((n, self.p)) @ chol.T

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(),
                "covariance": self.covariance.tolist(),
                "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateModel":
        try:
            return cls(mean=d["mean"], covariance=d["covariance"],
                       source=d.get("source", "exact"))
        except KeyError as exc:
            raise ValidationError(f"covariate model is missing field {exc}") from None


@dataclass(frozen=True, eq=False)
class ConditionalLaw:
    """Law of one covariate given the others: ``x = intercept + Z @ gamma + noise``.

    ``family`` selects the noise law. ``"gaussian"`` uses N(0, sigma^2).
    ``"empirical_discrete"`` puts mass ``pmf`` on the increasing values
    ``support``; ``pmf`` is either one row shared by all observations or one
    row per observation. ``"continuous"`` uses the frozen ``scipy.stats``
    distribution in ``noise``.
    """

    gamma: np.ndarray
    intercept: float
    sigma: float
    family: str = "gaussian"
    support: np.ndarray | None = None
    pmf: np.ndarray | None = None
    noise: object = field(default=None, repr=False)

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "gamma", _frozen(gamma.ravel()))
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "sigma", float(self.sigma))
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if self.family not in LAW_FAMILIES:
            raise ValidationError(f"unknown law family {self.family!r}")
        if self.family == "empirical_discrete":
            support = np.asarray(self.support, dtype=float).ravel()
            pmf = np.asarray(self.pmf, dtype=float)
            if support.size < 1 or np.any(np.diff(support) <= 0):
                raise ValidationError("support must be strictly increasing")
            if pmf.shape[-1] != support.size or pmf.ndim not in (1, 2):
                raise ValidationError("pmf does not match support")
            if np.any(pmf < 0) or np.any(np.abs(pmf.sum(axis=-1) - 1) > 1e-9):
                raise ValidationError("pmf rows must be nonnegative and sum to 1")
            object.__setattr__(self, "support", _frozen(support))
            object.__setattr__(self, "pmf", _frozen(pmf))
        elif self.family == "continuous" and self.noise is None:
            raise ValidationError("continuous family needs a noise distribution")

    @classmethod
    def discrete(cls, gamma, intercept, support, pmf):
        """Build a discrete-noise law; ``sigma`` is the (average) noise sd."""
        support = np.asarray(support, dtype=float)
        pmf = np.asarray(pmf, dtype=float)
        m = pmf @ support
        var = pmf @ support ** 2 - m ** 2
        return cls(gamma, intercept, math.sqrt(float(np.mean(var))),
                   family="empirical_discrete", support=support, pmf=pmf)

    @classmethod
    def continuous(cls, gamma, intercept, noise):
        return cls(gamma, intercept, float(noise.std()), family="continuous",
                   noise=noise)

    @property
    def dim(self) -> int:
        return self.gamma.shape[0]

    def _check_Z(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1 and self.dim == 0:
            Z = Z.reshape(-1, 0)
        if Z.ndim != 2 or Z.shape[1] != self.dim:
            raise ValidationError(
                f"Z has shape {Z.shape}, law expects {self.dim} columns")
        if self.family == "empirical_discrete" and self.pmf.ndim == 2 \
                and self.pmf.shape[0] != Z.shape[0]:
            raise ValidationError("per-row pmf does not match the rows of Z")
        return Z

    def location(self, Z) -> np.ndarray:
        """``intercept + Z @ gamma`` (the conditional mean minus the noise mean)."""
        Z = self._check_Z(Z)
        return self.intercept + Z @ self.gamma

    def noise_mean(self, n: int) -> np.ndarray:
        if self.family == "gaussian":
            return np.zeros(n)
        if self.family == "continuous":
            return np.full(n, float(self.noise.mean()))
        return np.broadcast_to(self.pmf @ self.support, (n,)).astype(float)

    def row_sigma(self, n: int) -> np.ndarray:
        """Per-row conditional standard deviation."""
        if self.family == "empirical_discrete":
            m = self.pmf @ self.support
            var = self.pmf @ self.support ** 2 - m ** 2
            return np.broadcast_to(np.sqrt(var), (n,)).astype(float)
        return np.full(n, self.sigma)

    def mean(self, Z) -> np.ndarray:
        """Row-wise conditional mean E[x | Z]."""
        loc = self.location(Z)
        return loc + self.noise_mean(loc.shape[0])

    @property
    def is_gaussian(self) -> bool:
        return self.family == "gaussian"


def conditional_law(model: CovariateModel, j: int) -> ConditionalLaw:
    """Gaussian law of column ``j`` given the others under ``model``."""
    p = model.p
    if not 0 <= j < p:
        raise ValidationError(f"column index {j} out of range for p={p}")
    cov, mu = model.covariance, model.mean
    if p == 1:
        return ConditionalLaw(np.zeros(0), mu[0], math.sqrt(cov[0, 0]))
    rest = np.delete(np.arange(p), j)
    S = cov[np.ix_(rest, rest)]
    s = cov[rest, j]
    try:
        c = linalg.cho_factor(S, lower=True)
        _check_pivots(np.diag(c[0]), "covariance of the other columns")
    except (linalg.LinAlgError, NumericalError):
        raise NumericalError(
            f"covariance of the columns other than {j} is singular "
            f"(condition number estimate {np.linalg.cond(S):.3e})") from None
    gamma = linalg.cho_solve(c, s)
    var = cov[j, j] - s @ gamma
    if not var > 0:
        raise NumericalError(f"non-positive conditional variance for column {j}")
    return ConditionalLaw(gamma, mu[j] - gamma @ mu[rest], math.sqrt(var))


def conditional_laws(model: CovariateModel) -> list[ConditionalLaw]:
    """All p conditional laws at once, read off the precision matrix."""
    theta = model.precision
    mu = model.mean
    laws = []
    for j in range(model.p):
        rest = np.delete(np.arange(model.p), j)
        gamma = -theta[rest, j] / theta[j, j]
        laws.append(ConditionalLaw(gamma, mu[j] - gamma @ mu[rest],
                                   1.0 / math.sqrt(theta[j, j])))
    return laws


def resample_columns(law: ConditionalLaw, Z, M: int, rng) -> np.ndarray:
    """``M`` independent draws of the column from its conditional law, shape (n, M).

    Only ``Z`` and ``rng`` are read, so the draws are independent of the
    response and of the observed column.
    """
    loc = law.location(Z)
    n = loc.shape[0]
    if law.family == "gaussian":
        eps = law.sigma * rng.standard_normal((M, n)).T
    elif law.family == "continuous":
        eps = np.asarray(law.noise.rvs(size=(M, n), random_state=rng)).T
    else:
        u = rng.random((M, n)).T
        cum = np.cumsum(law.pmf, axis=-1)
        cum = np.broadcast_to(cum, (n, law.support.size))
        idx = (u[:, :, None] > cum[:, None, :]).sum(axis=2)
        eps = law.support[np.minimum(idx, law.support.size - 1)]
    return loc[:, None] + eps


def resample_column(law: ConditionalLaw, Z, rng) -> np.ndarray:
    """One draw of the column from its conditional law given ``Z``."""
    return resample_columns(law, Z, 1, rng)[:, 0]


def _centered_columns(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValidationError("need a 2-d matrix with at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite entries in X")
    mean = X.mean(axis=0)
    Xc = X - mean
    var = np.mean(Xc ** 2, axis=0)
    bad = np.flatnonzero(var <= 1e-14 * np.maximum(1.0, mean ** 2))
    if bad.size:
        raise ValidationError(f"column {bad[0]} has zero variance")
    return mean, Xc


def ledoit_wolf_shrinkage(X):
    """Ledoit-Wolf shrinkage of the sample covariance toward a scaled identity.

    Returns
    -------
    cov : ndarray, shape (p, p)
    intensity : float in [0, 1]
        Weight on the scaled-identity target.
    """
    _, Xc = _centered_columns(X)
    n, p = Xc.shape
    S = Xc.T @ Xc / n
    mu = np.trace(S) / p
    target = mu * np.eye(p)
    d2 = np.sum((S - target) ** 2) / p
    sq = np.sum(Xc ** 2, axis=1)
    b2_bar = (np.sum(sq ** 2) - n * np.sum(S ** 2)) / (n ** 2 * p)
    b2 = min(max(b2_bar, 0.0), d2)
    intensity = 0.0 if d2 <= 0 else float(np.clip(b2 / d2, 0.0, 1.0))
    return intensity * target + (1 - intensity) * S, intensity


def estimate_ledoit_wolf(X) -> CovariateModel:
    """Ledoit-Wolf covariance model with conditional variances de-biased.

    After shrinkage each column is rescaled so that its implied conditional
    variance equals the mean squared residual of regressing it on the other
    columns with the implied regression coefficients.
    """
    mean, Xc = _centered_columns(X)
    cov, _ = ledoit_wolf_shrinkage(X)
    if cov.shape[0] == 1:
        return CovariateModel(mean, cov, source="ledoit_wolf")
    c = linalg.cho_factor(cov, lower=True)
    theta = linalg.cho_solve(c, np.eye(cov.shape[0]))
    diag = np.diag(theta)
    resid = (Xc @ theta) / diag
    msr = np.mean(resid ** 2, axis=0)
    d = np.sqrt(msr * diag)
    cov = d[:, None] * cov * d[None, :]
    return CovariateModel(mean, (cov + cov.T) / 2, source="ledoit_wolf")


def estimate_nodewise_lasso(X, config=None, rng=None) -> list[ConditionalLaw]:
    """Per-column Gaussian laws from cross-validated lasso regressions.

    Column ``j`` is regressed on the others; ``sigma`` is the root mean
    squared residual. With a single column the law is its marginal
    (population standard deviation).
    """
    from .lasso import LassoConfig, cross_validate, default_grid, fold_rng

    mean, Xc = _centered_columns(X)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p == 1:
        return [ConditionalLaw(np.zeros(0), mean[0], math.sqrt(np.mean(Xc[:, 0] ** 2)))]
    config = config or LassoConfig()
    laws = []
    for j in range(p):
        Z = np.delete(X, j, axis=1)
        x = X[:, j]
        grid = default_grid(Z, x, "squared", config.n_lambdas, config.ratio_for(Z))
        cv = cross_validate(Z, x, "squared", grid, config.n_folds, config.delta,
                            fold_rng(rng if rng is not None else 0), config=config)
        fit = cv.selected
        resid = x - fit.intercept - Z @ fit.beta
        sd = math.sqrt(np.mean(Xc[:, j] ** 2))
        sigma = math.sqrt(np.mean(resid ** 2))
        if sigma < 1e-2 * sd:
            warnings.warn(
                f"column {j} is nearly collinear with the others "
                f"(residual sd {sigma:.3g} vs marginal sd {sd:.3g})",
                RuntimeWarning, stacklevel=2)
            sigma = max(sigma, 1e-12 * sd)
        laws.append(ConditionalLaw(fit.beta, fit.intercept, sigma))
    return laws


def laws_to_dict(laws: Sequence[ConditionalLaw], names=None) -> dict:
    out = {"source": "nodewise",
           "laws": [{"gamma": law.gamma.tolist(), "intercept": law.intercept,
                     "sigma": law.sigma} for law in laws]}
    if names is not None:
        out["names"] = list(names)
    return out


def save_model_json(model, path, names=None):
    """Write a :class:`CovariateModel` or a list of nodewise laws as JSON."""
    if isinstance(model, CovariateModel):
        d = model.to_dict()
        if names is not None:
            d["names"] = list(names)
    else:
        d = laws_to_dict(model, names)
    Path(path).write_text(json.dumps(d, indent=1) + "\n", encoding="utf-8")


def load_model_json(path):
    """Read a covariate model file; returns a CovariateModel or a list of laws."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    if "laws" in d:
        try:
            return [ConditionalLaw(l["gamma"], l["intercept"], l["sigma"])
                    for l in d["laws"]]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}: malformed law entry ({exc})") from None
    return CovariateModel.from_dict(d)


def laws_for(model, p: int) -> list[ConditionalLaw]:
    """Normalize a covariate model or law list to ``p`` conditional laws."""
    if isinstance(model, CovariateModel):
        if model.p != p:
            raise ValidationError(f"model has {model.p} columns, data has {p}")
        return conditional_laws(model)
    laws = list(model)
    if len(laws) != p:
        raise ValidationError(f"{len(laws)} conditional laws for {p} columns")
    for j, law in enumerate(laws):
        if law.dim != p - 1:
            raise ValidationError(
                f"law {j} expects {law.dim} other columns, data has {p - 1}")
    return laws


__all__ = [
    "DataSet", "CovariateModel", "ConditionalLaw", "load_csv",
    "conditional_law", "conditional_laws", "estimate_ledoit_wolf",
    "ledoit_wolf_shrinkage", "estimate_nodewise_lasso", "resample_column",
    "resample_columns", "save_model_json", "load_model_json", "laws_for",
    "infer_response_kind",
]
