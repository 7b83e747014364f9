"""L1-penalized regression: pathwise coordinate descent and cross-validation.

Two losses are supported. Squared loss minimizes
``(1/2n) ||y - b0 - X beta||^2 + lam ||beta||_1`` and logistic loss minimizes
``(1/n) sum log(1 + exp(eta)) - y eta + lam ||beta||_1``. Columns are centered
and scaled to unit (population) variance inside the solver, so the penalty
applies to standardized coefficients while fits are reported on the original
scale.

Cross-validation uses the sequential rule: the selected index is the first
grid point whose held-out error is no larger than the next ``delta`` errors.
Fitting stops at the grid point ``g_hat + delta``, which is all that the
selected fit and the union active set depend on.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from ._cd import wls_cd
from ._errors import ConvergenceError, ValidationError

WEIGHT_FLOOR = 1e-5
MAX_IRLS = 200


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"

    @classmethod
    def coerce(cls, value) -> "LossKind":
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown loss {value!r}") from None


def loss_for(response_kind: str) -> LossKind:
    return LossKind.LOGISTIC if response_kind == "binary" else LossKind.SQUARED


def soft_threshold(w, t):
    """``sign(w) * max(|w| - t, 0)``; works elementwise on arrays."""
    if np.any(np.asarray(t) < 0):
        raise ValidationError("threshold must be nonnegative")
    out = np.sign(w) * np.maximum(np.abs(w) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    """Strictly decreasing positive penalty levels."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 2:
            raise ValidationError("a penalty grid needs at least 2 values")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValidationError("penalty values must be finite and positive")
        if np.any(np.diff(v) >= 0):
            raise ValidationError("penalty values must be strictly decreasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __getitem__(self, g):
        return float(self.values[g])


@dataclass(frozen=True)
class SequentialRule:
    delta: int = 5

    def __post_init__(self):
        if int(self.delta) != self.delta or self.delta < 1:
            raise ValidationError(f"delta must be a positive integer, got {self.delta}")


@dataclass(frozen=True)
class LassoConfig:
    """Solver and cross-validation settings.

    ``ratio=None`` picks 1e-3, or 1e-2 when there are fewer rows than columns.
    """

    n_lambdas: int = 100
    ratio: float | None = None
    n_folds: int = 10
    delta: int = 5
    tol: float = 1e-7
    max_sweeps: int = 100_000
    debug: bool = False

    def ratio_for(self, X) -> float:
        if self.ratio is not None:
            return self.ratio
        n, p = np.shape(X)
        return 1e-2 if n < p else 1e-3


@dataclass(frozen=True, eq=False)
class LassoFit:
    """One penalized fit, reported on the original column scale."""

    beta: np.ndarray
    intercept: float
    lam: float
    sweeps: int = field(default=0, compare=False)

    @property
    def active(self) -> tuple:
        return tuple(int(j) for j in np.flatnonzero(self.beta))

    def predict(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.beta

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "intercept": self.intercept,
                "lambda": self.lam}


class _Standardized:
    """Column-standardized copy of a design with back-transformation helpers."""

    def __init__(self, X):
        X = np.asarray(X, dtype=float)
        self.n, self.p = X.shape
        self.mean = X.mean(axis=0)
        Xc = X - self.mean
        sd = np.sqrt(np.mean(Xc ** 2, axis=0))
        tiny = 1e-12 * np.maximum(1.0, np.abs(self.mean))
        self.usable = sd > tiny
        self.sd = np.where(self.usable, sd, 1.0)
        self.Xs = np.asfortranarray(np.where(self.usable, Xc / self.sd, 0.0))

    def to_original(self, beta_s, b0_s):
        beta = beta_s / self.sd
        return beta, float(b0_s - self.mean @ beta)


def lambda_max(X, y) -> float:
    """Smallest penalty at which the all-zero fit is optimal (either loss)."""
    st = _Standardized(X)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(st.Xs.T @ (y - y.mean()))) / st.n)


def default_grid(X, y, loss="squared", G: int = 100, ratio: float = 1e-3) -> LambdaGrid:
    """Geometric grid from the null-path threshold down to ``ratio`` times it."""
    if G < 2:
        raise ValidationError("G must be at least 2")
    if not 0 < ratio < 1:
        raise ValidationError("ratio must lie in (0, 1)")
    LossKind.coerce(loss)
    lmax = lambda_max(X, y)
    if not lmax > 0:
        raise ValidationError("response is constant or uncorrelated with every "
                              "column; the penalty grid is degenerate")
    return LambdaGrid(lmax * ratio ** (np.arange(G) / (G - 1)))


def _logistic_objective(y, eta, beta_s, lam):
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(beta_s).sum())


class _PathSolver:
    """Warm-started solver over one design; call :meth:`fit` with decreasing lambdas."""

    def __init__(self, X, y, loss, config: LassoConfig):
        self.st = _Standardized(X)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.loss = LossKind.coerce(loss)
        self.cfg = config
        n, p = self.st.n, self.st.p
        self.beta = np.zeros(p)
        if self.loss is LossKind.SQUARED:
            self.b0 = float(self.y.mean())
        else:
            m = min(max(self.y.mean(), 1e-6), 1 - 1e-6)
            self.b0 = math.log(m / (1 - m))
        self._b0_null = self.b0
        self.ones = np.ones(n)
        # at or above this penalty the zero vector is exactly optimal
        self.lmax = float(np.max(np.abs(self.st.Xs.T @ (self.y - self.y.mean())), initial=0.0)) / n

    def _check(self, converged, g):
        if not converged:
            raise ConvergenceError(
                f"coordinate descent did not converge within {self.cfg.max_sweeps} "
                f"sweeps at grid index {g}", grid_index=g)

    def fit(self, lam: float, g: int = -1) -> LassoFit:
        cfg = self.cfg
        Xs = self.st.Xs
        if lam >= self.lmax:
            self.beta[:] = 0.0
            self.b0 = self._b0_null
            beta, b0 = self.st.to_original(self.beta, self.b0)
            return LassoFit(beta, b0, float(lam), 0)
        if self.loss is LossKind.SQUARED:
            r = self.y - self.b0 - Xs @ self.beta
            shift, sweeps, conv, mono = wls_cd(
                Xs, r, self.ones, self.beta, lam, self.st.usable, cfg.tol,
                cfg.max_sweeps, True, cfg.debug)
            self._check(conv, g)
            if cfg.debug and not mono:
                raise AssertionError(f"objective increased during a sweep at grid index {g}")
            self.b0 += shift
        else:
            sweeps = self._fit_logistic(lam, g)
        beta, b0 = self.st.to_original(self.beta, self.b0)
        return LassoFit(beta, b0, float(lam), int(sweeps))

    def _fit_logistic(self, lam, g):
        cfg = self.cfg
        Xs, y = self.st.Xs, self.y
        eta = self.b0 + Xs @ self.beta
        obj = _logistic_objective(y, eta, self.beta, lam)
        total = 0
        for _ in range(MAX_IRLS):
            mu = expit(eta)
            beta_old, b0_old = self.beta.copy(), self.b0
            w = np.maximum(mu * (1 - mu), WEIGHT_FLOOR)
            r = (y - mu) / w
            shift, sweeps, conv, _ = wls_cd(Xs, r, w, self.beta, lam, self.st.usable,
                                            cfg.tol, cfg.max_sweeps, True, False)
            self._check(conv, g)
            total += sweeps
            self.b0 = b0_old + shift
            eta_new = self.b0 + Xs @ self.beta
            obj_new = _logistic_objective(y, eta_new, self.beta, lam)
            if obj_new > obj + 1e-12 * abs(obj):
                # Newton step overshot: take the majorization step instead,
                # which cannot increase the objective
                self.beta[:] = beta_old
                w = np.full_like(y, 0.25)
                r = (y - mu) / w
                shift, sweeps, conv, _ = wls_cd(Xs, r, w, self.beta, lam, self.st.usable,
                                                cfg.tol, cfg.max_sweeps, True, False)
                self._check(conv, g)
                total += sweeps
                self.b0 = b0_old + shift
                eta_new = self.b0 + Xs @ self.beta
                obj_new = _logistic_objective(y, eta_new, self.beta, lam)
            move = max(np.max(np.abs(self.beta - beta_old), initial=0.0),
                       abs(self.b0 - b0_old))
            eta, obj = eta_new, obj_new
            if move < max(cfg.tol, 1e-12) * 10:
                return total
        raise ConvergenceError(
            f"logistic fit did not converge within {MAX_IRLS} reweighting steps "
            f"at grid index {g}", grid_index=g)


def fit_path(X, y, loss="squared", grid: LambdaGrid | Sequence[float] = None,
             config: LassoConfig | None = None, stop: int | None = None) -> list[LassoFit]:
    """Fit the lasso at every grid value with warm starts.

    Parameters
    ----------
    X : (n, p) array
    y : (n,) array
    loss : {"squared", "logistic"}
    grid : LambdaGrid or decreasing sequence, optional
        Defaults to :func:`default_grid`.
    stop : int, optional
        Last grid index to fit (inclusive).
    """
    X, y = _check_xy(X, y, loss)
    config = config or LassoConfig()
    if grid is None:
        grid = default_grid(X, y, loss, config.n_lambdas, config.ratio_for(X))
    elif not isinstance(grid, LambdaGrid):
        grid = LambdaGrid(grid)
    solver = _PathSolver(X, y, loss, config)
    last = len(grid) - 1 if stop is None else stop
    return [solver.fit(grid[g], g) for g in range(last + 1)]


def _check_xy(X, y, loss):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"inconsistent shapes X{X.shape}, y{y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite entries in X or y")
    if LossKind.coerce(loss) is LossKind.LOGISTIC and not np.all((y == 0) | (y == 1)):
        raise ValidationError("logistic loss requires a 0/1 response")
    return X, y


class Selection(NamedTuple):
    g_hat: int
    g_tilde: int


def _rule_holds(errors, g, delta):
    return errors[g] <= min(errors[g + 1:g + delta + 1])


def sequential_select(cv_errors, rule: SequentialRule | int = 5,
                      return_fallback: bool = False):
    """First local minimum of a cross-validation curve (0-based indices).

    Returns ``(g_hat, g_tilde)`` with ``g_tilde = g_hat + delta``. When no
    grid point qualifies the convention is ``g_tilde = G - 1``. With
    ``return_fallback`` a third element flags that case.
    """
    delta = rule.delta if isinstance(rule, SequentialRule) else SequentialRule(rule).delta
    e = [float(v) for v in cv_errors]
    G = len(e)
    if G < delta + 1:
        raise ValidationError(f"need at least {delta + 1} errors, got {G}")
    for g in range(G - delta):
        if _rule_holds(e, g, delta):
            out = Selection(g, g + delta)
            return (*out, False) if return_fallback else out
    out = Selection(G - 1 - delta, G - 1)
    return (*out, True) if return_fallback else out


def make_folds(n: int, K: int, rng) -> list[np.ndarray]:
    """Seeded shuffle split into ``K`` contiguous blocks (each sorted)."""
    if K < 2 or n < K:
        raise ValidationError(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(rng).permutation(n)
    return [np.sort(b) for b in np.array_split(perm, K)]


def fold_rng(seed):
    return np.random.default_rng(seed)


def _heldout_loss(loss, y, eta):
    if loss is LossKind.SQUARED:
        return float(np.sum((y - eta) ** 2))
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


@dataclass(frozen=True, eq=False)
class CvLassoFit:
    """Cross-validated lasso path truncated at the stopping index.

    ``path[g]`` and ``fold_paths[k][g]`` exist for ``g <= g_tilde``;
    ``cv_errors`` has the same length.
    """

    grid: LambdaGrid
    path: list
    fold_paths: list
    cv_errors: np.ndarray
    g_hat: int
    g_tilde: int
    union_active: tuple
    folds: list
    loss: LossKind
    fallback: bool = False

    @property
    def selected(self) -> LassoFit:
        return self.path[self.g_hat]

    def to_dict(self) -> dict:
        return {
            "loss": self.loss.value,
            "grid": self.grid.values.tolist(),
            "path": [f.to_dict() for f in self.path],
            "fold_paths": [[f.to_dict() for f in fp] for fp in self.fold_paths],
            "cv_errors": self.cv_errors.tolist(),
            "g_hat": self.g_hat,
            "g_tilde": self.g_tilde,
            "fallback": self.fallback,
            "union_active": list(self.union_active),
            "folds": [f.tolist() for f in self.folds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "CvLassoFit":
        d = json.loads(text)

        def fit(e):
            return LassoFit(np.asarray(e["beta"], dtype=float), e["intercept"], e["lambda"])

        return cls(grid=LambdaGrid(d["grid"]), path=[fit(e) for e in d["path"]],
                   fold_paths=[[fit(e) for e in fp] for fp in d["fold_paths"]],
                   cv_errors=np.asarray(d["cv_errors"], dtype=float),
                   g_hat=d["g_hat"], g_tilde=d["g_tilde"],
                   union_active=tuple(d["union_active"]),
                   folds=[np.asarray(f, dtype=np.int64) for f in d["folds"]],
                   loss=LossKind(d["loss"]), fallback=d["fallback"])


def cross_validate(X, y, loss="squared", grid: LambdaGrid | None = None, K: int = 10,
                   rule: SequentialRule | int = 5, rng=None, *,
                   config: LassoConfig | None = None, folds=None) -> CvLassoFit:
    """K-fold cross-validated lasso with the sequential selection rule.

    Fold fits advance one grid point at a time and stop as soon as the rule
    resolves, so ``cv_errors`` covers grid indices ``0 .. g_tilde``. Passing
    ``folds`` (and the same ``grid``) reproduces another run's partition,
    which is what recycling relies on.
    """
    X, y = _check_xy(X, y, loss)
    loss = LossKind.coerce(loss)
    config = config or LassoConfig()
    rule = rule if isinstance(rule, SequentialRule) else SequentialRule(rule)
    n = X.shape[0]
    if grid is None:
        grid = default_grid(X, y, loss, config.n_lambdas, config.ratio_for(X))
    if len(grid) < rule.delta + 1:
        raise ValidationError("grid is shorter than delta + 1")
    if folds is None:
        folds = make_folds(n, K, rng if rng is not None else 0)
    else:
        folds = [np.asarray(f, dtype=np.int64) for f in folds]
    mask = np.ones(n, dtype=bool)
    solvers, tests = [], []
    for f in folds:
        mask[:] = True
        mask[f] = False
        solvers.append(_PathSolver(X[mask], y[mask], loss, config))
        tests.append(f)
    fold_paths = [[] for _ in folds]
    errors = []
    G = len(grid)
    sel = None
    for g in range(G):
        e = 0.0
        for k, (solver, f) in enumerate(zip(solvers, tests)):
            fit = solver.fit(grid[g], g)
            fold_paths[k].append(fit)
            e += _heldout_loss(loss, y[f], fit.predict(X[f]))
        errors.append(e)
        c = g - rule.delta
        if c >= 0 and _rule_holds(errors, c, rule.delta):
            sel = (c, g, False)
            break
    if sel is None:
        sel = (G - 1 - rule.delta, G - 1, True)
    g_hat, g_tilde, fallback = sel
    path = fit_path(X, y, loss, grid, config, stop=g_tilde)
    active = set(path[g_hat].active)
    for fp in fold_paths:
        for fit in fp[:g_tilde + 1]:
            active.update(fit.active)
    return CvLassoFit(grid=grid, path=path, fold_paths=fold_paths,
                      cv_errors=np.asarray(errors), g_hat=g_hat, g_tilde=g_tilde,
                      union_active=tuple(sorted(active)), folds=folds, loss=loss,
                      fallback=fallback)


def cv_lasso(X, y, loss="squared", config: LassoConfig | None = None, rng=None) -> CvLassoFit:
    """:func:`cross_validate` with the grid, fold count and rule taken from ``config``."""
    config = config or LassoConfig()
    return cross_validate(X, y, loss, None, config.n_folds, config.delta, rng, config=config)


def kkt_violation(X, y, fit: LassoFit, loss="squared") -> float:
    """Largest relative breach of the stationarity conditions for ``fit``."""
    st = _Standardized(X)
    y = np.asarray(y, dtype=float)
    eta = fit.predict(X)
    resid = y - eta if LossKind.coerce(loss) is LossKind.SQUARED else y - expit(eta)
    grad = st.Xs.T @ resid / st.n
    beta_s = fit.beta * st.sd
    lam = fit.lam
    worst = 0.0
    for j in range(st.p):
        if not st.usable[j]:
            continue
        if beta_s[j] == 0:
            worst = max(worst, abs(grad[j]) / lam - 1)
        else:
            worst = max(worst, abs(grad[j] - lam * np.sign(beta_s[j])) / lam)
    return worst
