"""Variable selection: per-variable tests, screening, recycling and corrections.

A pipeline run does the following:

1. optionally screen, keeping the active set of one cross-validated lasso;
2. distill y for every tested column, either by refitting on the other
   columns or, with recycling, by reading off the full fit for columns
   outside its union active set;
3. compute one p-value per tested column (p = 1 for screened-out columns);
4. apply Bonferroni or Benjamini-Hochberg.

Each column's random stream is ``default_rng([seed, j])``, so results do not
depend on scheduling or on the number of workers.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._errors import DcrtError, ValidationError
from .crt import (D0, DI, crt_p_value, d0_rf_p_value, dI_rf_p_value, gauss_transform,
                  gcm_p_value, hrt_fit, ocrt_p_value)
from .crt.outcome import TestOutcome
from .data import CovariateModel, DataSet, laws_for
from .distill import Distillation, default_k, distill
from .lasso import CvLassoFit, LassoConfig, cross_validate, cv_lasso, loss_for

METHODS = ("d0", "dI", "ocrt", "ocrt_no_soft", "ocrt_centered", "gcm", "hrt")
ENGINES = ("rf", "resample")
ERROR_RATES = ("fwer_bonferroni", "fdr_bh")
DEFAULT_M_SINGLE = 2000


def bh(p_values, alpha: float) -> tuple:
    """Benjamini-Hochberg step-up; returns the rejected indices in increasing order."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return ()
    order = np.argsort(p, kind="stable")
    ok = p[order] <= alpha * np.arange(1, m + 1) / m
    if not ok.any():
        return ()
    k = int(np.max(np.flatnonzero(ok))) + 1
    return tuple(sorted(int(i) for i in order[:k]))


def bonferroni(p_values, alpha: float) -> tuple:
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return ()
    return tuple(int(i) for i in np.flatnonzero(p <= alpha / p.size))


def correct(p_values, alpha, error_rate) -> tuple:
    if error_rate == "fdr_bh":
        return bh(p_values, alpha)
    if error_rate == "fwer_bonferroni":
        return bonferroni(p_values, alpha)
    raise ValidationError(f"unknown error rate {error_rate!r}")


def screened_p_values(p_raw, S, p: int) -> np.ndarray:
    """Length-``p`` vector with ``p_raw[i]`` at ``S[i]`` and 1 elsewhere."""
    S = np.asarray([int(j) for j in S], dtype=np.int64)
    p_raw = np.asarray(p_raw, dtype=float)
    if p_raw.shape != S.shape:
        raise ValidationError(f"{p_raw.size} p-values for {S.size} screened variables")
    out = np.ones(p)
    out[S] = p_raw
    return out


def screen(X, y, response_kind="continuous", config: LassoConfig | None = None,
           rng=None) -> tuple:
    """Active set of the cross-validated lasso of y on all columns."""
    cv = cv_lasso(X, y, loss_for(response_kind), config, rng)
    return cv.selected.active


@dataclass(frozen=True, eq=False)
class Recycled:
    """Per-column response distillations sharing one full fit.

    ``d_y[j]`` and ``beta[j]`` (coefficients on the columns other than j)
    exist for every requested column. ``refit`` lists the columns that
    needed their own cross-validated fit.
    """

    full: CvLassoFit | None
    d_y: dict
    beta: dict
    refit: tuple
    n_fits: int


def _loco_fit(X, y, j, loss, config, full: CvLassoFit | None, fold_seed):
    Xj = np.delete(X, j, axis=1)
    if full is None:
        return cross_validate(Xj, y, loss, None, config.n_folds, config.delta, fold_seed,
                              config=config)
    return cross_validate(Xj, y, loss, full.grid, rule=config.delta, config=config,
                          folds=full.folds)


def recycle_distillations(X, y, response_kind="continuous",
                          config: LassoConfig | None = None, rng=0, columns=None,
                          full: CvLassoFit | None = None, n_jobs: int = 1) -> Recycled:
    """Response distillations for every column from one full fit plus refits on A.

    For ``j`` outside the union active set the full-data fit without column
    ``j`` is already the leave-one-column-out fit, so ``d_y`` is the cached
    full prediction. Columns in the set are refit on the same grid and folds.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    config = config or LassoConfig()
    loss = loss_for(response_kind)
    p = X.shape[1]
    columns = range(p) if columns is None else [int(j) for j in columns]
    n_fits = 0
    if full is None:
        full = cv_lasso(X, y, loss, config, rng)
        n_fits = 1
    sel = full.selected
    pred = sel.predict(X)
    A = set(full.union_active)
    todo = [j for j in columns if j in A]
    d_y, beta = {}, {}
    for j in columns:
        if j not in A:
            d_y[j] = pred
            beta[j] = np.delete(sel.beta, j)

    def refit(j):
        return j, _loco_fit(X, y, j, loss, config, full, None).selected

    for j, fit in _map(refit, todo, n_jobs):
        d_y[j] = fit.predict(np.delete(X, j, axis=1))
        beta[j] = fit.beta
    return Recycled(full, d_y, beta, tuple(todo), n_fits + len(todo))


def naive_distillations(X, y, response_kind="continuous", config: LassoConfig | None = None,
                        fold_seed=0, columns=None, n_jobs: int = 1) -> Recycled:
    """Leave-one-column-out cross-validated fits for every requested column."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    config = config or LassoConfig()
    loss = loss_for(response_kind)
    columns = range(X.shape[1]) if columns is None else [int(j) for j in columns]

    def refit(j):
        if X.shape[1] == 1:
            return j, None
        try:
            return j, _loco_fit(X, y, j, loss, config, None, fold_seed).selected
        except ValidationError as exc:
            if "degenerate" in str(exc):
                return j, None
            raise

    d_y, beta = {}, {}
    n = X.shape[0]
    for j, fit in _map(refit, list(columns), n_jobs):
        if fit is None:
            d_y[j] = _constant_fit(y, response_kind, n)
            beta[j] = np.zeros(X.shape[1] - 1)
        else:
            d_y[j] = fit.predict(np.delete(X, j, axis=1))
            beta[j] = fit.beta
    return Recycled(None, d_y, beta, tuple(columns), len(d_y))


def _constant_fit(y, response_kind, n):
    m = float(np.mean(y))
    if response_kind == "binary":
        m = min(max(m, 1e-6), 1 - 1e-6)
        m = math.log(m / (1 - m))
    return np.full(n, m)


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True)
class SelectionConfig:
    """Pipeline settings.

    ``M=None`` uses ``ceil(5 p / alpha)`` resamples (2000 when ``alpha`` is 0).
    ``k=None`` uses ``ceil(2 log p)`` interaction columns.
    ``fold_seed`` fixes the cross-validation partition independently of
    ``seed``, which drives resampling.
    """

    method: str = "d0"
    engine: str = "rf"
    alpha: float = 0.1
    error_rate: str = "fwer_bonferroni"
    screening: bool = True
    recycling: bool = True
    M: int | None = None
    seed: int = 0
    k: int | None = None
    lasso: LassoConfig = field(default_factory=LassoConfig)
    fold_seed: int = 0
    n_jobs: int = 1
    hrt_split: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        if self.engine not in ENGINES:
            raise ValidationError(f"unknown engine {self.engine!r}; valid: {', '.join(ENGINES)}")
        if not 0 <= self.alpha < 1:
            raise ValidationError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.error_rate not in ERROR_RATES:
            raise ValidationError(f"unknown error rate {self.error_rate!r}")
        if self.M is not None and (int(self.M) != self.M or self.M < 1):
            raise ValidationError(f"M must be a positive integer, got {self.M}")
        if self.k is not None and self.k < 1:
            raise ValidationError(f"k must be at least 1, got {self.k}")

    def resamples(self, p: int) -> int:
        if self.M is not None:
            return int(self.M)
        if self.alpha <= 0:
            return DEFAULT_M_SINGLE
        return int(math.ceil(5 * p / self.alpha))

    @property
    def uses_distillation(self) -> bool:
        return self.method in ("d0", "dI", "gcm")


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """P-values, screened set and rejections of one pipeline run."""

    p_values: np.ndarray
    screened: tuple
    rejected: tuple
    outcomes: tuple
    names: tuple
    alpha: float
    error_rate: str
    timings: dict = field(compare=False)
    n_fits: int = 0
    failures: tuple = ()
    provenance: dict = field(default_factory=dict)

    def to_dict(self, timings: bool = True) -> dict:
        d = {
            "alpha": self.alpha,
            "error_rate": self.error_rate,
            "results": [o.to_dict() for o in self.outcomes],
            "screened": [self.names[j] for j in self.screened],
            "rejected": [self.names[j] for j in self.rejected],
        }
        if timings:
            d["timings_ms"] = {k: round(v * 1e3, 3) for k, v in self.timings.items()}
        d["provenance"] = dict(self.provenance, n_fits=self.n_fits,
                               failures=[self.names[j] for j in self.failures])
        return d

    def same_as(self, other: "SelectionResult") -> bool:
        return self.to_dict(timings=False) == other.to_dict(timings=False)


def variable_rng(seed, j):
    return np.random.default_rng([int(seed), int(j)])


def test_variable(y, X, j, law, method="d0", engine="rf", M=DEFAULT_M_SINGLE, rng=None,
                  response_kind="continuous", dist: Distillation | None = None,
                  d_y=None, beta_z=None, k=None, lasso: LassoConfig | None = None,
                  fold_seed=0, hold=None) -> TestOutcome:
    """Test column ``j`` of ``X`` with one method and engine.

    ``dist`` or ``(d_y, beta_z)`` supply precomputed response distillations;
    otherwise the lasso of y on the other columns is fit here.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(rng)
    x = X[:, j]
    Z = np.delete(X, j, axis=1)
    lasso = lasso or LassoConfig()
    if method.startswith("ocrt"):
        variant = {"ocrt": "original", "ocrt_no_soft": "no_soft",
                   "ocrt_centered": "centered"}[method]
        return ocrt_p_value(y, x, Z, law, variant, M, rng, lasso, response_kind, fold_seed)
    if method == "hrt":
        hold = hold or hrt_fit(y, X, rng, 0.5, response_kind, lasso)
        return hold.p_value(y, X, j, law, M, rng)
    if method == "dI":
        kk = min(k or default_k(X.shape[1]), Z.shape[1])
    else:
        kk = 0
    if dist is None:
        if d_y is None:
            dist = distill(Z, y, law, response_kind, kk, lasso, fold_seed)
        else:
            dist = distill(Z, y, law, response_kind, kk, d_y=d_y, beta_z=beta_z)
    elif dist.k != kk:
        raise ValidationError(f"distillation carries {dist.k} top columns, need {kk}")
    if method == "gcm":
        return gcm_p_value(y, x, dist)
    if engine == "resample":
        stat = DI if method == "dI" else D0
        return crt_p_value(stat, y, x, Z, law, M, rng, dist)
    if not law.is_gaussian:
        u, sig = gauss_transform(x, law, Z, rng)
        dist = replace(dist, d_x=np.zeros_like(u), sigma_rows=sig)
        x = u
    if method == "dI":
        return dI_rf_p_value(y, x, dist)
    return d0_rf_p_value(y, x, dist)


test_variable.__test__ = False  # keep pytest from collecting it


def select(dataset: DataSet, model, config: SelectionConfig | None = None) -> SelectionResult:
    """Run the full selection pipeline.

    Parameters
    ----------
    dataset : DataSet
    model : CovariateModel or sequence of ConditionalLaw
        Conditional laws of each column given the others.
    config : SelectionConfig
    """
    config = config or SelectionConfig()
    y, X = dataset.y, dataset.X
    n, p = X.shape
    kind = dataset.response_kind
    laws = laws_for(model, p)
    lasso = config.lasso
    M = config.resamples(p)
    timings = {}
    clock = time.perf_counter()
    full = None
    tested = list(range(p))
    if config.screening:
        full = cv_lasso(X, y, loss_for(kind), lasso, config.fold_seed)
        tested = list(full.selected.active)
    timings["screen"] = time.perf_counter() - clock
    n_fits = int(full is not None)

    clock = time.perf_counter()
    dy = None
    hold = None
    if config.uses_distillation and tested:
        if config.recycling:
            rec = recycle_distillations(X, y, kind, lasso, config.fold_seed, tested,
                                        full=full, n_jobs=config.n_jobs)
        else:
            rec = naive_distillations(X, y, kind, lasso, config.fold_seed, tested,
                                      n_jobs=config.n_jobs)
        n_fits += rec.n_fits
        dy = rec
    elif config.method == "hrt":
        hold = hrt_fit(y, X, config.seed, config.hrt_split, kind, lasso)
        n_fits += 1
        # the holdout test only examines columns its own fit selected
        tested = list(hold.fit.active)
    timings["distill"] = time.perf_counter() - clock

    clock = time.perf_counter()

    def run(j):
        try:
            kw = {}
            if dy is not None:
                kw = {"d_y": dy.d_y[j], "beta_z": dy.beta[j]}
            out = test_variable(y, X, j, laws[j], config.method, config.engine, M,
                                variable_rng(config.seed, j), kind, k=config.k,
                                lasso=lasso, fold_seed=config.fold_seed, hold=hold, **kw)
            return j, out, None
        except DcrtError as exc:
            return j, None, exc

    results = _map(run, tested, config.n_jobs)
    timings["test"] = time.perf_counter() - clock
    p_raw = np.ones(p)
    outcomes = {}
    failures = []
    for j, out, exc in results:
        if exc is not None:
            warnings.warn(f"test of column {j} ({dataset.names[j]}) failed: {exc}; "
                          f"setting p = 1", RuntimeWarning, stacklevel=2)
            failures.append(j)
            out = TestOutcome(1.0, float("nan"), config.method, 0)
        p_raw[j] = out.p_value
        outcomes[j] = out.labelled(dataset.names[j])
    p_all = screened_p_values(p_raw[tested], tested, p)
    all_outcomes = tuple(
        outcomes.get(j, TestOutcome(1.0, 0.0, "screened_out", 0, dataset.names[j]))
        for j in range(p))

    clock = time.perf_counter()
    if config.method == "hrt":
        sub = correct(p_all[tested], config.alpha, config.error_rate)
        rejected = tuple(sorted(tested[i] for i in sub))
    else:
        rejected = correct(p_all, config.alpha, config.error_rate)
    timings["correct"] = time.perf_counter() - clock
    source = model.source if isinstance(model, CovariateModel) else "nodewise"
    prov = {"method": config.method, "engine": config.engine, "M": M if _uses_M(config) else 0,
            "seed": config.seed, "fold_seed": config.fold_seed, "screening": config.screening,
            "recycling": config.recycling, "source": source}
    return SelectionResult(p_values=p_all, screened=tuple(tested), rejected=rejected,
                           outcomes=all_outcomes, names=dataset.names, alpha=config.alpha,
                           error_rate=config.error_rate, timings=timings, n_fits=n_fits,
                           failures=tuple(failures), provenance=prov)


def _uses_M(config):
    return config.method in ("ocrt", "ocrt_no_soft", "ocrt_centered", "hrt") or (
        config.method in ("d0", "dI") and config.engine == "resample")


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def jaccard_stability(run, data, R: int, seeds=None) -> float:
    """Average pairwise Jaccard index of ``run(seed, data)`` over ``R`` seeds.

    Two empty rejection sets count as identical.
    """
    if R < 2:
        raise ValidationError("stability needs at least 2 repetitions")
    seeds = list(range(R)) if seeds is None else list(seeds)[:R]
    sets = [set(run(s, data)) for s in seeds]
    pairs = list(itertools.combinations(sets, 2))
    return float(np.mean([jaccard(a, b) for a, b in pairs]))


__all__ = [
    "bh", "bonferroni", "correct", "screen", "screened_p_values", "recycle_distillations",
    "naive_distillations", "Recycled", "SelectionConfig", "SelectionResult", "select",
    "test_variable", "jaccard", "jaccard_stability", "variable_rng", "METHODS", "ENGINES",
    "ERROR_RATES",
]
