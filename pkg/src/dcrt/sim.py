"""Simulated designs and the experiment harness.

A :class:`SimDesign` fixes the covariate law, the response model and the
signal support. :func:`run_experiment` draws fresh data per repetition, runs
every method on it and reports power, false discovery rate, family-wise
error and type-I error with standard errors.

Non-Gaussian covariate families are generated with independent columns; the
returned conditional laws then carry the exact marginal law of each column.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import expit

from ._errors import DcrtError, ValidationError
from .data import ConditionalLaw, CovariateModel, DataSet, laws_for
from .select import SelectionConfig, select, test_variable, variable_rng

SUPPORTS = ("adjacent", "equally_spaced")
COVARIANCES = ("ar1", "equicorrelated", "independent")
RESPONSES = ("linear", "logistic", "poisson", "polynomial", "interaction", "rf_nonlinear")
FAMILIES = ("gaussian", "laplace", "gamma", "bernoulli", "poisson_residual")
NOISES = ("gaussian", "laplace")
POISSON_CLIP = 20.0


@dataclass(frozen=True)
class SimDesign:
    """One simulation setting.

    ``covariance``, ``response`` and ``covariate_family`` are small dicts with
    a ``"kind"`` key and their parameters, e.g. ``{"kind": "ar1", "rho": 0.5}``,
    ``{"kind": "polynomial", "nu": 0.3, "cubic_weight": 0.3}`` or
    ``{"kind": "gamma", "shape": 3, "rate": 0.5}``.
    """

    n: int = 200
    p: int = 200
    s: int = 20
    support: str = "adjacent"
    covariance: dict = field(default_factory=lambda: {"kind": "ar1", "rho": 0.5})
    response: dict = field(default_factory=lambda: {"kind": "linear", "nu": 0.3})
    covariate_family: dict = field(default_factory=lambda: {"kind": "gaussian"})
    noise: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "p", "s"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v}")
        if self.s > self.p:
            raise ValidationError(f"s={self.s} exceeds p={self.p}")
        if self.support not in SUPPORTS:
            raise ValidationError(f"unknown support rule {self.support!r}")
        if self.noise not in NOISES:
            raise ValidationError(f"unknown noise {self.noise!r}")
        cov = dict(self.covariance)
        kind = cov.get("kind")
        if kind not in COVARIANCES:
            raise ValidationError(f"unknown covariance {kind!r}")
        if kind == "ar1" and not -1 < cov.get("rho", 0.5) < 1:
            raise ValidationError("ar1 needs rho in (-1, 1)")
        if kind == "equicorrelated":
            c = cov.get("c", 0.0)
            if not (-1 / max(self.p - 1, 1) < c < 1):
                raise ValidationError(f"equicorrelation {c} is not positive definite for p={self.p}")
        resp = dict(self.response)
        if resp.get("kind") not in RESPONSES:
            raise ValidationError(f"unknown response {resp.get('kind')!r}")
        if resp.get("nu", 0.0) < 0:
            raise ValidationError("nu must be nonnegative")
        if resp["kind"] == "interaction" and self.p < resp.get("n_interactions", 5) + 1:
            raise ValidationError("interaction design needs p > n_interactions")
        fam = dict(self.covariate_family)
        if fam.get("kind") not in FAMILIES:
            raise ValidationError(f"unknown covariate family {fam.get('kind')!r}")
        if fam["kind"] != "gaussian" and kind != "independent":
            raise ValidationError("non-Gaussian covariate families need independent columns")

    @property
    def response_kind(self) -> str:
        return "binary" if self.response["kind"] == "logistic" else "continuous"

    def covariance_matrix(self) -> np.ndarray:
        p = self.p
        cov = self.covariance
        if cov["kind"] == "ar1":
            idx = np.arange(p)
            return cov.get("rho", 0.5) ** np.abs(np.subtract.outer(idx, idx))
        if cov["kind"] == "equicorrelated":
            c = cov.get("c", 0.0)
            return (1 - c) * np.eye(p) + c * np.ones((p, p))
        return np.eye(p)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimDesign":
        if not isinstance(d, dict):
            raise ValidationError("design must be a JSON object")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown design fields: {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except (TypeError, KeyError) as exc:
            raise ValidationError(f"malformed design: {exc}") from None


def _family_law(fam: dict, p: int):
    kind = fam["kind"]
    zero = np.zeros(p - 1)
    if kind == "laplace":
        return ConditionalLaw.continuous(zero, 0.0, stats.laplace(scale=1 / math.sqrt(2)))
    if kind == "gamma":
        shape, rate = fam.get("shape", 3.0), fam.get("rate", 0.5)
        return ConditionalLaw.continuous(zero, 0.0, stats.gamma(a=shape, scale=1 / rate))
    if kind == "bernoulli":
        q = fam.get("q", 0.5)
        return ConditionalLaw.discrete(zero, 0.0, [0.0, 1.0], [1 - q, q])
    if kind == "poisson_residual":
        r = fam.get("r", 1.0)
        dist = stats.poisson(r)
        top = int(dist.isf(1e-14)) + 1
        k = np.arange(top + 1)
        pmf = dist.pmf(k)
        pmf /= pmf.sum()
        return ConditionalLaw.discrete(zero, 0.0, (k - r) / math.sqrt(r), pmf)
    raise ValidationError(f"no marginal law for family {kind!r}")


def gen_covariates(design: SimDesign, rng):
    """Draw the covariate matrix and return it with the exact covariate model.

    Returns ``(X, model)`` where ``model`` is a :class:`CovariateModel` for the
    Gaussian family and a list of per-column conditional laws otherwise.
    """
    rng = np.random.default_rng(rng)
    n, p = design.n, design.p
    fam = design.covariate_family
    if fam["kind"] == "gaussian":
        model = CovariateModel(np.zeros(p), design.covariance_matrix(), source="exact")
        return model.sample(n, rng), model
    law = _family_law(fam, p)
    X = np.column_stack([
        law.location(np.zeros((n, p - 1))) + _draw_noise(law, n, rng) for _ in range(p)])
    return X, [law] * p


def _draw_noise(law: ConditionalLaw, n, rng):
    if law.family == "continuous":
        return np.asarray(law.noise.rvs(size=n, random_state=rng), dtype=float)
    return law.support[rng.choice(law.support.size, size=n, p=law.pmf)]


def support_indices(design: SimDesign) -> np.ndarray:
    p, s = design.p, design.s
    if design.support == "adjacent" or s == p:
        return np.arange(s)
    step = p // s
    return np.arange(s) * step


def gen_response(design: SimDesign, X, rng):
    """Draw y given X.

    Returns
    -------
    y : (n,) array
    support : tuple of int
        Columns on which y depends.
    tested : int or None
        For the interaction design, the column whose interactions carry the
        signal; ``None`` otherwise.
    """
    rng = np.random.default_rng(rng)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    resp = design.response
    kind, nu = resp["kind"], float(resp.get("nu", 0.3))
    tested = None
    if kind == "interaction":
        j = int(resp.get("x_index", p // 2))
        m = int(resp.get("n_interactions", 5))
        others = np.delete(np.arange(p), j)
        inter = np.sort(rng.choice(others, size=m, replace=False))
        zsum = X[:, inter].sum(axis=1)
        mu = nu * (X[:, j] + zsum + resp.get("interaction_weight", 1.5) * X[:, j] * zsum)
        support = np.sort(np.append(inter, j))
        tested = j
    else:
        support = support_indices(design)
        signs = rng.choice([-1.0, 1.0], size=support.size)
        beta = np.zeros(p)
        beta[support] = nu * signs
        mu = X @ beta
        if kind == "polynomial":
            w = resp.get("cubic_weight", 0.3)
            mu = mu + w * (X[:, support] ** 3) @ beta[support]
        elif kind == "rf_nonlinear":
            Xs = X[:, support]
            mu = (0.5 * Xs ** 2 + np.sin(0.5 * np.pi * Xs)) @ beta[support]
    if nu == 0:
        support = np.array([], dtype=int)
    if kind == "logistic":
        y = (rng.random(n) < expit(mu)).astype(float)
    elif kind == "poisson":
        y = rng.poisson(np.exp(np.minimum(mu, POISSON_CLIP))).astype(float)
    else:
        if design.noise == "laplace":
            eps = rng.laplace(scale=1 / math.sqrt(2), size=n)
        else:
            eps = rng.standard_normal(n)
        y = mu + eps
    return y, tuple(int(j) for j in support), tested


@dataclass(frozen=True, eq=False)
class SimData:
    dataset: DataSet
    model: object
    support: tuple
    tested: int | None = None

    @property
    def laws(self):
        return laws_for(self.model, self.dataset.p)


def simulate(design: SimDesign, rng) -> SimData:
    rng = np.random.default_rng(rng)
    X, model = gen_covariates(design, rng)
    y, support, tested = gen_response(design, X, rng)
    ds = DataSet(y, X, response_kind=design.response_kind)
    return SimData(ds, model, support, tested)


# --- methods ---------------------------------------------------------------

@dataclass(frozen=True)
class MethodRun:
    """Rejections of one method on one dataset, and which columns it tested."""

    rejected: frozenset
    tested: frozenset


@dataclass(frozen=True)
class PipelineMethod:
    """Selection over all columns via :func:`dcrt.select.select`."""

    name: str
    config: SelectionConfig = field(default_factory=SelectionConfig)

    def __call__(self, data: SimData, seed: int) -> MethodRun:
        res = select(data.dataset, data.model, replace(self.config, seed=seed, n_jobs=1))
        return MethodRun(frozenset(res.rejected), frozenset(range(data.dataset.p)))


@dataclass(frozen=True)
class SingleTestMethod:
    """One test of a single column (the design's tested column or ``column``)."""

    name: str
    method: str = "d0"
    engine: str = "rf"
    alpha: float = 0.05
    M: int = 2000
    column: int | None = None
    k: int | None = None

    def __call__(self, data: SimData, seed: int) -> MethodRun:
        ds = data.dataset
        j = self.column if self.column is not None else (
            data.tested if data.tested is not None else ds.p // 2)
        out = test_variable(ds.y, ds.X, j, data.laws[j], self.method, self.engine, self.M,
                            variable_rng(seed, j), ds.response_kind, k=self.k,
                            fold_seed=seed)
        rej = frozenset([j]) if out.p_value <= self.alpha else frozenset()
        return MethodRun(rej, frozenset([j]))


def _as_run(out, p):
    if isinstance(out, MethodRun):
        return out
    return MethodRun(frozenset(int(j) for j in out), frozenset(range(p)))


def rep_metrics(run: MethodRun, support) -> dict:
    """Power, false discovery proportion, any-false-rejection and type-I share."""
    S = set(support)
    R = set(run.rejected)
    T = set(run.tested)
    signal = S & T
    nulls = T - S
    false = R - S
    return {
        "power": len(R & signal) / len(signal) if signal else 0.0,
        "fdr": len(false) / max(1, len(R)),
        "fwer": float(bool(false)),
        "type_I": len(false & nulls) / len(nulls) if nulls else 0.0,
    }


METRICS = ("power", "fdr", "fwer", "type_I")


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Per-method metric means with standard errors (sample sd / sqrt(reps))."""

    design: SimDesign
    reps: int
    means: dict
    ses: dict
    timings: dict
    failures: dict
    base_seed: int

    def rows(self):
        for name in self.means:
            for metric in METRICS:
                yield name, metric, self.means[name][metric], self.ses[name][metric]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "metric", "mean", "se", "reps", "failures"])
        for name, metric, m, se in self.rows():
            w.writerow([name, metric, repr(float(m)), repr(float(se)), self.reps,
                        self.failures[name]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"design": self.design.to_dict(), "reps": self.reps, "base_seed": self.base_seed,
                "methods": {name: {"mean": self.means[name], "se": self.ses[name],
                                   "failures": self.failures[name],
                                   "time_s": self.timings[name]} for name in self.means}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def rep_seed(base_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(rep)]).generate_state(1)[0])


def run_experiment(design: SimDesign, methods, reps: int, base_seed: int = 0,
                   n_jobs: int = 1, data_fn: Callable | None = None) -> ExperimentReport:
    """Monte Carlo evaluation of ``methods`` on fresh data per repetition.

    Parameters
    ----------
    methods : dict of name -> callable or sequence of named callables
        ``method(data, seed)`` returns a :class:`MethodRun` or an iterable of
        rejected column indices.
    data_fn : callable, optional
        ``data_fn(design, rng) -> SimData``; defaults to :func:`simulate`.
    """
    if reps < 2:
        raise ValidationError("need at least 2 repetitions")
    if not isinstance(methods, dict):
        methods = {m.name: m for m in methods}
    if not methods:
        raise ValidationError("no methods given")
    data_fn = data_fn or simulate

    def one(rep):
        seed = rep_seed(base_seed, rep)
        data = data_fn(design, np.random.default_rng(seed))
        out = {}
        for name, fn in methods.items():
            t0 = time.perf_counter()
            try:
                run = _as_run(fn(data, seed), data.dataset.p)
                out[name] = (rep_metrics(run, data.support), time.perf_counter() - t0)
            except DcrtError as exc:
                warnings.warn(f"{name} failed on repetition {rep}: {exc}", RuntimeWarning)
                out[name] = (None, time.perf_counter() - t0)
        return out

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(one, range(reps)))
    else:
        results = [one(r) for r in range(reps)]

    means, ses, timings, failures = {}, {}, {}, {}
    for name in methods:
        ok = [r[name][0] for r in results if r[name][0] is not None]
        failures[name] = reps - len(ok)
        timings[name] = float(np.mean([r[name][1] for r in results]))
        means[name], ses[name] = {}, {}
        for metric in METRICS:
            v = np.array([m[metric] for m in ok])
            means[name][metric] = float(v.mean()) if v.size else float("nan")
            ses[name][metric] = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    return ExperimentReport(design, reps, means, ses, timings, failures, base_seed)


def method_from_spec(spec: str, alpha: float = 0.1, M: int | None = None):
    """Build a named method from a short spec such as ``"d0_rf_bh"``.

    Grammar: ``<method>[_<engine>][_<bh|bonf>][_noscreen][_norecycle]`` or
    ``single_<method>[_<engine>]`` for a single-column test.
    """
    parts = spec.split("_")
    single = parts[0] == "single"
    if single:
        parts = parts[1:]
    known = {"d0", "dI", "gcm", "hrt", "ocrt"}
    if not parts or parts[0] not in known:
        raise ValidationError(f"unknown method {spec!r}; valid methods: {', '.join(METHOD_NAMES)}")
    method = parts[0]
    rest = parts[1:]
    if method == "ocrt" and rest and rest[0] in ("nosoft", "centered"):
        method = "ocrt_no_soft" if rest[0] == "nosoft" else "ocrt_centered"
        rest = rest[1:]
    engine, rate, screening, recycling = "rf", "fdr_bh", True, True
    for tok in rest:
        if tok in ("rf", "resample"):
            engine = tok
        elif tok == "bh":
            rate = "fdr_bh"
        elif tok == "bonf":
            rate = "fwer_bonferroni"
        elif tok == "noscreen":
            screening = False
        elif tok == "norecycle":
            recycling = False
        else:
            raise ValidationError(f"unknown option {tok!r} in method {spec!r}; "
                                  f"valid methods: {', '.join(METHOD_NAMES)}")
    if single:
        return SingleTestMethod(spec, method, engine, alpha, M or 2000)
    cfg = SelectionConfig(method=method, engine=engine, alpha=alpha, error_rate=rate,
                          screening=screening, recycling=recycling, M=M)
    return PipelineMethod(spec, cfg)


METHOD_NAMES = ("d0_rf_bh", "d0_resample_bh", "dI_rf_bh", "dI_resample_bh", "gcm_bh",
                "hrt_bh", "ocrt_bh", "single_d0_rf", "single_dI_rf", "single_d0_resample",
                "single_dI_resample", "single_gcm", "single_hrt",
                "(options: _bonf _noscreen _norecycle)")
