import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcrt import ValidationError
from dcrt.data import ConditionalLaw, CovariateModel, DataSet, conditional_laws
from dcrt.lasso import LassoConfig, cross_validate, cv_lasso, lambda_max, LambdaGrid
from dcrt.select import (SelectionConfig, bh, bonferroni, correct, jaccard, jaccard_stability,
                         naive_distillations, recycle_distillations, screen,
                         screened_p_values, select, test_variable)

from conftest import ar1_cov


def make_data(seed, n=120, p=15, beta=None, rho=0.3):
    rng = np.random.default_rng(seed)
    model = CovariateModel(np.zeros(p), ar1_cov(p, rho), source="exact")
    X = model.sample(n, rng)
    beta = np.zeros(p) if beta is None else np.asarray(beta, dtype=float)
    y = X @ beta + rng.standard_normal(n)
    return DataSet(y=y, X=X), model


def planted(p, support, size):
    b = np.zeros(p)
    b[list(support)] = size
    return b


# --- corrections ---------------------------------------------------------------------

def test_bh_example():
    assert bh([0.001, 0.02, 0.9], 0.1) == (0, 1)


def test_bh_all_ones():
    assert bh(np.ones(7), 0.1) == ()


def test_bh_boundary():
    assert bh([0.1], 0.1) == (0,)


def test_bonferroni_threshold():
    p = np.full(10, 0.5)
    p[3] = 0.01
    p[5] = 0.0100001
    assert bonferroni(p, 0.1) == (3,)


def test_corrections_empty():
    assert bonferroni([], 0.1) == () and bh([], 0.1) == ()


def test_correct_dispatch():
    assert correct([0.001, 0.5], 0.1, "fdr_bh") == (0,)
    with pytest.raises(ValidationError):
        correct([0.1], 0.1, "holm")


def _reference_bh(p, alpha):
    m = len(p)
    k = 0
    for i, v in enumerate(sorted(p), 1):
        if v <= i * alpha / m:
            k = i
    if k == 0:
        return set()
    cut = sorted(p)[k - 1]
    return {i for i, v in enumerate(p) if v <= cut}


def test_corrections_match_reference():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = int(rng.integers(1, 40))
        p = rng.uniform(size=m) ** rng.uniform(0.5, 4)
        alpha = float(rng.uniform(0.01, 0.3))
        assert set(bh(p, alpha)) == _reference_bh(list(p), alpha)
        assert set(bonferroni(p, alpha)) == {i for i in range(m) if p[i] * m <= alpha}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=30), st.floats(0.001, 0.5))
def test_bonferroni_within_bh(p, alpha):
    assert set(bonferroni(p, alpha)) <= set(bh(p, alpha))


# --- screening ----------------------------------------------------------------------

def test_screened_p_values_examples():
    raw = np.array([0.2, 0.01, 0.5, 0.03])
    np.testing.assert_array_equal(screened_p_values([], [], 4), np.ones(4))
    np.testing.assert_array_equal(screened_p_values(raw, range(4), 4), raw)
    with pytest.raises(ValidationError):
        screened_p_values(raw, [0, 1], 4)
    np.testing.assert_array_equal(screened_p_values([0.01, 0.03], [1, 3], 4),
                                  [1, 0.01, 1, 0.03])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-9, 1.0), min_size=1, max_size=20), st.data())
def test_screened_p_values_dominate(raw, data):
    raw = np.array(raw)
    p = raw.size
    S = data.draw(st.lists(st.integers(0, p - 1), unique=True))
    out = screened_p_values(raw[S], S, p)
    assert np.all(out >= raw)
    np.testing.assert_array_equal(out[S], raw[S])


def test_screen_pure_noise_strong_penalty():
    ds, _ = make_data(1, n=50, p=8)
    lmax = lambda_max(ds.X, ds.y)
    cv = cross_validate(ds.X, ds.y, "squared", LambdaGrid([3 * lmax, 2 * lmax, lmax]), K=5,
                        rule=1, rng=0)
    assert cv.selected.active == ()


def test_screen_contains_support():
    hits = 0
    for r in range(50):
        ds, _ = make_data(100 + r, n=300, p=100, beta=planted(100, range(0, 50, 10), 1.0),
                          rho=0.0)
        hits += set(range(0, 50, 10)) <= set(screen(ds.X, ds.y, rng=r))
    assert hits >= 45


def test_screen_deterministic():
    ds, _ = make_data(2, beta=planted(15, [0, 4], 1.0))
    assert screen(ds.X, ds.y, rng=3) == screen(ds.X, ds.y, rng=3)


# --- recycling ----------------------------------------------------------------------

def test_recycling_null_path():
    ds, _ = make_data(3, n=40, p=6)
    lmax = lambda_max(ds.X, ds.y)
    full = cross_validate(ds.X, ds.y, "squared", LambdaGrid([3 * lmax, 2 * lmax, lmax]),
                          K=5, rule=1, rng=0)
    assert full.union_active == ()
    rec = recycle_distillations(ds.X, ds.y, full=full)
    assert rec.n_fits == 0 and rec.refit == ()
    for j in range(6):
        np.testing.assert_allclose(rec.d_y[j], ds.y.mean())


def test_recycling_matches_naive_refits():
    rng = np.random.default_rng(4)
    n, p = 60, 40
    X = rng.standard_normal((n, p))
    y = X[:, :4] @ [1.0, -1.0, 0.7, 0.5] + rng.standard_normal(n)
    rec = recycle_distillations(X, y, rng=0)
    full = rec.full
    A = set(full.union_active)
    assert rec.refit == tuple(sorted(A)) and rec.n_fits == len(A) + 1
    outside = [j for j in range(p) if j not in A]
    cached = rec.d_y[outside[0]]
    np.testing.assert_array_equal(cached, full.selected.predict(X))
    for j in outside:
        assert rec.d_y[j] is cached  # one shared array, not a recomputation
        loco = cross_validate(np.delete(X, j, axis=1), y, "squared", full.grid, rule=5,
                              folds=full.folds)
        np.testing.assert_allclose(rec.beta[j], loco.selected.beta, atol=1e-8)
        np.testing.assert_allclose(rec.d_y[j], loco.selected.predict(np.delete(X, j, axis=1)),
                                   atol=1e-8)


def test_naive_fit_count():
    ds, _ = make_data(5, n=60, p=8, beta=planted(8, [0], 1.0))
    rec = naive_distillations(ds.X, ds.y)
    assert rec.n_fits == 8 and rec.full is None


def test_recycling_parallel_identical():
    ds, _ = make_data(6, n=80, p=12, beta=planted(12, [0, 5], 1.0))
    a = recycle_distillations(ds.X, ds.y, rng=1, n_jobs=1)
    b = recycle_distillations(ds.X, ds.y, rng=1, n_jobs=3)
    for j in range(12):
        np.testing.assert_array_equal(a.d_y[j], b.d_y[j])


# --- pipeline -----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValidationError):
        SelectionConfig(method="lasso")
    with pytest.raises(ValidationError):
        SelectionConfig(alpha=1.0)
    with pytest.raises(ValidationError):
        SelectionConfig(M=0)
    assert SelectionConfig(alpha=0.1).resamples(200) == 10_000
    assert SelectionConfig(alpha=0.0).resamples(200) == 2000


def test_select_deterministic_and_json():
    ds, model = make_data(7, beta=planted(15, [2, 9], 1.0))
    cfg = SelectionConfig(seed=3)
    a, b = select(ds, model, cfg), select(ds, model, cfg)
    assert a.same_as(b)
    d = json.loads(json.dumps(a.to_dict()))
    assert set(d) >= {"alpha", "error_rate", "results", "screened", "rejected", "timings_ms"}
    assert len(d["results"]) == 15
    assert set(d["results"][0]) == {"variable", "p_value", "statistic", "method", "M"}
    assert {2, 9} <= set(a.rejected)


def test_select_invariants():
    ds, model = make_data(8, beta=planted(15, [1, 6, 11], 0.6))
    res = select(ds, model, SelectionConfig(method="dI", error_rate="fdr_bh"))
    assert set(res.rejected) <= set(res.screened)
    assert np.all((res.p_values > 0) & (res.p_values <= 1))
    outside = [j for j in range(15) if j not in res.screened]
    assert np.all(res.p_values[outside] == 1)
    assert set(res.timings) == {"screen", "distill", "test", "correct"}


def test_select_fit_accounting():
    ds, model = make_data(9, beta=planted(15, [0, 3], 1.0))
    rec = select(ds, model, SelectionConfig(screening=False))
    naive = select(ds, model, SelectionConfig(screening=False, recycling=False))
    full = cv_lasso(ds.X, ds.y, rng=0)
    assert rec.n_fits == len(full.union_active) + 1
    assert naive.n_fits == 15
    np.testing.assert_allclose(rec.p_values, naive.p_values, rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("method,engine", [("d0", "rf"), ("dI", "rf"), ("d0", "resample")])
@pytest.mark.parametrize("rate", ["fwer_bonferroni", "fdr_bh"])
def test_screening_only_removes_rejections(method, engine, rate):
    ds, model = make_data(10, beta=planted(15, [0, 7], 0.5))
    kw = dict(method=method, engine=engine, error_rate=rate, seed=1, M=200)
    on = select(ds, model, SelectionConfig(screening=True, **kw))
    off = select(ds, model, SelectionConfig(screening=False, **kw))
    assert set(on.rejected) <= set(off.rejected)
    assert np.all(on.p_values >= off.p_values - 1e-12)


def test_select_parallel_matches_serial():
    ds, model = make_data(11, beta=planted(15, [4], 1.0))
    cfg = SelectionConfig(engine="resample", M=100, seed=2)
    a = select(ds, model, cfg)
    b = select(ds, model, SelectionConfig(engine="resample", M=100, seed=2, n_jobs=4))
    assert a.same_as(b)


@pytest.mark.parametrize("method", ["gcm", "hrt", "ocrt_centered"])
def test_select_other_methods(method):
    ds, model = make_data(12, n=80, p=6, beta=planted(6, [0], 1.5))
    res = select(ds, model, SelectionConfig(method=method, M=19, alpha=0.2))
    assert 0 in res.rejected or method == "ocrt_centered"
    assert res.provenance["method"] == method


def test_select_failure_gives_p_one():
    ds, _ = make_data(13, n=50, p=4, beta=planted(4, [0, 1, 2, 3], 1.0))
    laws = conditional_laws(CovariateModel(np.zeros(4), np.eye(4)))
    # a discrete law whose support misses the observed values forces a failure
    laws[2] = ConditionalLaw.discrete(np.zeros(3), 0.0, [0.0, 1.0], [0.5, 0.5])
    with pytest.warns(RuntimeWarning, match="failed"):
        res = select(ds, laws, SelectionConfig(screening=False))
    assert res.failures == (2,) and res.p_values[2] == 1.0


def test_global_null_fwer():
    runs, alpha = 400, 0.1
    errors = 0
    for r in range(runs):
        ds, model = make_data(20_000 + r, n=80, p=10)
        res = select(ds, model, SelectionConfig(alpha=alpha, seed=r, fold_seed=r))
        errors += bool(res.rejected)
    assert errors / runs <= alpha + 3 * math.sqrt(alpha * (1 - alpha) / runs)


def test_single_variable_test_default_distillation():
    ds, model = make_data(14, beta=planted(15, [5], 1.0))
    laws = conditional_laws(model)
    out = test_variable(ds.y, ds.X, 5, laws[5], rng=0)
    assert out.method == "d0_rf" and out.p_value < 1e-3


# --- stability ----------------------------------------------------------------------

def test_jaccard_definition():
    assert jaccard({1, 2}, {2, 3}) == pytest.approx(1 / 3)
    assert jaccard(set(), set()) == 1.0
    assert jaccard({1}, set()) == 0.0


def test_jaccard_stability_examples():
    assert jaccard_stability(lambda s, d: {1, 2}, None, 4) == 1.0
    assert jaccard_stability(lambda s, d: {s}, None, 5) == 0.0
    with pytest.raises(ValidationError):
        jaccard_stability(lambda s, d: set(), None, 1)


def test_jaccard_stability_pipeline():
    ds, model = make_data(15, beta=planted(15, [3, 8], 1.0))

    def run(seed, data):
        return select(data, model, SelectionConfig(seed=seed, fold_seed=seed)).rejected

    assert jaccard_stability(run, ds, 3) == pytest.approx(1.0)
