import json

import numpy as np
import pytest

from dcrt import ValidationError
from dcrt.data import conditional_law
from dcrt.sim import (ExperimentReport, MethodRun, SimDesign, gen_covariates, gen_response,
                      method_from_spec, rep_metrics, run_experiment, simulate,
                      support_indices)


def test_ar1_correlation():
    X, _ = gen_covariates(SimDesign(n=10_000, p=3, s=1), 0)
    assert abs(np.corrcoef(X[:, 0], X[:, 2])[0, 1] - 0.25) <= 0.03


def test_bernoulli_means():
    d = SimDesign(n=10_000, p=4, s=1, covariance={"kind": "independent"},
                  covariate_family={"kind": "bernoulli", "q": 0.5})
    X, laws = gen_covariates(d, 1)
    assert set(np.unique(X)) == {0.0, 1.0}
    assert np.all(np.abs(X.mean(axis=0) - 0.5) <= 0.02)
    assert len(laws) == 4


def test_equicorrelated_zero_is_independent():
    a = SimDesign(p=5, s=1, covariance={"kind": "equicorrelated", "c": 0.0})
    b = SimDesign(p=5, s=1, covariance={"kind": "independent"})
    np.testing.assert_array_equal(a.covariance_matrix(), b.covariance_matrix())
    np.testing.assert_array_equal(gen_covariates(a, 3)[0], gen_covariates(b, 3)[0])


@pytest.mark.parametrize("family", [{"kind": "laplace"}, {"kind": "gamma", "shape": 3, "rate": 0.5},
                                    {"kind": "poisson_residual", "r": 2.0}])
def test_non_gaussian_families_moments(family):
    d = SimDesign(n=20_000, p=2, s=1, covariance={"kind": "independent"},
                  covariate_family=family)
    X, laws = gen_covariates(d, 4)
    mean = laws[0].mean(np.zeros((1, 1)))[0]
    assert abs(X[:, 0].mean() - mean) <= 5 * laws[0].sigma / np.sqrt(20_000)
    assert X[:, 0].std() == pytest.approx(laws[0].sigma, rel=0.05)


def test_ar1_generator_and_model_agree():
    d = SimDesign(n=50, p=12, s=2)
    _, model = gen_covariates(d, 5)
    law = conditional_law(model, 6)
    far = np.delete(law.gamma, [5, 6])  # Z indices of columns 5 and 7
    assert np.all(np.abs(far) <= 1e-8)
    np.testing.assert_allclose(law.gamma[[5, 6]], 0.4, rtol=1e-10)


def test_design_validation():
    with pytest.raises(ValidationError):
        SimDesign(p=5, s=6)
    with pytest.raises(ValidationError):
        SimDesign(covariance={"kind": "ar1", "rho": 1.0})
    with pytest.raises(ValidationError):
        SimDesign(p=5, s=1, covariance={"kind": "equicorrelated", "c": -0.5})
    with pytest.raises(ValidationError):
        SimDesign(response={"kind": "linear", "nu": -1})
    with pytest.raises(ValidationError):
        SimDesign.from_dict({"n": 10, "rows": 3})


def test_design_roundtrip():
    d = SimDesign(n=50, p=20, s=4, support="equally_spaced",
                  response={"kind": "polynomial", "nu": 0.4, "cubic_weight": 0.3})
    assert SimDesign.from_dict(json.loads(json.dumps(d.to_dict()))) == d


# --- responses ---------------------------------------------------------------------

def test_null_response():
    d = SimDesign(n=100, p=10, s=3, response={"kind": "linear", "nu": 0.0})
    X, _ = gen_covariates(d, 0)
    y, support, _ = gen_response(d, X, 1)
    assert support == ()
    y2, _, _ = gen_response(d, X * 10, 1)
    np.testing.assert_array_equal(y, y2)  # y does not depend on X


def test_support_rules():
    assert support_indices(SimDesign(p=20, s=4)).tolist() == [0, 1, 2, 3]
    assert support_indices(SimDesign(p=20, s=4, support="equally_spaced")).tolist() == [0, 5, 10, 15]
    full_a = support_indices(SimDesign(p=6, s=6))
    full_e = support_indices(SimDesign(p=6, s=6, support="equally_spaced"))
    np.testing.assert_array_equal(full_a, full_e)


def test_linear_response_coefficients():
    d = SimDesign(n=5000, p=6, s=2, covariance={"kind": "independent"},
                  response={"kind": "linear", "nu": 0.8})
    X, _ = gen_covariates(d, 2)
    y, support, _ = gen_response(d, X, 3)
    coef = np.linalg.lstsq(np.column_stack([np.ones(5000), X]), y, rcond=None)[0][1:]
    np.testing.assert_allclose(np.abs(coef[list(support)]), 0.8, atol=0.06)
    assert np.all(np.abs(np.delete(coef, list(support))) < 0.06)


def test_logistic_response():
    d = SimDesign(n=10_000, p=10, s=4, response={"kind": "logistic", "nu": 0.5})
    X, _ = gen_covariates(d, 4)
    y, _, _ = gen_response(d, X, 5)
    assert set(np.unique(y)) <= {0.0, 1.0}
    assert abs(y.mean() - 0.5) <= 0.03
    assert d.response_kind == "binary"


def test_poisson_response_counts():
    d = SimDesign(n=500, p=10, s=4, response={"kind": "poisson", "nu": 0.3})
    X, _ = gen_covariates(d, 6)
    y, _, _ = gen_response(d, X, 7)
    assert np.all(y >= 0) and np.all(y == np.round(y))


def test_polynomial_adds_cube():
    d = SimDesign(n=10, p=4, s=1, covariance={"kind": "independent"},
                  response={"kind": "polynomial", "nu": 1.0, "cubic_weight": 0.3})
    X, _ = gen_covariates(d, 8)
    lin = SimDesign(n=10, p=4, s=1, covariance={"kind": "independent"},
                    response={"kind": "linear", "nu": 1.0})
    y, _, _ = gen_response(d, X, 9)
    y_lin, _, _ = gen_response(lin, X, 9)
    # the cubic term carries the same random sign as the linear coefficient
    ratio = (y - y_lin) / (0.3 * X[:, 0] ** 3)
    np.testing.assert_allclose(np.abs(ratio), 1.0, rtol=1e-9)
    assert np.ptp(ratio) < 1e-9


def test_interaction_design():
    d = SimDesign(n=100, p=30, s=1, response={"kind": "interaction", "nu": 0.5})
    data = simulate(d, 10)
    assert data.tested == 15
    assert len(data.support) == 6 and 15 in data.support


# --- metrics and harness --------------------------------------------------------------

def test_metrics_examples():
    support = (0, 1, 2)
    full = frozenset(range(10))
    m = rep_metrics(MethodRun(frozenset(support), full), support)
    assert m["power"] == 1 and m["fdr"] == 0 and m["fwer"] == 0
    m = rep_metrics(MethodRun(frozenset(), full), support)
    assert m == {"power": 0.0, "fdr": 0.0, "fwer": 0.0, "type_I": 0.0}
    m = rep_metrics(MethodRun(full, full), support)
    assert m["fdr"] == pytest.approx(7 / 10) and m["fwer"] == 1.0 and m["type_I"] == 1.0


def test_fdr_matches_hand_count():
    rng = np.random.default_rng(11)
    for _ in range(100):
        p = int(rng.integers(2, 30))
        S = set(rng.choice(p, size=int(rng.integers(0, p)), replace=False).tolist())
        R = set(rng.choice(p, size=int(rng.integers(0, p)), replace=False).tolist())
        false = sum(1 for j in R if j not in S)
        expected = false / len(R) if R else 0.0
        got = rep_metrics(MethodRun(frozenset(R), frozenset(range(p))), S)["fdr"]
        assert got == pytest.approx(expected)


def _oracle(data, seed):
    return data.support


def _nothing(data, seed):
    return ()


def test_run_experiment_oracles():
    d = SimDesign(n=30, p=8, s=2)
    rep = run_experiment(d, {"oracle": _oracle, "none": _nothing}, reps=5, base_seed=1)
    assert rep.means["oracle"]["power"] == 1.0 and rep.means["oracle"]["fdr"] == 0.0
    assert rep.ses["oracle"]["power"] == 0.0
    assert rep.means["none"] == {"power": 0.0, "fdr": 0.0, "fwer": 0.0, "type_I": 0.0}
    assert isinstance(rep, ExperimentReport)
    with pytest.raises(ValidationError):
        run_experiment(d, {"oracle": _oracle}, reps=1)


def test_run_experiment_parallel_invariance():
    d = SimDesign(n=80, p=12, s=3, response={"kind": "linear", "nu": 0.6})
    methods = {"d0": method_from_spec("d0_rf_bh"), "single": method_from_spec("single_d0_rf")}
    a = run_experiment(d, methods, reps=4, base_seed=2, n_jobs=1)
    b = run_experiment(d, methods, reps=4, base_seed=2, n_jobs=3)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "method,metric,mean,se,reps,failures"
    assert len(a.to_csv().splitlines()) == 1 + 2 * 4
    assert json.loads(a.to_json())["reps"] == 4


def test_run_experiment_counts_failures():
    from dcrt import NumericalError

    def broken(data, seed):
        raise NumericalError("singular")

    d = SimDesign(n=20, p=4, s=1)
    with pytest.warns(RuntimeWarning):
        rep = run_experiment(d, {"broken": broken, "none": _nothing}, reps=3)
    assert rep.failures == {"broken": 3, "none": 0}


def test_method_grammar():
    m = method_from_spec("dI_resample_bonf_noscreen", alpha=0.2, M=50)
    assert (m.config.method, m.config.engine, m.config.error_rate) == (
        "dI", "resample", "fwer_bonferroni")
    assert not m.config.screening and m.config.recycling and m.config.M == 50
    s = method_from_spec("single_gcm")
    assert s.method == "gcm"
    assert method_from_spec("ocrt_centered_bh").config.method == "ocrt_centered"
    with pytest.raises(ValidationError, match="valid methods"):
        method_from_spec("lasso_bh")
    with pytest.raises(ValidationError):
        method_from_spec("d0_fast")
