import json
import shutil
import subprocess

import numpy as np
import pytest

from dcrt.cli import main, read_config
from dcrt.data import CovariateModel, save_model_json

from conftest import ar1_cov


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(0)
    n, p = 80, 6
    model = CovariateModel(np.zeros(p), ar1_cov(p, 0.4), source="exact")
    X = model.sample(n, rng)
    y = 1.2 * X[:, 1] - X[:, 4] + rng.standard_normal(n)
    names = [f"g{j}" for j in range(p)]
    data = tmp_path / "data.csv"
    rows = ["y," + ",".join(names)]
    rows += [",".join(repr(float(v)) for v in (y[i], *X[i])) for i in range(n)]
    data.write_text("\n".join(rows) + "\n")
    mpath = tmp_path / "model.json"
    save_model_json(model, mpath, names)
    return tmp_path, data, mpath


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# --- test -------------------------------------------------------------------------------

def test_cmd_test_outputs_json(files, capsys):
    _, data, model = files
    code, out, _ = run(["test", data, model, "--variable", "g1", "--seed", 1], capsys)
    assert code == 0
    d = json.loads(out)
    assert set(d) == {"variable", "p_value", "statistic", "method", "M"}
    assert d["variable"] == "g1" and 0 < d["p_value"] <= 1


def test_cmd_test_deterministic(files, capsys):
    _, data, model = files
    argv = ["test", data, model, "--variable", "g2", "--engine", "resample", "--M", 200,
            "--seed", 5]
    a = run(argv, capsys)[1]
    b = run(argv, capsys)[1]
    assert a == b


def test_cmd_test_unknown_variable(files, capsys):
    _, data, model = files
    code, _, err = run(["test", data, model, "--variable", "nope", "--seed", 1], capsys)
    assert code == 2 and "nope" in err


def test_seed_is_required(files, capsys):
    _, data, model = files
    code, _, err = run(["test", data, model, "--variable", "g1"], capsys)
    assert code == 2 and "--seed" in err


def test_model_dimension_mismatch(files, capsys, tmp_path):
    _, data, _ = files
    small = tmp_path / "small.json"
    save_model_json(CovariateModel(np.zeros(3), np.eye(3)), small)
    code, _, err = run(["test", data, small, "--variable", "g1", "--seed", 1], capsys)
    assert code == 2 and "columns" in err


def test_numerical_failure_exit_code(files, capsys):
    tmp, data, model = files
    # a constant column among the interaction columns makes the Gram matrix singular
    lines = data.read_text().splitlines()
    rows = [lines[0]] + [",".join(line.split(",")[:-1] + ["0.0"]) for line in lines[1:]]
    const = tmp / "const.csv"
    const.write_text("\n".join(rows) + "\n")
    code, _, err = run(["test", const, model, "--variable", "g1", "--method", "dI", "--k", 5,
                        "--seed", 1], capsys)
    assert code == 3 and "singular" in err


# --- select -------------------------------------------------------------------------------

def test_cmd_select_writes_results(files, capsys):
    tmp, data, model = files
    out = tmp / "res.json"
    code, stdout, _ = run(["select", data, model, "--seed", 2, "--out", out], capsys)
    assert code == 0 and "rejected" in stdout and str(out) in stdout
    d = json.loads(out.read_text())
    assert {"g1", "g4"} <= set(d["rejected"])
    assert d["error_rate"] == "fwer_bonferroni" and len(d["results"]) == 6


def test_cmd_select_naive_flags_match_pipeline(files, capsys):
    from dcrt import SelectionConfig, load_csv, select
    from dcrt.data import load_model_json

    tmp, data, model = files
    out = tmp / "naive.json"
    code, _, _ = run(["select", data, model, "--no-screen", "--no-recycle", "--seed", 3,
                      "--out", out], capsys)
    assert code == 0
    ref = select(load_csv(data, "y"), load_model_json(model),
                 SelectionConfig(screening=False, recycling=False, seed=3, fold_seed=3))
    got = json.loads(out.read_text())
    got.pop("timings_ms")
    assert got == json.loads(json.dumps(ref.to_dict(timings=False)))


def test_cmd_select_alpha_zero(files, capsys):
    tmp, data, model = files
    out = tmp / "a0.json"
    code, _, _ = run(["select", data, model, "--alpha", 0, "--seed", 1, "--out", out], capsys)
    assert code == 0 and json.loads(out.read_text())["rejected"] == []


def test_cmd_select_estimate_ledoit(files, capsys):
    tmp, data, _ = files
    out = tmp / "lw.json"
    code, _, _ = run(["select", data, "--estimate", "ledoit", "--error-rate", "fdr",
                      "--seed", 1, "--out", out], capsys)
    d = json.loads(out.read_text())
    assert code == 0 and d["provenance"]["source"] == "ledoit_wolf"
    assert d["error_rate"] == "fdr_bh"


def test_cmd_select_jobs_invariant(files, capsys, monkeypatch):
    tmp, data, model = files
    a, b = tmp / "j1.json", tmp / "j3.json"
    base = ["select", data, model, "--engine", "resample", "--M", 100, "--seed", 4,
            "--no-screen"]
    run(base + ["--out", a], capsys)
    monkeypatch.setenv("DCRT_JOBS", "3")
    run(base + ["--out", b], capsys)
    da, db = json.loads(a.read_text()), json.loads(b.read_text())
    da.pop("timings_ms")
    db.pop("timings_ms")
    assert da == db


def test_cmd_select_model_xor_estimate(files, capsys):
    tmp, data, model = files
    code, _, err = run(["select", data, model, "--estimate", "ledoit", "--seed", 1], capsys)
    assert code == 2
    code, _, err = run(["select", data, "--seed", 1], capsys)
    assert code == 2 and "model" in err


def test_bad_flag_value(files, capsys):
    _, data, model = files
    code, _, _ = run(["select", data, model, "--method", "magic", "--seed", 1], capsys)
    assert code == 2


# --- config file -------------------------------------------------------------------------

def test_config_file_prepopulates_flags(files, capsys):
    tmp, data, model = files
    cfg = tmp / "run.cfg"
    out = tmp / "cfg.json"
    cfg.write_text(f"# select defaults\nseed = 7\nalpha = 0.2\nerror-rate = fdr\nout = {out}\n")
    code, _, _ = run(["select", data, model, "--config", cfg], capsys)
    d = json.loads(out.read_text())
    assert code == 0 and d["alpha"] == 0.2 and d["provenance"]["seed"] == 7
    # command-line flags win
    code, _, _ = run(["select", data, model, "--config", cfg, "--alpha", 0.05], capsys)
    assert json.loads(out.read_text())["alpha"] == 0.05


def test_config_file_rejects_unknown_key(files, capsys):
    tmp, data, model = files
    cfg = tmp / "bad.cfg"
    cfg.write_text("seed = 1\ncolour = red\n")
    code, _, err = run(["select", data, model, "--config", cfg], capsys)
    assert code == 2 and "colour" in err


def test_read_config_syntax(tmp_path):
    from dcrt import ValidationError

    p = tmp_path / "c.cfg"
    p.write_text("seed 3\n")
    with pytest.raises(ValidationError):
        read_config(p)


# --- estimate-model ---------------------------------------------------------------------

@pytest.mark.parametrize("estimator", ["ledoit", "nodewise"])
def test_estimate_model_roundtrip(files, capsys, estimator):
    tmp, data, _ = files
    mpath = tmp / f"{estimator}.json"
    code, _, _ = run(["estimate-model", data, "--estimator", estimator, "--out", mpath,
                      "--seed", 0], capsys)
    assert code == 0
    saved = json.loads(mpath.read_text())
    if estimator == "nodewise":
        assert len(saved["laws"]) == 6
    out = tmp / f"{estimator}_res.json"
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        code, _, _ = run(["select", data, mpath, "--seed", 1, "--out", out], capsys)
    assert code == 0


def test_estimate_model_constant_column(tmp_path, capsys):
    data = tmp_path / "const.csv"
    rng = np.random.default_rng(1)
    rows = ["y,a,b"] + [f"{rng.standard_normal()},{rng.standard_normal()},2.0" for _ in range(20)]
    data.write_text("\n".join(rows) + "\n")
    code, _, err = run(["estimate-model", data, "--out", tmp_path / "m.json"], capsys)
    assert code == 2 and "'b'" in err


def test_malformed_csv(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text("y,a\n1.0,2.0\n1.0,oops\n")
    code, _, err = run(["estimate-model", data], capsys)
    assert code == 2 and "line 3" in err


# --- simulate ----------------------------------------------------------------------------

def test_cmd_simulate(tmp_path, capsys):
    design = tmp_path / "design.json"
    design.write_text(json.dumps({"n": 60, "p": 10, "s": 2,
                                  "response": {"kind": "linear", "nu": 0.8}}))
    out = tmp_path / "report.csv"
    argv = ["simulate", "--design-file", design, "--methods", "d0_rf_bh,hrt_bh", "--reps", 2,
            "--seed", 9, "--out", out]
    code, stdout, _ = run(argv, capsys)
    assert code == 0 and out.exists() and out.with_suffix(".json").exists()
    first = out.read_bytes()
    run(argv, capsys)
    assert out.read_bytes() == first
    assert b"d0_rf_bh,power" in first


def test_cmd_simulate_unknown_method(tmp_path, capsys):
    design = tmp_path / "design.json"
    design.write_text(json.dumps({"n": 30, "p": 5, "s": 1}))
    code, _, err = run(["simulate", "--design-file", design, "--methods", "magic",
                        "--seed", 1], capsys)
    assert code == 2 and "d0_rf_bh" in err


def test_cmd_simulate_malformed_design(tmp_path, capsys):
    design = tmp_path / "design.json"
    design.write_text("{not json")
    code, _, _ = run(["simulate", "--design-file", design, "--seed", 1], capsys)
    assert code == 2


def test_console_script(files):
    exe = shutil.which("dcrt")
    if exe is None:
        pytest.skip("console script not installed")
    _, data, model = files
    proc = subprocess.run([exe, "test", str(data), str(model), "--variable", "g4", "--seed",
                           "1"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["variable"] == "g4"
