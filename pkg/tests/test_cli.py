import json

import numpy as np
import pytest

from robust_debias.cli import main


@pytest.fixture
def data(tmp_path, rng):
    n, p = 60, 8
    X = rng.standard_normal((n, p))
    y = X[:, 0] + rng.standard_cauchy(n)
    path = tmp_path / "data.csv"
    header = "y," + ",".join(f"x{k}" for k in range(1, p + 1))
    np.savetxt(path, np.column_stack([y, X]), delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_help(capsys):
    assert run("fit", "--help") == 0
    assert "--lambda" in capsys.readouterr().out


def test_usage_errors(tmp_path, capsys):
    assert run() == 1
    assert run("nope") == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("y,x1\n1,2\n3,abc\n")
    assert run("fit", "--data", bad) == 1
    assert "bad.csv:3" in capsys.readouterr().err
    short = tmp_path / "short.csv"
    short.write_text("y,x1,x2\n1,2,3\n4,5\n")
    assert run("fit", "--data", short) == 1
    assert "short.csv:3" in capsys.readouterr().err
    hdr = tmp_path / "hdr.csv"
    hdr.write_text("y,a\n1,2\n")
    assert run("fit", "--data", hdr) == 1


def test_pipeline(tmp_path, data):
    fit_json = tmp_path / "fit.json"
    assert run("fit", "--data", data, "--lambda", "0.05", "--tau", "0.1", "--out", fit_json) == 0
    d = json.loads(fit_json.read_text())
    assert d["kkt_residual"] <= 1e-8
    dof_json = tmp_path / "dof.json"
    assert run("dof", "--fit", fit_json, "--data", data, "--out", dof_json) == 0
    closed = json.loads(dof_json.read_text())
    assert run("dof", "--fit", fit_json, "--data", data, "--method", "fd", "--h", "1e-6",
               "--out", dof_json) == 0
    fd = json.loads(dof_json.read_text())
    assert abs(fd["trace_value"] - closed["trace_value"]) <= 1e-3 * closed["trace_value"] + \
        len(fd["diagnostics"]["skipped"])
    ci = tmp_path / "ci.csv"
    assert run("infer", "--fit", fit_json, "--data", data, "--assume-identity",
               "--coords", "1,3", "--out", ci) == 0
    lines = ci.read_text().splitlines()
    assert lines[0] == "j,beta_hat,debiased,lo,hi,omega_jj,v_hat,flags"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["1", "3"]
    sig = tmp_path / "sigma.csv"
    np.savetxt(sig, 2 * np.eye(8), delimiter=",")
    assert run("infer", "--fit", fit_json, "--data", data, "--sigma-file", sig, "--out", ci) == 0
    assert run("infer", "--fit", fit_json, "--data", data, "--out", ci) == 1
    assert run("infer", "--fit", fit_json, "--data", data, "--assume-identity",
               "--coords", "0", "--out", ci) == 1


def test_fit_reproducible(tmp_path, data):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run("fit", "--data", data, "--lambda", "0.05", "--tau", "0.1", "--out", a)
    run("fit", "--data", data, "--lambda", "0.05", "--tau", "0.1", "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_tau_zero_needs_flag(tmp_path, data):
    out = tmp_path / "f.json"
    assert run("fit", "--data", data, "--lambda", "0.05", "--tau", "0", "--out", out) == 1
    assert run("fit", "--data", data, "--lambda", "0.05", "--tau", "0", "--allow-tau-zero",
               "--out", out) == 0


def test_numerical_failure_exit_code(tmp_path, capsys):
    # tau = 0 with duplicated columns: singular active Gram
    n = 30
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    y = 3 * x + 0.01 * rng.standard_normal(n)
    path = tmp_path / "dup.csv"
    np.savetxt(path, np.column_stack([y, x, x]), delimiter=",", header="y,x1,x2", comments="")
    fit_json = tmp_path / "fit.json"
    assert run("fit", "--data", path, "--lambda", "1e-3", "--tau", "0", "--allow-tau-zero",
               "--out", fit_json) == 0
    d = json.loads(fit_json.read_text())
    if len(d["active_set"]) < 2:
        pytest.skip("solver kept a single copy of the duplicated column")
    out = tmp_path / "dof.json"
    assert run("dof", "--fit", fit_json, "--data", path, "--out", out) == 2
    diag = json.loads((tmp_path / "dof.json.error.json").read_text())
    assert diag["error"] == "SingularActiveGram"


def test_stein_verify(tmp_path):
    out = tmp_path / "s.json"
    assert run("stein-verify", "--identity", "first", "--field", "linear", "--n", "8",
               "--samples", "3000", "--seed", "1", "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["identity"] == "first_order" and rep["passed"] and rep["samples"] == 3000


def test_simulate(tmp_path, monkeypatch):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"n": 30, "p": 20, "reps": 8, "sigma_design": "normalized",
                               "tau_grid": [0.1], "lambda_scales": [1.0]}))
    monkeypatch.setenv("ROBUST_DEBIAS_THREADS", "2")
    assert run("simulate", "--config", cfg, "--out-dir", tmp_path / "res") == 0
    assert (tmp_path / "res" / "summary.csv").exists()
    monkeypatch.setenv("ROBUST_DEBIAS_THREADS", "zero")
    assert run("simulate", "--config", cfg, "--out-dir", tmp_path / "res") == 1
    cfg.write_text('{"n": 30,')
    monkeypatch.delenv("ROBUST_DEBIAS_THREADS")
    assert run("simulate", "--config", cfg, "--out-dir", tmp_path / "res") == 1
