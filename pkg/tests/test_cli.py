import json

import numpy as np
import pandas as pd
import pytest

from merit_cli import EXIT_INFEASIBLE, EXIT_NONCONVERGENCE, EXIT_OK, EXIT_PARSE, exit_code, main
from src.analytics.errors import ConfigError, InfeasibleInputError, InputParseError, NonConvergenceError, NonFiniteGradientError
from src.app.config import MemorySweepConfig, SweepConfig, default_lambda, parse_list, parse_snr, threads_from_env
from src.processing.matrix_io import write_dense_csv


def _write(path, a):
    path.write_text(write_dense_csv(np.asarray(a, dtype=float)))
    return str(path)


def _sweep_args(tmp_path, *extra):
    return [
        "synth-sweep",
        "--m", "15", "--k", "3", "--n", "40",
        "--trials", "1", "--seed", "7",
        "--snr-db", "inf", "--solvers", "merit0",
        "--max-sweeps", "80",
        "--out-jsonl", str(tmp_path / "trials.jsonl"),
        "--out-csv", str(tmp_path / "summary.csv"),
        *extra,
    ]


def test_exit_code_mapping():
    assert exit_code(InputParseError("x")) == EXIT_PARSE
    assert exit_code(ConfigError("x")) == EXIT_PARSE
    assert exit_code(InfeasibleInputError("x")) == EXIT_INFEASIBLE
    assert exit_code(NonConvergenceError("x")) == EXIT_NONCONVERGENCE
    assert exit_code(NonFiniteGradientError(0, 0)) == 1


def test_help_and_bad_flags(capsys):
    assert main(["--help"]) == EXIT_OK
    assert main(["solve", "--x", "a.csv"]) == EXIT_PARSE
    assert main(["synth-sweep", "--seed", "1", "--out-jsonl", "a", "--out-csv", "b", "--solvers", "xray"]) == EXIT_PARSE


def test_solve_identity(tmp_path):
    x = _write(tmp_path / "x.csv", np.eye(3))
    report_path = tmp_path / "report.json"
    rc = main([
        "solve", "--x", x, "--lambda", "0", "--max-sweeps", "1", "--seed", "1",
        "--out-c", str(tmp_path / "c.mtx"), "--out-report", str(report_path),
    ])
    assert rc == EXIT_OK
    report = json.loads(report_path.read_text())
    assert report["anchors"]["indices"] == [0, 1, 2]
    assert report["config"]["command"] == "solve"
    assert report["config"]["lam"] == 0.0
    assert report["report"]["sweepsRun"] == 1
    assert (tmp_path / "c.mtx").read_text().startswith("%%MatrixMarket")


def test_solve_echoes_defaults(tmp_path):
    x = _write(tmp_path / "x.csv", np.eye(3))
    report_path = tmp_path / "report.json"
    main(["solve", "--x", x, "--seed", "1", "--max-sweeps", "2",
          "--out-c", str(tmp_path / "c.mtx"), "--out-report", str(report_path)])
    cfg = json.loads(report_path.read_text())["config"]
    assert cfg["lam"] == 1e-6
    assert cfg["mu"] == 1e-5


def test_solve_spa_warm_start(tmp_path, rng):
    W = rng.random((8, 5))
    E = rng.standard_exponential((5, 25))
    H = np.hstack([np.eye(5), E / E.sum(axis=0)])
    x = _write(tmp_path / "x.csv", W @ H + 1e-3 * rng.random((8, 30)))
    report_path = tmp_path / "report.json"
    rc = main([
        "solve", "--x", x, "--seed", "1", "--warm-start", "spa", "--k", "5", "--max-sweeps", "5",
        "--out-c", str(tmp_path / "c.mtx"), "--out-report", str(report_path),
    ])
    assert rc == EXIT_OK
    out = json.loads(report_path.read_text())
    assert out["report"]["tStart"] >= 1
    assert out["report"]["tStart"] == out["solveConfig"]["t_init"]
    assert sorted(out["spaAnchors"]["indices"]) == [0, 1, 2, 3, 4]


def test_malformed_input_exits_2(tmp_path, capsys):
    bad = tmp_path / "x.csv"
    bad.write_text("1,0\n0,oops\n")
    rc = main(["solve", "--x", str(bad), "--seed", "1",
               "--out-c", str(tmp_path / "c.mtx"), "--out-report", str(tmp_path / "r.json")])
    assert rc == EXIT_PARSE
    assert "line 2" in capsys.readouterr().err
    assert not (tmp_path / "r.json").exists()


def test_infeasible_warm_start_exits_3(tmp_path):
    x = _write(tmp_path / "x.csv", np.eye(2))
    c = _write(tmp_path / "c.csv", [[0.5, 0.0], [0.2, 1.0]])
    rc = main(["solve", "--x", x, "--seed", "1", "--warm-start", f"file:{c}",
               "--out-c", str(tmp_path / "c.mtx"), "--out-report", str(tmp_path / "r.json")])
    assert rc == EXIT_INFEASIBLE


def test_strict_tol_exits_4(tmp_path):
    # column 2 starts at e_0 and cannot reach its exact 50/50 mix in two sweeps
    x = _write(tmp_path / "x.csv", [[2.0, 0.0, 1.0], [0.0, 1.0, 0.5]])
    rc = main(["solve", "--x", x, "--seed", "1", "--max-sweeps", "2", "--tol", "1e-12", "--strict",
               "--out-c", str(tmp_path / "c.mtx"), "--out-report", str(tmp_path / "r.json")])
    assert rc == EXIT_NONCONVERGENCE
    assert (tmp_path / "r.json").exists()


def test_select_anchors_and_estimate_h(tmp_path):
    x = _write(tmp_path / "x.csv", [[1.0, 0.0, 0.7], [0.0, 1.0, 0.3]])
    anchors_path = tmp_path / "anchors.json"
    assert main(["select-anchors", "--method", "spa", "--x", x, "--k", "2", "--out", str(anchors_path)]) == EXIT_OK
    assert json.loads(anchors_path.read_text())["anchors"]["indices"] == [0, 1]

    report_path = tmp_path / "h.json"
    rc = main(["estimate-h", "--x", x, "--anchors-file", str(anchors_path),
               "--out-h", str(tmp_path / "h.mtx"), "--out-report", str(report_path)])
    assert rc == EXIT_OK
    assert json.loads(report_path.read_text())["residual"] == pytest.approx(0.0, abs=1e-6)


def test_diagnostics_command(tmp_path):
    w = _write(tmp_path / "w.csv", np.eye(2))
    h = _write(tmp_path / "h.csv", [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    c = _write(tmp_path / "c.csv", [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.0, 0.0, 0.0]])
    out = tmp_path / "diag.json"
    rc = main(["diagnostics", "--w", w, "--h", h, "--c", c, "--t-init", "2", "--eta", "0.1",
               "--lambda", "0.01", "--out", str(out)])
    assert rc == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["diagnostics"]["dH"] == pytest.approx(0.5)
    assert payload["initRegularity"]["regular"] is True
    assert "noiseTolerance" in payload["unregularized"]


def test_synth_sweep_noiseless(tmp_path):
    assert main(_sweep_args(tmp_path)) == EXIT_OK
    lines = (tmp_path / "trials.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["config"]["command"] == "synth-sweep"
    trial = json.loads(lines[1])
    assert trial["success"] is True
    assert trial["snrDb"] == "inf"
    assert "wallTimeMs" in trial

    summary = pd.read_csv(tmp_path / "summary.csv", comment="#")
    assert len(summary) == 1
    assert summary["successRate"].iloc[0] == 1.0


def test_omit_timing_replays_byte_identical(tmp_path):
    args = _sweep_args(tmp_path, "--omit-timing")
    assert main(args) == EXIT_OK
    first = ((tmp_path / "trials.jsonl").read_bytes(), (tmp_path / "summary.csv").read_bytes())
    assert main(args) == EXIT_OK
    second = ((tmp_path / "trials.jsonl").read_bytes(), (tmp_path / "summary.csv").read_bytes())
    assert first == second
    assert b"wallTimeMs" not in first[0]


def test_threads_env_keeps_results(tmp_path, monkeypatch):
    args = _sweep_args(tmp_path, "--omit-timing", "--solvers", "merit0,spa", "--trials", "2")
    assert main(args) == EXIT_OK
    serial = (tmp_path / "trials.jsonl").read_text().splitlines()[1:]
    monkeypatch.setenv("MERIT_THREADS", "3")
    assert main(args) == EXIT_OK
    lines = (tmp_path / "trials.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["config"]["threads"] == 3
    assert lines[1:] == serial


def test_bad_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("MERIT_THREADS", "many")
    assert main(_sweep_args(tmp_path)) == EXIT_PARSE


def test_threads_from_env():
    assert threads_from_env({}) == 0
    assert threads_from_env({"MERIT_THREADS": " 4 "}) == 4
    with pytest.raises(ConfigError):
        threads_from_env({"MERIT_THREADS": "-1"})


def test_parsers():
    assert parse_snr("inf") == float("inf")
    assert parse_snr("8") == 8.0
    with pytest.raises(ConfigError):
        parse_snr("loud")
    assert parse_list("200, 1000,5000", int) == (200, 1000, 5000)
    with pytest.raises(ConfigError):
        parse_list("", int)


def test_sweep_cells():
    cfg = SweepConfig(seed=1, m=5, k=2, n_values=(10,), snr_db=(6.0, 8.0), solvers=("merit", "merit0", "spa"),
                      lambdas=(1e-6, 1e-5), mus=(1e-5,))
    cells = list(cfg.cells())
    assert len(cells) == 2 * (2 + 1 + 1)
    assert (6.0, 10, "merit0", 0.0, 1e-5) in cells
    assert (8.0, 10, "spa", 0.0, 0.0) in cells
    with pytest.raises(ConfigError):
        SweepConfig(seed=1, m=5, k=2, n_values=(2,))


def test_community_eval(tmp_path):
    Z = np.array([[1.0, 0.0, 0.8, 0.3, 0.6, 0.1], [0.0, 1.0, 0.2, 0.7, 0.4, 0.9]])
    A = Z.T @ (np.eye(2) + 0.2) @ Z
    a = _write(tmp_path / "a.csv", A)
    z = _write(tmp_path / "z.csv", Z.T)
    out = tmp_path / "community.json"
    rc = main(["community-eval", "--adjacency", a, "--membership", z, "--k", "2", "--seed", "1",
               "--energy-fraction", "1.0", "--out", str(out)])
    assert rc == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["config"]["command"] == "community-eval"
    assert sorted(payload["pureNodes"]) == [0, 1]
    assert payload["src"] >= 0.99


def test_solve_on_reduced_rows(tmp_path):
    Z = np.array([[1.0, 0.0, 0.8, 0.3, 0.6, 0.1], [0.0, 1.0, 0.2, 0.7, 0.4, 0.9]])
    A = Z.T @ (np.eye(2) + 0.2) @ Z
    a = _write(tmp_path / "a.csv", (A + A.T) / 2)
    report_path = tmp_path / "report.json"
    rc = main([
        "solve", "--x", a, "--reduce-rows", "2", "--k", "2", "--lambda", "0", "--seed", "1",
        "--max-sweeps", "200", "--out-c", str(tmp_path / "c.mtx"), "--out-report", str(report_path),
    ])
    assert rc == EXIT_OK
    report = json.loads(report_path.read_text())
    assert report["reducedRows"] == 2
    assert sorted(report["anchors"]["indices"]) == [0, 1]


def test_synth_sweep_echoes_lambda_rule_and_warm_start(tmp_path):
    args = _sweep_args(tmp_path, "--solvers", "merit", "--snr-db", "30",
                       "--lambda-rule", "fixed", "--warm-start", "zero", "--lambda", "1e-6")
    assert main(args) == EXIT_OK
    lines = (tmp_path / "trials.jsonl").read_text().splitlines()
    echo = json.loads(lines[0])["config"]
    assert echo["lambda-rule"] == "fixed"
    assert echo["warm-start"] == "zero"
    trial = json.loads(lines[1])
    assert trial["lambdaRule"] == "fixed"
    assert trial["lambdaUsed"] == 1e-6


def test_synth_sweep_defaults_to_balanced_multiplier(tmp_path):
    args = _sweep_args(tmp_path, "--solvers", "merit", "--snr-db", "30")
    assert main(args) == EXIT_OK
    lines = (tmp_path / "trials.jsonl").read_text().splitlines()
    echo = json.loads(lines[0])["config"]
    assert echo["lambda-rule"] == "balanced"
    assert echo["warm-start"] == "spa"
    assert echo["lambdas"] == [1.0]
    trial = json.loads(lines[1])
    assert trial["lambda"] == 1.0
    assert trial["lambdaUsed"] > 0.0


def test_synth_sweep_rejects_unknown_lambda_rule(tmp_path):
    assert main(_sweep_args(tmp_path, "--lambda-rule", "tuned")) == EXIT_PARSE


def test_benchmark_configs_default_to_balanced_rule():
    assert default_lambda("balanced") == 1.0
    assert default_lambda("fixed") < 1e-3
    cfg = SweepConfig(seed=1)
    assert (cfg.lambda_rule, cfg.warm_start, cfg.lambdas) == ("balanced", "spa", (1.0,))
    mem = MemorySweepConfig(seed=1)
    assert (mem.lambda_rule, mem.warm_start, mem.lam) == ("balanced", "spa", 1.0)
    with pytest.raises(ConfigError):
        SweepConfig(seed=1, warm_start="random")
    with pytest.raises(ConfigError):
        MemorySweepConfig(seed=1, lambda_rule="tuned")
