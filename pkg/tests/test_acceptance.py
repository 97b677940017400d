"""Full-scale benchmark checks; run with `pytest -m slow`."""

import math

import pytest

from src.analytics.fw_solver import SolveConfig
from src.analytics.synthbench import evaluate, success_rate
from src.app.config import MemorySweepConfig, SweepConfig
from src.app.commands import run_memory_sweep, run_synth_sweep

pytestmark = pytest.mark.slow


def test_noiseless_identifiability():
    outcomes = [
        evaluate(30, 5, 100, math.inf, seed=1, trial=t, solver="merit0", cfg=SolveConfig(lam=0.0))
        for t in range(100)
    ]
    assert sum(o.success for o in outcomes) >= 99
    assert all(o.peak_nonzero_rows <= 5 for o in outcomes if o.success)


def test_success_rate_at_ten_db():
    # lambda is a multiplier on the weight balanced at the SPA warm start
    cfg = SolveConfig(lam=1.0, mu=1e-5)
    outcomes = [
        evaluate(50, 40, 200, 10.0, seed=3, trial=t, solver="merit", cfg=cfg, warm_start="spa", lambda_rule="balanced")
        for t in range(50)
    ]
    assert success_rate(outcomes) >= 0.90


def test_merit_beats_spa_at_eight_db():
    cfg = SweepConfig(seed=4, m=50, k=40, n_values=(200,), snr_db=(8.0,), trials=50, solvers=("merit", "spa"))
    _, summary = run_synth_sweep(cfg)
    rates = dict(zip(summary["solver"], summary["successRate"]))
    assert rates["merit"] > rates["spa"]


def test_memory_grows_linearly():
    cfg = MemorySweepConfig(seed=5, m=50, k=40, n_values=(200, 1000, 5000), snr_db=10.0, trials=5)
    _, summary = run_memory_sweep(cfg)
    assert (summary["meanPeakNnzRatio"] <= 2.0).all()
    growth = summary.set_index("N")["growthFactor"]
    assert growth[5000] <= 6.0


def test_sweeps_replay_identically():
    cfg = SweepConfig(seed=6, m=30, k=5, n_values=(100,), snr_db=(math.inf, 10.0), trials=5,
                      solvers=("merit0", "merit", "spa"), omit_timing=True)
    first, _ = run_synth_sweep(cfg)
    second, _ = run_synth_sweep(cfg)
    assert [o.to_record(include_timing=False) for o in first] == [o.to_record(include_timing=False) for o in second]
