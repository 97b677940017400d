from __future__ import annotations

import argparse
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from src.analytics.aggregations import summarize_memory, summarize_trials, trials_frame
from src.analytics.errors import ConfigError, InputParseError, NonConvergenceError
from src.analytics.estimator import SimplexLsConfig, anchor_fit_residual, estimate_h
from src.analytics.fw_solver import SolveConfig, solve, warm_start_t_init
from src.analytics.matstore import DenseMatrix
from src.analytics.selection import (
    check_init_regularity,
    compute_diagnostics,
    regularized_memory_margin,
    select_anchors,
    unregularized_noise_bound,
)
from src.analytics.spa import AnchorSet, spa_select, spa_warm_start
from src.analytics.synthbench import evaluate, generate, memory_report, run_trial
from src.app.config import MemorySweepConfig, RunConfig, SweepConfig, default_lambda
from src.app.output import csv_bytes, json_bytes, jsonl_bytes, with_config, write_atomic
from src.processing.assemble import CommunityConfig, assemble
from src.processing.embed import EigenConfig, reduce_rows
from src.processing.matrix_io import (
    coefficient_bytes,
    dense_bytes,
    read_coefficients,
    read_dense,
    read_membership,
    read_symmetric,
)

logger = logging.getLogger(__name__)


def _echo(args: argparse.Namespace) -> dict:
    skip = {"func", "log_level"}
    params = {k.replace("_", "-"): v for k, v in sorted(vars(args).items()) if k not in skip and k != "command"}
    return RunConfig(args.command, params).to_dict()


def _parse_anchors(text: str | None, path: str | None) -> AnchorSet:
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputParseError(f"cannot read anchors: {exc}", path=path) from None
        idx = data.get("anchors", data) if isinstance(data, dict) else data
        if isinstance(idx, dict):
            idx = idx.get("indices", [])
        return AnchorSet(tuple(int(i) for i in idx))
    if not text:
        raise ConfigError("anchors are required (--anchors or --anchors-file)")
    try:
        return AnchorSet(tuple(int(s) for s in text.split(",") if s.strip()))
    except ValueError:
        raise ConfigError(f"anchors must be comma-separated integers, got {text!r}") from None


# -------------------------
# Sweeps
# -------------------------

def run_synth_sweep(cfg: SweepConfig) -> tuple[list, pd.DataFrame]:
    """Trial outcomes in grid order plus the per-cell summary."""
    jobs = [
        (cfg.m, cfg.k, n, snr, cfg.seed, trial, solver, cfg.solve_config(lam, mu) if solver != "spa" else SolveConfig())
        for snr, n, solver, lam, mu in cfg.cells()
        for trial in range(cfg.trials)
    ]
    logger.info("synth sweep: %d trials", len(jobs))

    def _one(job):
        *head, solve_cfg = job
        return evaluate(*head, cfg=solve_cfg, warm_start=cfg.warm_start, lambda_rule=cfg.lambda_rule)

    if cfg.threads > 0:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(_one, jobs))
    else:
        outcomes = [_one(j) for j in jobs]

    records = [o.to_record(include_timing=not cfg.omit_timing) for o in outcomes]
    return outcomes, summarize_trials(trials_frame(records))


def cmd_synth_sweep(args) -> int:
    if args.lambdas is None:
        args.lambdas = (default_lambda(args.lambda_rule),)
    cfg = SweepConfig(
        seed=args.seed,
        m=args.m,
        k=args.k,
        n_values=args.n,
        snr_db=args.snr_db,
        trials=args.trials,
        solvers=args.solvers,
        lambdas=args.lambdas,
        mus=args.mus,
        max_sweeps=args.max_sweeps,
        warm_start=args.warm_start,
        lambda_rule=args.lambda_rule,
        threads=args.threads,
        omit_timing=args.omit_timing,
    )
    echo = _echo(args)
    outcomes, summary = run_synth_sweep(cfg)
    records = [{"config": echo}] + [o.to_record(include_timing=not cfg.omit_timing) for o in outcomes]
    write_atomic(args.out_jsonl, jsonl_bytes(records))
    write_atomic(args.out_csv, csv_bytes(summary, config=echo))
    return 0


def run_memory_sweep(cfg: MemorySweepConfig) -> tuple[list[dict], pd.DataFrame]:
    jobs = [(n, trial) for n in cfg.n_values for trial in range(cfg.trials)]

    def _one(job):
        n, trial = job
        inst = generate(cfg.m, cfg.k, n, cfg.snr_db, cfg.seed, trial)
        outcome = run_trial(inst, "merit", cfg.solve_config(), warm_start=cfg.warm_start, lambda_rule=cfg.lambda_rule)
        rec = outcome.to_record(include_timing=not cfg.omit_timing)
        rec.update(memory_report(outcome, cfg.k, n, cfg.bound))
        return rec

    if cfg.threads > 0:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            records = list(pool.map(_one, jobs))
    else:
        records = [_one(j) for j in jobs]
    return records, summarize_memory(trials_frame(records), cfg.bound)


def cmd_memory_sweep(args) -> int:
    if args.lam is None:
        args.lam = default_lambda(args.lambda_rule)
    cfg = MemorySweepConfig(
        seed=args.seed,
        m=args.m,
        k=args.k,
        n_values=args.n,
        snr_db=args.snr_db,
        trials=args.trials,
        lam=args.lam,
        mu=args.mu,
        max_sweeps=args.max_sweeps,
        bound=args.bound,
        warm_start=args.warm_start,
        lambda_rule=args.lambda_rule,
        threads=args.threads,
        omit_timing=args.omit_timing,
    )
    echo = _echo(args)
    records, summary = run_memory_sweep(cfg)
    write_atomic(args.out_jsonl, jsonl_bytes([{"config": echo}] + records))
    write_atomic(args.out_csv, csv_bytes(summary, config=echo))
    return 0


# -------------------------
# Single matrix commands
# -------------------------

def _warm_start(X: DenseMatrix, mode: str, k: int | None, t_init: int | None, ls_cfg: SimplexLsConfig):
    """Returns (C_init, t_init, spa anchors) for --warm-start zero | spa | file:<path>."""
    if mode == "zero":
        return None, 0, None
    if mode == "spa":
        if not k:
            raise ConfigError("--warm-start spa needs --k")
        anchors, C_init, t0 = spa_warm_start(X, k, ls_cfg)
        return C_init, (t_init or t0), anchors
    if mode.startswith("file:"):
        C_init = read_coefficients(mode[len("file:"):], X.cols)
        if t_init is None:
            bad = C_init.infeasible_columns()
            t_init = 1 if bad else warm_start_t_init(X, C_init)
        return C_init, t_init, None
    raise ConfigError(f"--warm-start must be zero, spa or file:<path>, got {mode!r}")


def _solve_input(args) -> DenseMatrix:
    """X as given, or U^T X for a symmetric X (e.g. a co-occurrence matrix) under --reduce-rows."""
    if not args.reduce_rows:
        return read_dense(args.x)
    A = read_symmetric(args.x)
    X = reduce_rows(A, args.reduce_rows, EigenConfig(seed=args.seed))
    logger.info("reduced %d x %d input to %d rows", A.n, A.n, X.rows)
    return X


def cmd_solve(args) -> int:
    X = _solve_input(args)
    ls_cfg = SimplexLsConfig()
    C_init, t_init, spa_anchors = _warm_start(X, args.warm_start, args.k, args.t_init, ls_cfg)
    cfg = SolveConfig(
        lam=args.lam,
        mu=args.mu,
        max_sweeps=args.max_sweeps,
        t_init=t_init,
        per_column_tol=args.tol,
        seed=args.seed,
        track_support=args.track_support,
        block_size=args.block_size,
        threads=args.threads,
    )
    C, report = solve(X, cfg, C_init=C_init)

    if args.k:
        anchors = select_anchors(C, args.k)
    else:
        anchors = AnchorSet(tuple(int(i) for i in C.support_rows()))

    payload = {
        "report": report.to_dict(include_timing=not args.omit_timing),
        "anchors": anchors.to_dict(),
        "solveConfig": cfg.to_dict(),
    }
    if args.reduce_rows:
        payload["reducedRows"] = X.rows
    if spa_anchors is not None:
        payload["spaAnchors"] = spa_anchors.to_dict()
    echo = _echo(args)
    write_atomic(args.out_c, coefficient_bytes(C, comment=f"merit solve seed={args.seed}"))
    write_atomic(args.out_report, json_bytes(with_config(echo, payload)))

    if args.strict and args.tol > 0 and not report.all_frozen:
        raise NonConvergenceError(
            f"{report.frozen_columns} of {X.cols} columns reached tol={args.tol} in {report.sweeps_run} sweeps"
        )
    return 0


def cmd_select_anchors(args) -> int:
    if args.method == "spa":
        if not args.x:
            raise ConfigError("--method spa needs --x")
        anchors = spa_select(read_dense(args.x), args.k)
    else:
        if not args.c:
            raise ConfigError("--method rows needs --c")
        C = read_coefficients(args.c)
        anchors = select_anchors(C, args.k)
    write_atomic(args.out, json_bytes(with_config(_echo(args), {"anchors": anchors.to_dict()})))
    return 0


def cmd_estimate_h(args) -> int:
    X = read_dense(args.x)
    anchors = _parse_anchors(args.anchors, args.anchors_file)
    cfg = SimplexLsConfig(max_iters=args.max_iters, tol=args.ls_tol)
    H = estimate_h(X, anchors, cfg)
    payload = {
        "anchors": anchors.to_dict(),
        "residual": anchor_fit_residual(X, anchors, H),
    }
    write_atomic(args.out_h, dense_bytes(H.data, comment="estimated H"))
    write_atomic(args.out_report, json_bytes(with_config(_echo(args), payload)))
    return 0


def cmd_diagnostics(args) -> int:
    W = read_dense(args.w)
    H = read_dense(args.h)
    V = read_dense(args.v) if args.v else DenseMatrix(np.zeros((W.rows, H.cols)))
    anchors = _parse_anchors(args.anchors, args.anchors_file) if (args.anchors or args.anchors_file) else None

    diag = compute_diagnostics(W, H, V, args.lam, args.mu, anchors=anchors)
    payload = {"diagnostics": diag.to_dict()}
    if args.c:
        C = read_coefficients(args.c, H.cols)
        rows = anchors if anchors is not None else select_anchors(C, H.rows)
        payload["memoryMargin"] = regularized_memory_margin(W, H, C, rows, args.lam, args.mu)
        if args.t_init:
            regular, xi = check_init_regularity(C, args.t_init, rows)
            payload["initRegularity"] = {"regular": regular, "xi": xi, "tInit": args.t_init}
    if args.eta:
        payload["unregularized"] = unregularized_noise_bound(W, H, args.eta, anchors=anchors, alpha_w=diag.alpha_w)
    write_atomic(args.out, json_bytes(with_config(_echo(args), payload)))
    return 0


def cmd_community_eval(args) -> int:
    A = read_symmetric(args.adjacency)
    H_ref = read_membership(args.membership, args.k)
    cfg = CommunityConfig(
        k=args.k,
        energy_fraction=args.energy_fraction,
        warm_start=args.warm_start,
        solve=SolveConfig(lam=args.lam, mu=args.mu, max_sweeps=args.max_sweeps, seed=args.seed, threads=args.threads),
        eigen=EigenConfig(tol=args.eigen_tol, max_iters=args.eigen_max_iters, seed=args.seed),
    )
    result = assemble(A, H_ref, cfg)
    write_atomic(args.out, json_bytes(with_config(_echo(args), result)))
    if args.strict and not result["eigen"]["converged"]:
        raise NonConvergenceError("eigen-embedding did not converge")
    return 0
