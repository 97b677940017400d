"""Command-line entry point: `python merit_cli.py <command> [flags]`."""

from __future__ import annotations

import argparse
import logging
import sys

from src.analytics.errors import (
    ContractViolation,
    InfeasibleInputError,
    InputParseError,
    MeritError,
    NonConvergenceError,
)
from src.analytics.fw_solver import DEFAULT_BLOCK_SIZE, DEFAULT_MAX_SWEEPS
from src.analytics.regularizer import DEFAULT_LAMBDA, DEFAULT_MU
from src.analytics.synthbench import DEFAULT_MEMORY_BOUND, LAMBDA_RULES, SOLVERS, WARM_STARTS
from src.app import commands
from src.app.config import parse_list, parse_snr, threads_from_env
from src.processing.embed import DEFAULT_ENERGY_FRACTION

logger = logging.getLogger("merit")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_NONCONVERGENCE = 4


def _list_arg(cast):
    def _parse(text):
        try:
            return parse_list(text, cast)
        except ContractViolation as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return _parse


def _snr_arg(text):
    try:
        return parse_snr(text)
    except ContractViolation as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _solver_list(text):
    out = parse_list(text, str)
    bad = [s for s in out if s not in SOLVERS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown solver(s) {bad}; choose from {SOLVERS}")
    return out


def _add_regularizer(p: argparse.ArgumentParser):
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--mu", type=float, default=DEFAULT_MU)
    p.add_argument("--max-sweeps", type=int, default=DEFAULT_MAX_SWEEPS)


def _add_benchmark_solver(p: argparse.ArgumentParser):
    p.add_argument("--warm-start", choices=list(WARM_STARTS), default="spa")
    p.add_argument("--lambda-rule", choices=list(LAMBDA_RULES), default="balanced")


def _add_shape(p: argparse.ArgumentParser, n_default: str):
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--k", type=int, default=40)
    p.add_argument("--n", type=_list_arg(int), default=parse_list(n_default, int))
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-jsonl", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--omit-timing", action="store_true", help="drop wallTimeMs for byte-identical replays")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="merit", description="Row-sparse self-dictionary NMF with Frank-Wolfe.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-sweep", help="success rate over an SNR x N x solver grid")
    _add_shape(p, "200")
    p.add_argument("--snr-db", type=_list_arg(parse_snr), default=(10.0,))
    p.add_argument("--solvers", type=_solver_list, default=("merit", "spa"))
    p.add_argument("--lambda", dest="lambdas", type=_list_arg(float), default=None,
                   help="lambda grid; multipliers of the balanced lambda under --lambda-rule balanced")
    p.add_argument("--mu", dest="mus", type=_list_arg(float), default=(DEFAULT_MU,))
    p.add_argument("--max-sweeps", type=int, default=DEFAULT_MAX_SWEEPS)
    _add_benchmark_solver(p)
    p.set_defaults(func=commands.cmd_synth_sweep)

    p = sub.add_parser("memory-sweep", help="peak coefficient storage over an N grid")
    _add_shape(p, "200,1000,5000")
    p.set_defaults(trials=5)
    p.add_argument("--snr-db", type=_snr_arg, default=10.0)
    p.add_argument("--bound", type=float, default=DEFAULT_MEMORY_BOUND)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="lambda, or its multiplier under --lambda-rule balanced")
    p.add_argument("--mu", type=float, default=DEFAULT_MU)
    p.add_argument("--max-sweeps", type=int, default=DEFAULT_MAX_SWEEPS)
    _add_benchmark_solver(p)
    p.set_defaults(func=commands.cmd_memory_sweep)

    p = sub.add_parser("solve", help="run the solver on a data matrix")
    p.add_argument("--x", required=True, help="CSV or Matrix Market data matrix")
    _add_regularizer(p)
    p.add_argument("--tol", type=float, default=0.0, help="per-column residual at which a column freezes")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--warm-start", default="zero", help="zero | spa | file:<path>")
    p.add_argument("--t-init", type=int, default=None)
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--reduce-rows", type=int, default=None,
                   help="treat --x as symmetric and solve on its top eigenvector projection with this many rows")
    p.add_argument("--track-support", action="store_true")
    p.add_argument("--strict", action="store_true", help="exit 4 when --tol is not reached")
    p.add_argument("--omit-timing", action="store_true")
    p.add_argument("--out-c", required=True)
    p.add_argument("--out-report", required=True)
    p.set_defaults(func=commands.cmd_solve)

    p = sub.add_parser("select-anchors", help="anchor indices from C (rows) or from X (spa)")
    p.add_argument("--method", choices=["rows", "spa"], default="rows")
    p.add_argument("--c")
    p.add_argument("--x")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=commands.cmd_select_anchors)

    p = sub.add_parser("estimate-h", help="simplex least squares on given anchors")
    p.add_argument("--x", required=True)
    p.add_argument("--anchors")
    p.add_argument("--anchors-file")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--ls-tol", type=float, default=1e-10)
    p.add_argument("--out-h", required=True)
    p.add_argument("--out-report", required=True)
    p.set_defaults(func=commands.cmd_estimate_h)

    p = sub.add_parser("diagnostics", help="identifiability and memory quantities for known W, H, V")
    p.add_argument("--w", required=True)
    p.add_argument("--h", required=True)
    p.add_argument("--v")
    p.add_argument("--c", help="coefficient snapshot for the memory margin")
    p.add_argument("--anchors")
    p.add_argument("--anchors-file")
    p.add_argument("--t-init", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--mu", type=float, default=DEFAULT_MU)
    p.add_argument("--out", required=True)
    p.set_defaults(func=commands.cmd_diagnostics)

    p = sub.add_parser("community-eval", help="mixed-membership recovery from an adjacency matrix")
    p.add_argument("--adjacency", required=True)
    p.add_argument("--membership", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--energy-fraction", type=float, default=DEFAULT_ENERGY_FRACTION)
    p.add_argument("--warm-start", choices=["zero", "spa"], default="zero")
    p.add_argument("--eigen-tol", type=float, default=1e-8)
    p.add_argument("--eigen-max-iters", type=int, default=1000)
    p.add_argument("--strict", action="store_true", help="exit 4 when the eigen-embedding does not converge")
    _add_regularizer(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=commands.cmd_community_eval)

    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (InputParseError, ContractViolation)):
        return EXIT_PARSE
    if isinstance(exc, InfeasibleInputError):
        return EXIT_INFEASIBLE
    if isinstance(exc, NonConvergenceError):
        return EXIT_NONCONVERGENCE
    return EXIT_FAILURE


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK

    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        args.threads = threads_from_env()
        return args.func(args)
    except MeritError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
