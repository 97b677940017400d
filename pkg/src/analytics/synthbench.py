from __future__ import annotations

import itertools
import logging
import math
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from src.analytics.errors import ContractViolation, MeritError
from src.analytics.estimator import SimplexLsConfig, anchor_fit_residual, estimate_h
from src.analytics.fw_solver import SolveConfig, SolveReport, balanced_lambda, solve
from src.analytics.matstore import AGGREGATE_BYTES_PER_ROW, ENTRY_BYTES, DenseMatrix
from src.analytics.selection import select_anchors
from src.analytics.spa import AnchorSet, spa_select, spa_warm_start

logger = logging.getLogger(__name__)

SOLVERS = ("merit", "merit0", "spa")
WARM_STARTS = ("zero", "spa")
LAMBDA_RULES = ("fixed", "balanced")
# numerical breakdowns inside one trial; anything else is a bug and propagates
TRIAL_ERRORS = (MeritError, np.linalg.LinAlgError, FloatingPointError, ValueError)
DEFAULT_MEMORY_BOUND = 2.0
EXACT_MATCH_MAX_K = 6
_U53 = 2.0**-53


@dataclass(frozen=True)
class SyntheticInstance:
    X: DenseMatrix
    W: DenseMatrix
    H: DenseMatrix
    V: DenseMatrix
    anchors: AnchorSet
    snr_db: float
    sigma: float
    seed: int
    trial: int = 0

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.X.rows, self.W.cols, self.X.cols


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Philox stream keyed by (seed, trial); trials never share a stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(trial),))))


def _open_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    # (k + 1/2) / 2^53 is never 0 or 1, so ndtri stays finite
    k = rng.integers(0, 2**53, size=shape, dtype=np.int64)
    return (k.astype(np.float64) + 0.5) * _U53


def generate(M: int, K: int, N: int, snr_db: float, seed: int, trial: int = 0) -> SyntheticInstance:
    """
    X = W H + V with W ~ U(0, 1), H = [I_K, Dirichlet(1_K) columns], Gaussian V scaled
    to the requested SNR, and columns shuffled. snr_db = +inf gives V = 0.
    Draw order (W, H, permutation, noise) is fixed so replays are exact.
    """
    if not (1 <= K <= min(M, N)) or N <= K:
        raise ContractViolation(f"need 1 <= K <= min(M, N) and N > K, got M={M} K={K} N={N}")
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ContractViolation(f"snr_db must be a number or +inf, got {snr_db}")
    rng = trial_rng(seed, trial)

    W = rng.random((M, K))
    E = rng.standard_exponential((K, N - K))
    H0 = np.hstack([np.eye(K), E / E.sum(axis=0, keepdims=True)])
    perm = rng.permutation(N)
    H = H0[:, perm]
    anchors = AnchorSet(tuple(int(p) for p in np.argsort(perm)[:K]))

    signal = W @ H
    if math.isinf(snr_db):
        sigma = 0.0
        V = np.zeros((M, N))
    else:
        power = float(np.einsum("ij,ij->", signal, signal))
        sigma = math.sqrt(power / (M * N * 10.0 ** (snr_db / 10.0)))
        V = sigma * ndtri(_open_uniform(rng, (M, N)))

    return SyntheticInstance(
        X=DenseMatrix(signal + V),
        W=DenseMatrix(W),
        H=DenseMatrix(H),
        V=DenseMatrix(V),
        anchors=anchors,
        snr_db=float(snr_db),
        sigma=sigma,
        seed=int(seed),
        trial=int(trial),
    )


def realized_snr_db(instance: SyntheticInstance) -> float:
    signal = instance.W.data @ instance.H.data
    noise = float(np.einsum("ij,ij->", instance.V.data, instance.V.data))
    if noise == 0:
        return math.inf
    return 10.0 * math.log10(float(np.einsum("ij,ij->", signal, signal)) / noise)


# -------------------------
# Trials
# -------------------------

@dataclass
class TrialOutcome:
    recovered: AnchorSet
    success: bool
    residual: float
    peak_nonzero_rows: int
    wall_time: float
    peak_total_nnz: int = 0
    solver: str = "merit"
    seed: int = 0
    trial: int = 0
    snr_db: float = math.inf
    shape: tuple[int, int, int] = (0, 0, 0)
    lam: float = 0.0
    mu: float = 0.0
    error: str | None = None
    lambda_rule: str = "fixed"
    # grid value: lambda itself for "fixed", its multiplier for "balanced"
    lam_grid: float | None = None

    @property
    def peak_nnz_ratio(self) -> float:
        _, K, N = self.shape
        if self.solver == "spa" or self.error is not None or K * N == 0:
            return math.nan
        return self.peak_total_nnz / (K * N)

    def to_record(self, include_timing: bool = True) -> dict:
        M, K, N = self.shape
        rec = {
            "seed": self.seed,
            "trial": self.trial,
            "snrDb": self.snr_db,
            "M": M,
            "K": K,
            "N": N,
            "solver": self.solver,
            "lambda": self.lam if self.lam_grid is None else self.lam_grid,
            "lambdaRule": self.lambda_rule,
            "lambdaUsed": self.lam,
            "mu": self.mu,
            "success": self.success,
            "residual": self.residual,
            "peakNonzeroRows": self.peak_nonzero_rows,
            "peakTotalNnz": self.peak_total_nnz,
            "peakNnzRatio": self.peak_nnz_ratio,
            "recovered": list(self.recovered.indices),
        }
        if include_timing:
            rec["wallTimeMs"] = round(self.wall_time * 1000.0, 3)
        if self.error is not None:
            rec["error"] = self.error
        return rec


def run_trial(
    instance: SyntheticInstance,
    solver: str,
    cfg: SolveConfig | None = None,
    warm_start: str = "zero",
    ls_cfg: SimplexLsConfig | None = None,
    lambda_rule: str = "fixed",
) -> TrialOutcome:
    """
    One solver on one instance. With lambda_rule="balanced" cfg.lam multiplies
    balanced_lambda() evaluated at the SPA warm start; merit0 always runs at lambda = 0.
    """
    if solver not in SOLVERS:
        raise ContractViolation(f"solver must be one of {SOLVERS}, got {solver!r}")
    if warm_start not in WARM_STARTS:
        raise ContractViolation(f"warm start must be one of {WARM_STARTS}, got {warm_start!r}")
    if lambda_rule not in LAMBDA_RULES:
        raise ContractViolation(f"lambda rule must be one of {LAMBDA_RULES}, got {lambda_rule!r}")
    cfg = cfg or SolveConfig()
    lam_grid = cfg.lam
    if solver == "merit0":
        cfg = replace(cfg, lam=0.0)
        lam_grid = 0.0
    _, K, _ = instance.shape
    started = time.perf_counter()

    peak_rows = peak_nnz = 0
    if solver == "spa":
        recovered = spa_select(instance.X, K)
    else:
        balance = solver == "merit" and lambda_rule == "balanced"
        C_init = None
        if warm_start == "spa" or balance:
            _, C_spa, t_spa = spa_warm_start(instance.X, K, ls_cfg)
        if balance:
            cfg = replace(cfg, lam=lam_grid * balanced_lambda(instance.X, C_spa, cfg.mu))
        if warm_start == "spa":
            C_init = C_spa
            cfg = replace(cfg, t_init=t_spa)
        C, report = solve(instance.X, cfg, C_init=C_init)
        recovered = select_anchors(C, K)
        peak_rows, peak_nnz = report.peak_nonzero_rows, report.peak_total_nnz
    elapsed = time.perf_counter() - started

    H_hat = estimate_h(instance.X, recovered, ls_cfg)
    spa = solver == "spa"
    return TrialOutcome(
        recovered=recovered,
        success=recovered.as_set() == instance.anchors.as_set(),
        residual=anchor_fit_residual(instance.X, recovered, H_hat),
        peak_nonzero_rows=peak_rows,
        peak_total_nnz=peak_nnz,
        wall_time=elapsed,
        solver=solver,
        seed=instance.seed,
        trial=instance.trial,
        snr_db=instance.snr_db,
        shape=instance.shape,
        lam=0.0 if spa else cfg.lam,
        mu=0.0 if spa else cfg.mu,
        lambda_rule=lambda_rule,
        lam_grid=0.0 if spa else lam_grid,
    )


def evaluate(
    M: int,
    K: int,
    N: int,
    snr_db: float,
    seed: int,
    trial: int,
    solver: str,
    cfg: SolveConfig | None = None,
    warm_start: str = "zero",
    lambda_rule: str = "fixed",
) -> TrialOutcome:
    """generate + run_trial; a trial that fails numerically becomes a failed outcome so a sweep can continue."""
    cfg = cfg or SolveConfig()
    try:
        inst = generate(M, K, N, snr_db, seed, trial)
        return run_trial(inst, solver, cfg, warm_start=warm_start, lambda_rule=lambda_rule)
    except TRIAL_ERRORS as exc:
        logger.warning("trial seed=%d trial=%d solver=%s failed: %s", seed, trial, solver, exc)
        return TrialOutcome(
            recovered=AnchorSet(()),
            success=False,
            residual=math.nan,
            peak_nonzero_rows=0,
            wall_time=0.0,
            solver=solver,
            seed=seed,
            trial=trial,
            snr_db=float(snr_db),
            shape=(M, K, N),
            lam=cfg.lam,
            mu=cfg.mu,
            error=f"{type(exc).__name__}: {exc}",
            lambda_rule=lambda_rule,
        )


def success_rate(outcomes) -> float:
    outcomes = list(outcomes)
    if not outcomes:
        raise ContractViolation("success_rate needs at least one outcome")
    return sum(1 for o in outcomes if o.success) / len(outcomes)


# -------------------------
# Spearman rank correlation with row matching
# -------------------------

def _src_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """S[i, j] = Spearman correlation of A row i with B row j (average ranks; constant rows give nan)."""
    ra = rankdata(A, axis=1)
    rb = rankdata(B, axis=1)
    ra -= ra.mean(axis=1, keepdims=True)
    rb -= rb.mean(axis=1, keepdims=True)
    na = np.linalg.norm(ra, axis=1)
    nb = np.linalg.norm(rb, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (ra @ rb.T) / np.outer(na, nb)


def _match_rows(S: np.ndarray) -> list[tuple[int, int]]:
    K = S.shape[0]
    if K <= EXACT_MATCH_MAX_K:
        best = max(itertools.permutations(range(K)), key=lambda p: sum(S[i, p[i]] for i in range(K)))
        return [(i, best[i]) for i in range(K)]
    pairs = []
    work = S.copy()
    for _ in range(K):
        i, j = np.unravel_index(int(np.argmax(work)), work.shape)
        pairs.append((int(i), int(j)))
        work[i, :] = -np.inf
        work[:, j] = -np.inf
    return sorted(pairs)


def spearman_src(H_hat: DenseMatrix, H_ref: DenseMatrix) -> float:
    """
    Mean Spearman correlation over rows after matching H_hat rows to H_ref rows.
    Exhaustive matching up to K = 6, greedy largest-first beyond. A constant row scores 0
    unless it is compared with an identical row.
    """
    if H_hat.shape != H_ref.shape:
        raise ContractViolation(f"shapes differ: {H_hat.shape} vs {H_ref.shape}")
    S = _src_matrix(H_hat.data, H_ref.data)
    # identical rows agree perfectly even when constant
    same = (H_hat.data[:, None, :] == H_ref.data[None, :, :]).all(axis=2)
    S[np.isnan(S) & same] = 1.0
    if np.isnan(S).any():
        msg = "constant membership row; its rank correlation is taken as 0"
        logger.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        S = np.nan_to_num(S, nan=0.0)
    S = np.clip(S, -1.0, 1.0)
    pairs = _match_rows(S)
    return float(np.mean([S[i, j] for i, j in pairs]))


# -------------------------
# Memory accounting
# -------------------------

def memory_report(report: SolveReport | TrialOutcome, K: int, N: int, bound: float = DEFAULT_MEMORY_BOUND) -> dict:
    """Entry-count view of the peak storage of C against the K x N budget."""
    if K < 1 or N < 1:
        raise ContractViolation(f"K and N must be positive, got K={K} N={N}")
    nnz_ratio = report.peak_total_nnz / (K * N)
    row_ratio = report.peak_nonzero_rows / K
    return {
        "peakTotalNnz": int(report.peak_total_nnz),
        "peakNonzeroRows": int(report.peak_nonzero_rows),
        "nnzRatio": nnz_ratio,
        "rowRatio": row_ratio,
        "peakBytes": int(report.peak_total_nnz * ENTRY_BYTES + N * AGGREGATE_BYTES_PER_ROW),
        "bound": bound,
        "linear": bool(nnz_ratio <= bound and row_ratio <= bound),
    }
