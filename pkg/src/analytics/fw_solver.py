from __future__ import annotations

import logging
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from src.analytics.errors import ConfigError, ContractViolation, InfeasibleInputError, NonFiniteGradientError
from src.analytics.matstore import CoefficientMatrix, DenseMatrix, apply_fw_steps
from src.analytics.regularizer import (
    DEFAULT_LAMBDA,
    DEFAULT_MU,
    RowSoftmaxState,
    SmoothingParams,
    phi_mu_identity,
    phi_mu_total,
    softmax_gradient_block,
    softmax_state,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_SWEEPS = 500
DEFAULT_BLOCK_SIZE = 256
MAX_T_INIT = 1_000_000


@dataclass(frozen=True)
class SolveConfig:
    lam: float = DEFAULT_LAMBDA
    mu: float = DEFAULT_MU
    max_sweeps: int = DEFAULT_MAX_SWEEPS
    t_init: int = 0
    per_column_tol: float = 0.0
    seed: int = 0
    track_support: bool = False
    block_size: int = DEFAULT_BLOCK_SIZE
    threads: int = 0

    def __post_init__(self):
        SmoothingParams(mu=self.mu, lam=self.lam)
        if int(self.max_sweeps) < 1:
            raise ConfigError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if int(self.t_init) < 0:
            raise ConfigError(f"t_init must be >= 0, got {self.t_init}")
        if not (self.per_column_tol >= 0):
            raise ConfigError(f"per_column_tol must be >= 0, got {self.per_column_tol}")
        if int(self.block_size) < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if int(self.threads) < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}")

    @property
    def smoothing(self) -> SmoothingParams:
        return SmoothingParams(mu=self.mu, lam=self.lam)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SweepStats:
    t: int
    alpha: float
    steps: int = 0
    stationary: int = 0
    newly_frozen: int = 0


@dataclass
class SolveReport:
    sweeps_run: int
    t_start: int
    final_residual_per_column: np.ndarray
    peak_nonzero_rows: int
    peak_total_nnz: int
    objective_trace: list[float]
    frozen_columns: int
    support_union_size: int
    stationary_steps: int = 0
    all_frozen: bool = False
    nonzero_rows_trace: list[int] = field(default_factory=list)
    selected_vertices: frozenset[int] | None = None
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "sweepsRun": self.sweeps_run,
            "tStart": self.t_start,
            "finalResidualPerColumn": [float(x) for x in self.final_residual_per_column],
            "peakNonzeroRows": self.peak_nonzero_rows,
            "peakTotalNnz": self.peak_total_nnz,
            "objectiveTrace": [float(x) for x in self.objective_trace],
            "frozenColumns": self.frozen_columns,
            "supportUnionSize": self.support_union_size,
            "stationarySteps": self.stationary_steps,
            "allFrozen": self.all_frozen,
        }
        if self.nonzero_rows_trace:
            out["nonzeroRowsTrace"] = list(self.nonzero_rows_trace)
        if self.selected_vertices is not None:
            out["selectedVertices"] = sorted(self.selected_vertices)
        if include_timing:
            out["wallTimeMs"] = round(self.wall_time * 1000.0, 3)
        return out


# -------------------------
# Building blocks
# -------------------------

def fw_select_vertex(g: np.ndarray) -> int:
    """Lowest index attaining min g: the simplex vertex minimising the linearisation."""
    return int(np.argmin(g))


def _blocks(n: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _block_residual(X: DenseMatrix, S: sp.csc_matrix, start: int, stop: int) -> np.ndarray:
    """X c_l - x_l for l in [start, stop), as an M x B array; S holds those columns of C."""
    XC = np.asarray(S.T @ X.data.T).T
    return XC - X.data[:, start:stop]


def _block_gradient(
    X: DenseMatrix,
    C: CoefficientMatrix,
    state: RowSoftmaxState | None,
    lam: float,
    start: int,
    stop: int,
) -> tuple[np.ndarray, np.ndarray, sp.csc_matrix]:
    S = C.block_csc(start, stop)
    R = _block_residual(X, S, start, stop)
    G = X.data.T @ R
    if state is not None:
        G += lam * softmax_gradient_block(C, state, start, stop)
    return G, np.linalg.norm(R, axis=0), S


def residual_norms(X: DenseMatrix, C: CoefficientMatrix, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """||x_l - X c_l||_2 for every column, block by block."""
    if C.dim != X.cols:
        raise ContractViolation(f"C is {C.dim} x {C.dim} but X has {X.cols} columns")
    out = np.empty(X.cols)
    for start, stop in _blocks(X.cols, block_size):
        out[start:stop] = np.linalg.norm(_block_residual(X, C.block_csc(start, stop), start, stop), axis=0)
    return out


def objective(X: DenseMatrix, C: CoefficientMatrix, lam: float, mu: float, residuals: np.ndarray | None = None) -> float:
    """1/2 ||X - XC||_F^2 + lam * Phi_mu(C)."""
    r = residual_norms(X, C) if residuals is None else residuals
    val = 0.5 * float(np.dot(r, r))
    if lam > 0:
        val += lam * phi_mu_total(C, mu)
    return val


def warm_start_t_init(X: DenseMatrix, C: CoefficientMatrix) -> int:
    """round(1 / RMSE) with RMSE = sqrt(||X - XC||_F^2 / N), clamped to [1, MAX_T_INIT]."""
    r = residual_norms(X, C)
    rmse = float(np.sqrt(np.dot(r, r) / X.cols))
    if rmse * MAX_T_INIT <= 1.0:
        return MAX_T_INIT
    return int(min(MAX_T_INIT, max(1, np.floor(1.0 / rmse + 0.5))))


def balanced_lambda(X: DenseMatrix, C_ref: CoefficientMatrix, mu: float) -> float:
    """
    lambda at which lambda * (Phi_mu(I) - Phi_mu(C_ref)) = ||X - X C_ref||_F^2.

    At that weight the self-representation C = I scores worse than C_ref by half
    of C_ref's data residual. An exact fit gives 0.
    """
    r = residual_norms(X, C_ref)
    fit = float(np.dot(r, r))
    phi_identity = phi_mu_identity(X.cols, mu)
    gap = phi_identity - phi_mu_total(C_ref, mu)
    if fit <= 0.0:
        return 0.0
    if gap <= 1e-12 * phi_identity:
        raise ContractViolation(f"reference C is no sparser than I (Phi gap {gap:.3e}); cannot balance lambda")
    lam = fit / gap
    logger.info("balanced lambda=%.6e (residual %.6e, regularizer gap %.6e)", lam, fit, gap)
    return lam


# -------------------------
# Sweep
# -------------------------

def fw_sweep(
    X: DenseMatrix,
    C: CoefficientMatrix,
    t: int,
    cfg: SolveConfig,
    frozen: np.ndarray | None = None,
    selected: set[int] | None = None,
    executor: Executor | None = None,
) -> SweepStats:
    """
    One pass over all columns at step size 2 / (t + 2).

    The softmax snapshot is taken once at sweep entry and is not refreshed while
    columns are updated. Every column's gradient depends only on that snapshot and
    on the column itself, so blocks can be evaluated concurrently without changing
    the result.
    """
    if C.dim != X.cols:
        raise ContractViolation(f"C is {C.dim} x {C.dim} but X has {X.cols} columns")
    if t < 0:
        raise ContractViolation(f"iteration counter must be >= 0, got {t}")

    n = C.dim
    alpha = 2.0 / (t + 2.0)
    sm = cfg.smoothing
    state = softmax_state(C, sm.mu) if sm.active else None
    frozen = np.zeros(n, dtype=bool) if frozen is None else frozen
    stats = SweepStats(t=t, alpha=alpha)

    blocks = _blocks(n, cfg.block_size)
    wave = max(1, cfg.threads) if executor is not None else 1

    for w in range(0, len(blocks), wave):
        batch = blocks[w : w + wave]
        if executor is not None and len(batch) > 1:
            results = list(executor.map(lambda b: _block_gradient(X, C, state, sm.lam, *b), batch))
        else:
            results = [_block_gradient(X, C, state, sm.lam, *b) for b in batch]

        for (start, stop), (G, res, S) in zip(batch, results):
            ells = np.arange(start, stop)
            live = ~frozen[start:stop]
            if cfg.per_column_tol > 0:
                done = live & (res <= cfg.per_column_tol)
                frozen[ells[done]] = True
                stats.newly_frozen += int(done.sum())
                live &= ~done
            if not live.any():
                continue
            finite = np.isfinite(G).all(axis=0)
            if not finite[live].all():
                raise NonFiniteGradientError(int(ells[live & ~finite][0]), t)

            j = np.argmin(G, axis=0)
            if t >= 1:
                # zero duality gap: already optimal for this linearisation.
                # At t = 0 the full step onto the vertex is always taken.
                counts = np.diff(S.indptr)
                owner = np.repeat(np.arange(stop - start), counts)
                held = np.bincount(owner, weights=S.data * G[S.indices, owner], minlength=stop - start)
                still = live & (counts > 0) & (held - G[j, np.arange(stop - start)] <= 0.0)
                stats.stationary += int(still.sum())
                live &= ~still

            apply_fw_steps(C, ells[live], j[live], alpha)
            stats.steps += int(live.sum())
            if selected is not None:
                selected.update(j[live].tolist())
    return stats


# -------------------------
# Driver
# -------------------------

def solve(
    X: DenseMatrix,
    cfg: SolveConfig | None = None,
    C_init: CoefficientMatrix | None = None,
) -> tuple[CoefficientMatrix, SolveReport]:
    cfg = cfg or SolveConfig()
    n = X.cols
    started = time.perf_counter()

    if C_init is None:
        if cfg.t_init:
            logger.info("cold start ignores t_init=%d and starts at t=0", cfg.t_init)
        C = CoefficientMatrix.zeros(n)
        t0 = 0
    else:
        if C_init.dim != n:
            raise ContractViolation(f"warm start is {C_init.dim} x {C_init.dim} but X has {n} columns")
        bad = C_init.infeasible_columns()
        if bad:
            ell, msg = bad[0]
            raise InfeasibleInputError(f"warm start column {ell} is not a simplex point: {msg} ({len(bad)} bad columns)")
        if cfg.t_init < 1:
            raise ConfigError("a warm start needs t_init >= 1")
        C = C_init.copy()
        t0 = int(cfg.t_init)

    frozen = np.zeros(n, dtype=bool)
    selected: set[int] | None = set() if cfg.track_support else None
    trace: list[float] = []
    rows_trace: list[int] = []
    stationary = 0
    residuals = None
    sweeps = 0

    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 0 else None
    try:
        for s in range(int(cfg.max_sweeps)):
            t = t0 + s
            stats = fw_sweep(X, C, t, cfg, frozen=frozen, selected=selected, executor=executor)
            sweeps += 1
            stationary += stats.stationary
            residuals = residual_norms(X, C, cfg.block_size)
            obj = objective(X, C, cfg.lam, cfg.mu, residuals=residuals)
            if not np.isfinite(obj):
                raise NonFiniteGradientError(-1, t)
            trace.append(obj)
            if cfg.track_support:
                rows_trace.append(C.nonzero_rows)
            logger.debug(
                "sweep t=%d alpha=%.3g obj=%.6e steps=%d nnz=%d rows=%d",
                t, stats.alpha, obj, stats.steps, C.total_nnz, C.nonzero_rows,
            )
            if frozen.all():
                logger.info("all %d columns frozen after %d sweeps", n, sweeps)
                break
    finally:
        if executor is not None:
            executor.shutdown()

    report = SolveReport(
        sweeps_run=sweeps,
        t_start=t0,
        final_residual_per_column=residuals if residuals is not None else residual_norms(X, C),
        peak_nonzero_rows=C.peak_nonzero_rows,
        peak_total_nnz=C.peak_total_nnz,
        objective_trace=trace,
        frozen_columns=int(frozen.sum()),
        support_union_size=C.nonzero_rows,
        stationary_steps=stationary,
        all_frozen=bool(frozen.all()),
        nonzero_rows_trace=rows_trace,
        selected_vertices=frozenset(selected) if selected is not None else None,
        wall_time=time.perf_counter() - started,
    )
    logger.info(
        "solve finished: sweeps=%d obj=%.6e peak_nnz=%d peak_rows=%d",
        sweeps, trace[-1] if trace else float("nan"), report.peak_total_nnz, report.peak_nonzero_rows,
    )
    return C, report
