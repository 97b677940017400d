from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from src.analytics.errors import ConfigError, ContractViolation
from src.analytics.estimator import SimplexLsConfig, estimate_h
from src.analytics.fw_solver import SolveConfig, solve
from src.analytics.matstore import DenseMatrix
from src.analytics.selection import select_anchors
from src.analytics.spa import spa_warm_start
from src.analytics.synthbench import spearman_src
from src.processing.embed import DEFAULT_ENERGY_FRACTION, EigenConfig, EigenResult, SymmetricMatrix, energy_filter, top_eigenpairs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CommunityConfig:
    k: int
    energy_fraction: float = DEFAULT_ENERGY_FRACTION
    warm_start: str = "zero"
    solve: SolveConfig = field(default_factory=SolveConfig)
    eigen: EigenConfig = field(default_factory=EigenConfig)
    ls: SimplexLsConfig = field(default_factory=SimplexLsConfig)

    def __post_init__(self):
        if int(self.k) < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not (0 < self.energy_fraction <= 1):
            raise ConfigError(f"energy fraction must be in (0, 1], got {self.energy_fraction}")
        if self.warm_start not in ("zero", "spa"):
            raise ConfigError(f"warm start must be 'zero' or 'spa', got {self.warm_start!r}")


def embed_nodes(
    A: SymmetricMatrix,
    k: int,
    fraction: float = DEFAULT_ENERGY_FRACTION,
    cfg: EigenConfig | None = None,
) -> tuple[DenseMatrix, np.ndarray, EigenResult]:
    """Energy-filtered nodes and X whose rows are the top-k eigenvectors of A restricted to them."""
    kept = energy_filter(A, fraction)
    if kept.size < k:
        raise ContractViolation(f"only {kept.size} nodes survive the energy filter, need at least k={k}")
    eig = top_eigenpairs(A.submatrix(kept), k, cfg)
    return DenseMatrix(eig.vectors.data.T), kept, eig


def assemble(A: SymmetricMatrix, H_ref: DenseMatrix, cfg: CommunityConfig) -> dict:
    """
    Adjacency to membership estimate: filter, embed, solve, pick pure nodes,
    estimate memberships, and score them against H_ref on the kept nodes.
    """
    if H_ref.shape != (cfg.k, A.n):
        raise ContractViolation(f"ground truth is {H_ref.shape}, expected {(cfg.k, A.n)}")

    X, kept, eig = embed_nodes(A, cfg.k, cfg.energy_fraction, cfg.eigen)
    logger.info("community embedding: kept %d of %d nodes", kept.size, A.n)

    solve_cfg, C_init = cfg.solve, None
    if cfg.warm_start == "spa":
        _, C_init, t_init = spa_warm_start(X, cfg.k, cfg.ls)
        solve_cfg = SolveConfig(**{**solve_cfg.to_dict(), "t_init": t_init})
    C, report = solve(X, solve_cfg, C_init=C_init)
    anchors = select_anchors(C, cfg.k)
    H_hat = estimate_h(X, anchors, cfg.ls)

    src = spearman_src(H_hat, DenseMatrix(H_ref.data[:, kept]))
    return {
        "src": src,
        "k": cfg.k,
        "nodesKept": int(kept.size),
        "pureNodes": [int(kept[i]) for i in anchors.indices],
        "eigen": eig.to_dict(),
        "sweepsRun": report.sweeps_run,
        "peakNonzeroRows": report.peak_nonzero_rows,
    }
