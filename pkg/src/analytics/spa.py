from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from src.analytics.errors import ContractViolation
from src.analytics.estimator import SimplexLsConfig, simplex_ls_batch
from src.analytics.fw_solver import warm_start_t_init
from src.analytics.matstore import PURGE_THRESHOLD, CoefficientMatrix, DenseMatrix, SparseSimplexColumn

logger = logging.getLogger(__name__)

# residual norms below this fraction of the largest input norm count as zero
RANK_TOL = 1e-12


@dataclass(frozen=True)
class AnchorSet:
    indices: tuple[int, ...]
    degenerate: bool = False

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ContractViolation(f"anchor indices must be distinct: {idx}")
        if any(i < 0 for i in idx):
            raise ContractViolation("anchor indices must be non-negative")
        object.__setattr__(self, "indices", idx)

    @property
    def k(self) -> int:
        return len(self.indices)

    def as_set(self) -> frozenset[int]:
        return frozenset(self.indices)

    def to_dict(self) -> dict:
        return {"indices": list(self.indices), "k": self.k, "degenerate": self.degenerate}


def spa_select(X: DenseMatrix, k: int) -> AnchorSet:
    """
    Successive projection: pick the largest-norm residual column, project every
    column onto the orthogonal complement of it, repeat k times.
    Picks are returned in selection order.
    """
    return successive_projection(X, k)[0]


def successive_projection(X: DenseMatrix, k: int) -> tuple[AnchorSet, np.ndarray]:
    """spa_select plus the final residual matrix, orthogonal to every picked column."""
    m, n = X.shape
    if k < 1 or k > min(m, n):
        raise ContractViolation(f"k must be in [1, min(M, N)] = [1, {min(m, n)}], got {k}")
    R = np.array(X.data, dtype=np.float64, order="F", copy=True)
    norms = np.einsum("ij,ij->j", R, R)
    scale = float(norms.max())
    if scale <= 0:
        raise ContractViolation("SPA needs a nonzero data matrix")

    picks: list[int] = []
    for step in range(k):
        j = int(np.argmax(norms))
        if norms[j] <= RANK_TOL * scale:
            msg = f"residual vanished after {step} of {k} picks; data rank is below k"
            logger.warning(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            return AnchorSet(tuple(picks), degenerate=True), R
        picks.append(j)
        u = R[:, j] / np.sqrt(norms[j])
        # two passes keep later residuals orthogonal to earlier picks
        for _ in range(2):
            R -= np.outer(u, u @ R)
        norms = np.einsum("ij,ij->j", R, R)
        norms[picks] = 0.0
        logger.debug("SPA pick %d -> column %d", step, j)
    return AnchorSet(tuple(picks)), R


def build_warm_start(X: DenseMatrix, anchors: AnchorSet, cfg: SimplexLsConfig | None = None) -> CoefficientMatrix:
    """C_init(anchors, :) = simplex least-squares coefficients, zero elsewhere."""
    if anchors.k == 0:
        raise ContractViolation("warm start needs at least one anchor")
    order = np.argsort(anchors.indices, kind="stable")
    idx = np.asarray(anchors.indices, dtype=np.int64)[order]
    if idx[-1] >= X.cols:
        raise ContractViolation("anchor index out of range")
    theta = simplex_ls_batch(X.data[:, idx], X.data, cfg)
    n = X.cols
    columns = []
    for ell in range(n):
        v = theta[:, ell]
        keep = v >= PURGE_THRESHOLD
        vals = v[keep]
        columns.append(SparseSimplexColumn(n, idx[keep], vals / vals.sum()))
    return CoefficientMatrix(n, columns)


def spa_warm_start(X: DenseMatrix, k: int, cfg: SimplexLsConfig | None = None) -> tuple[AnchorSet, CoefficientMatrix, int]:
    """SPA anchors, the C_init built on them, and t_init = round(1 / RMSE) for that C_init."""
    anchors = spa_select(X, k)
    C_init = build_warm_start(X, anchors, cfg)
    t_init = warm_start_t_init(X, C_init)
    logger.info("SPA warm start: %d anchors, t_init=%d", anchors.k, t_init)
    return anchors, C_init, t_init
