from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.analytics.errors import ConfigError, ContractViolation
from src.analytics.matstore import PURGE_THRESHOLD, DenseMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimplexLsConfig:
    max_iters: int = 1000
    tol: float = 1e-10

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.tol >= 0):
            raise ConfigError(f"tol must be >= 0, got {self.tol}")


def simplex_ls_batch(D: np.ndarray, T: np.ndarray, cfg: SimplexLsConfig | None = None) -> np.ndarray:
    """
    Column-wise argmin over the k-simplex of 1/2 ||D theta - t||^2 for every column t of T.

    Small-k Frank-Wolfe: each column starts at its best single vertex, then takes
    FW or away steps with exact line search. Ties go to the lowest index.
    Returns a k x n array of feasible columns.
    """
    cfg = cfg or SimplexLsConfig()
    D = np.asarray(D, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if D.ndim != 2 or D.shape[1] < 1:
        raise ContractViolation("dictionary must be M x k with k >= 1")
    if T.ndim == 1:
        T = T[:, None]
    if T.shape[0] != D.shape[0]:
        raise ContractViolation(f"targets have {T.shape[0]} rows, dictionary has {D.shape[0]}")

    k, n = D.shape[1], T.shape[1]
    cols = np.arange(n)
    Q = D.T @ D
    B = D.T @ T
    tt = np.einsum("ij,ij->j", T, T)

    # best vertex: 1/2 ||d_i||^2 - d_i^T t minimised over i
    start = np.argmin(0.5 * np.diag(Q)[:, None] - B, axis=0)
    theta = np.zeros((k, n))
    theta[start, cols] = 1.0
    if k == 1:
        return theta

    def _objective(th):
        return 0.5 * np.einsum("ij,ij->j", th, Q @ th) - np.einsum("ij,ij->j", th, B) + 0.5 * tt

    f_prev = float(_objective(theta).sum())
    for it in range(int(cfg.max_iters)):
        G = Q @ theta - B
        s = np.argmin(G, axis=0)
        g_theta = np.einsum("ij,ij->j", G, theta)
        fw_gap = g_theta - G[s, cols]

        masked = np.where(theta > 0, G, -np.inf)
        a = np.argmax(masked, axis=0)
        away_gap = G[a, cols] - g_theta
        theta_a = theta[a, cols]

        if fw_gap.max() <= 0.0:
            break

        use_fw = (fw_gap >= away_gap) | (theta_a >= 1.0)
        d = -theta.copy()
        d[s, cols] += 1.0
        d_away = theta.copy()
        d_away[a, cols] -= 1.0
        d = np.where(use_fw[None, :], d, d_away)
        gamma_max = np.where(use_fw, 1.0, theta_a / np.maximum(1.0 - theta_a, 1e-300))

        slope = np.einsum("ij,ij->j", G, d)
        curv = np.einsum("ij,ij->j", d, Q @ d)
        with np.errstate(divide="ignore", invalid="ignore"):
            gamma = np.where(curv > 0, -slope / curv, np.where(slope < 0, gamma_max, 0.0))
        gamma = np.clip(np.nan_to_num(gamma, nan=0.0), 0.0, gamma_max)
        gamma = np.where(slope < 0, gamma, 0.0)

        theta = theta + gamma[None, :] * d
        drop = ~use_fw & (gamma >= gamma_max)
        if drop.any():
            theta[a[drop], cols[drop]] = 0.0
        theta[theta < PURGE_THRESHOLD] = 0.0
        theta /= theta.sum(axis=0, keepdims=True)

        f = float(_objective(theta).sum())
        if f_prev - f <= cfg.tol * max(abs(f_prev), 1e-300):
            break
        f_prev = f
    else:
        logger.debug("simplex least squares hit max_iters=%d", cfg.max_iters)
    return theta


def simplex_ls(D: DenseMatrix | np.ndarray, target, cfg: SimplexLsConfig | None = None) -> np.ndarray:
    Dm = D.data if isinstance(D, DenseMatrix) else D
    return simplex_ls_batch(Dm, np.asarray(target, dtype=np.float64).reshape(-1, 1), cfg)[:, 0]


def estimate_h(X: DenseMatrix, anchors, cfg: SimplexLsConfig | None = None) -> DenseMatrix:
    """H_hat with column l = simplex_ls(X(:, anchors), x_l)."""
    idx = list(getattr(anchors, "indices", anchors))
    if not idx:
        raise ContractViolation("estimate_h needs at least one anchor")
    if max(idx) >= X.cols or min(idx) < 0:
        raise ContractViolation("anchor index out of range")
    H = simplex_ls_batch(X.data[:, idx], X.data, cfg)
    return DenseMatrix(H)


def anchor_fit_residual(X: DenseMatrix, anchors, H: DenseMatrix) -> float:
    """||X - X(:, anchors) H||_F / ||X||_F."""
    idx = list(getattr(anchors, "indices", anchors))
    denom = X.frobenius()
    r = float(np.linalg.norm(X.data - X.data[:, idx] @ H.data))
    return r / denom if denom > 0 else r
