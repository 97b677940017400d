from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from src.analytics.errors import ConfigError, ContractViolation
from src.analytics.matstore import DenseMatrix

logger = logging.getLogger(__name__)

DEFAULT_ENERGY_FRACTION = 0.99


@dataclass(frozen=True)
class EigenConfig:
    tol: float = 1e-8
    max_iters: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (self.tol > 0):
            raise ConfigError(f"eigen tol must be > 0, got {self.tol}")
        if int(self.max_iters) < 1:
            raise ConfigError(f"eigen max_iters must be >= 1, got {self.max_iters}")


class SymmetricMatrix:
    """Dense symmetric matrix; only the upper triangle of the input is read."""

    __slots__ = ("n", "data")

    def __init__(self, upper: np.ndarray):
        a = np.asarray(upper, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractViolation(f"symmetric matrix must be square, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ContractViolation("symmetric matrix has non-finite entries")
        full = np.triu(a) + np.triu(a, 1).T
        full.flags.writeable = False
        self.n = a.shape[0]
        self.data = full

    @classmethod
    def from_upper(cls, upper) -> "SymmetricMatrix":
        return cls(upper)

    def submatrix(self, idx) -> "SymmetricMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return SymmetricMatrix(self.data[np.ix_(idx, idx)])

    def column_sq_norms(self) -> np.ndarray:
        return np.einsum("ij,ij->j", self.data, self.data)

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray
    vectors: DenseMatrix
    converged: bool
    iterations: int
    residual: float

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
        }


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # largest-magnitude component of each vector is made positive
    pick = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pick, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def top_eigenpairs(A: SymmetricMatrix, k: int, cfg: EigenConfig | None = None) -> EigenResult:
    """
    Leading k eigenpairs by algebraic value via orthogonal iteration on A + sI,
    s = max absolute row sum, with a Rayleigh-Ritz step each iteration.
    Stops when ||A V - V diag(w)||_F <= tol ||A||_F; otherwise returns the last
    iterate with converged=False.
    """
    cfg = cfg or EigenConfig()
    n = A.n
    if not (1 <= k <= n):
        raise ContractViolation(f"k must be in [1, {n}], got {k}")
    M = A.data
    shift = float(np.abs(M).sum(axis=1).max())
    norm_a = A.frobenius()

    rng = np.random.default_rng(cfg.seed)
    U, _ = np.linalg.qr(rng.standard_normal((n, k)))

    converged = False
    res = np.inf
    it = 0
    for it in range(1, int(cfg.max_iters) + 1):
        AU = M @ U
        T = U.T @ AU
        w, Q = np.linalg.eigh(0.5 * (T + T.T))
        order = np.argsort(-w, kind="stable")
        w, Q = w[order], Q[:, order]
        V = U @ Q
        AV = AU @ Q
        res = float(np.linalg.norm(AV - V * w))
        if res <= cfg.tol * norm_a:
            converged = True
            break
        U, _ = np.linalg.qr(AV + shift * V)

    if not converged:
        msg = f"orthogonal iteration stopped after {it} iterations with residual {res:.3e}"
        logger.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    logger.debug("top_eigenpairs k=%d n=%d iters=%d residual=%.3e", k, n, it, res)
    return EigenResult(
        values=w,
        vectors=DenseMatrix(_fix_signs(V)),
        converged=converged,
        iterations=it,
        residual=res,
    )


def energy_filter(A: SymmetricMatrix, fraction: float = DEFAULT_ENERGY_FRACTION) -> np.ndarray:
    """Smallest set of nodes (largest column norms first) holding `fraction` of the squared norm, ascending."""
    if not (0 < fraction <= 1):
        raise ContractViolation(f"fraction must be in (0, 1], got {fraction}")
    sq = A.column_sq_norms()
    order = np.argsort(-sq, kind="stable")
    cum = np.cumsum(sq[order])
    total = cum[-1]
    if fraction >= 1 or total <= 0:
        return np.arange(A.n)
    cut = int(np.searchsorted(cum, fraction * total * (1.0 - 1e-12), side="left")) + 1
    return np.sort(order[:cut])


def reduce_rows(X: SymmetricMatrix, target_rows: int, cfg: EigenConfig | None = None) -> DenseMatrix:
    """U^T X with U the leading target_rows eigenvectors of X."""
    eig = top_eigenpairs(X, target_rows, cfg)
    return DenseMatrix(eig.vectors.data.T @ X.data)
