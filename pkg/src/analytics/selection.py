from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from src.analytics.errors import ContractViolation
from src.analytics.estimator import SimplexLsConfig, simplex_ls_batch
from src.analytics.matstore import CoefficientMatrix, DenseMatrix, row_inf_norms
from src.analytics.spa import AnchorSet

logger = logging.getLogger(__name__)

# distance to the nearest natural number below which D counts as natural
INTEGRALITY_TOL = 1e-9
UNIT_COLUMN_TOL = 1e-12


def _finite_or_none(x):
    if isinstance(x, (float, np.floating)) and not math.isfinite(float(x)):
        return None
    if isinstance(x, np.generic):
        return x.item()
    return x


@dataclass(frozen=True)
class TheoryDiagnostics:
    gamma: float
    delta_bound: float
    d_h: float
    alpha_w: float
    beta: float
    d_prime_h: float
    rho: float
    non_anchor_bound: float

    def to_dict(self) -> dict:
        keys = {
            "gamma": "gamma",
            "delta_bound": "deltaBound",
            "d_h": "dH",
            "alpha_w": "alphaW",
            "beta": "beta",
            "d_prime_h": "dPrimeH",
            "rho": "rho",
            "non_anchor_bound": "nonAnchorBound",
        }
        return {keys[k]: _finite_or_none(v) for k, v in asdict(self).items()}


# -------------------------
# Anchor extraction
# -------------------------

def select_anchors(C: CoefficientMatrix, k: int) -> AnchorSet:
    """Rows with the k largest l-inf norms, ties by lowest index, returned ascending."""
    if k < 1 or k > C.dim:
        raise ContractViolation(f"k must be in [1, {C.dim}], got {k}")
    norms = row_inf_norms(C)
    order = np.argsort(-norms, kind="stable")[:k]
    degenerate = C.nonzero_rows < k
    if degenerate:
        msg = f"only {C.nonzero_rows} nonzero rows for k={k}; zero rows fill the anchor set"
        logger.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return AnchorSet(tuple(sorted(int(i) for i in order)), degenerate=degenerate)


def anchor_row_lower_bound(alpha: float, k: int) -> float:
    """Anchor rows keep l-inf norm at least 1 - alpha sqrt(k) / 2 when every column fits within alpha."""
    if alpha < 0:
        raise ContractViolation(f"alpha must be >= 0, got {alpha}")
    return 1.0 - alpha * math.sqrt(k) / 2.0


# -------------------------
# Conditioning of W and H
# -------------------------

def alpha_margin(W: DenseMatrix, cfg: SimplexLsConfig | None = None) -> float:
    """
    min_k distance from w_k to conv of the other columns.
    K = 1 has no "other columns" and is defined as ||w_1||.
    """
    K = W.cols
    if K == 1:
        return float(np.linalg.norm(W.data[:, 0]))
    best = math.inf
    for k in range(K):
        rest = np.delete(W.data, k, axis=1)
        theta = simplex_ls_batch(rest, W.data[:, k], cfg)[:, 0]
        best = min(best, float(np.linalg.norm(W.data[:, k] - rest @ theta)))
    return best


def _unit_column_anchors(H: DenseMatrix) -> list[int]:
    """First column equal to e_k for each k, in order of k."""
    out = []
    for k in range(H.rows):
        target = np.zeros(H.rows)
        target[k] = 1.0
        hits = np.flatnonzero(np.abs(H.data - target[:, None]).max(axis=0) <= UNIT_COLUMN_TOL)
        if hits.size:
            out.append(int(hits[0]))
    return out


def _anchor_indices(H: DenseMatrix, anchors) -> list[int]:
    if anchors is None:
        idx = _unit_column_anchors(H)
        if len(idx) != H.rows:
            raise ContractViolation("H has no unit column for every row; pass anchors explicitly")
        return idx
    return list(getattr(anchors, "indices", anchors))


def d_of_h(H: DenseMatrix, anchors=None) -> float:
    """Largest entry of H over non-anchor columns (0 when every column is an anchor)."""
    idx = _anchor_indices(H, anchors)
    mask = np.ones(H.cols, dtype=bool)
    mask[idx] = False
    if not mask.any():
        return 0.0
    return float(H.data[:, mask].max())


def d_prime(d_h: float, k: int) -> float:
    return math.sqrt(max(2.0 * (d_h - 0.5) ** 2 + 0.5, 2.0 * (0.5 - 1.0 / k) ** 2 + 0.5))


def compute_diagnostics(
    W: DenseMatrix,
    H: DenseMatrix,
    V: DenseMatrix,
    lam: float,
    mu: float,
    anchors=None,
    cfg: SimplexLsConfig | None = None,
) -> TheoryDiagnostics:
    if W.cols != H.rows:
        raise ContractViolation(f"W has {W.cols} columns but H has {H.rows} rows")
    if V.shape != (W.rows, H.cols):
        raise ContractViolation(f"V is {V.shape}, expected {(W.rows, H.cols)}")
    K, N = H.shape

    gamma = float(np.linalg.norm(W.data, axis=0).max())
    v_sq = np.einsum("ij,ij->j", V.data, V.data)
    delta = float(np.sqrt(v_sq.max()))
    v_fro_sq = float(v_sq.sum())
    # tightest rho with ||v_i||^2 <= rho / N ||V||_F^2
    rho = N * float(v_sq.max()) / v_fro_sq if v_fro_sq > 0 else 0.0

    d_h = d_of_h(H, anchors)
    a_w = alpha_margin(W, cfg)
    denom = a_w * (1.0 - d_h)
    numer = math.sqrt(4.0 * rho * (1.0 - K / N) * v_fro_sq + 2.0 * lam * K) + 2.0 * delta
    beta = numer / denom if denom > 0 else math.inf
    bound = 2.0 * rho * (N - K) / N * v_fro_sq + mu * N * math.log(N) + (beta + lam - 1.0) * K

    return TheoryDiagnostics(
        gamma=gamma,
        delta_bound=delta,
        d_h=d_h,
        alpha_w=a_w,
        beta=beta,
        d_prime_h=d_prime(d_h, K),
        rho=rho,
        non_anchor_bound=bound,
    )


# -------------------------
# Row regularity of a coefficient matrix
# -------------------------

def _row_values(C: CoefficientMatrix, rows: Iterable[int]) -> dict[int, np.ndarray]:
    """Distinct values of each requested row, with 0 included once if the row has an implicit zero."""
    r, v, _ = C._flatten()
    nnz = C.row_nnz
    out = {}
    for n in rows:
        vals = v[r == n]
        if nnz[n] < C.dim:
            vals = np.append(vals, 0.0)
        out[int(n)] = np.unique(vals)
    return out


def check_init_regularity(Cinit: CoefficientMatrix, t_init: int, anchors) -> tuple[bool, float]:
    """
    Regular when some anchor row holds two entries whose scaled gap
    t_init (t_init + 1) / 2 |c_ni - c_nj| is not a natural number.
    xi is the smallest distance of such a gap to the naturals (nan when not regular).
    """
    if t_init < 1:
        raise ContractViolation(f"t_init must be >= 1, got {t_init}")
    idx = list(getattr(anchors, "indices", anchors))
    scale = t_init * (t_init + 1) / 2.0
    xi = math.inf
    for vals in _row_values(Cinit, idx).values():
        if vals.size < 2:
            continue
        D = scale * np.abs(vals[:, None] - vals[None, :])
        D = D[np.triu_indices(vals.size, k=1)]
        dist = np.abs(D - np.round(D))
        off = dist[dist > INTEGRALITY_TOL]
        if off.size:
            xi = min(xi, float(off.min()))
    regular = math.isfinite(xi)
    return regular, (xi if regular else math.nan)


def min_row_gap(C: CoefficientMatrix, anchors) -> float:
    """Smallest nonzero gap between entries of any anchor row (inf if every anchor row is constant)."""
    idx = list(getattr(anchors, "indices", anchors))
    gap = math.inf
    for vals in _row_values(C, idx).values():
        if vals.size > 1:
            gap = min(gap, float(np.diff(vals).min()))
    return gap


def regularized_memory_margin(
    W: DenseMatrix,
    H: DenseMatrix,
    C: CoefficientMatrix,
    anchors,
    lam: float,
    mu: float,
) -> dict:
    """
    Noise level under which a regularised FW step keeps selecting anchor rows,
    evaluated on the snapshot C. Reports upsilon and flags when it is not positive.
    """
    if mu <= 0:
        raise ContractViolation(f"mu must be > 0, got {mu}")
    K, N = H.shape
    psi = min_row_gap(C, anchors)
    d_p = d_prime(d_of_h(H, anchors), K)
    lam_max = float(np.linalg.eigvalsh(W.data.T @ W.data)[-1])
    gamma = float(np.linalg.norm(W.data, axis=0).max())
    decay = math.exp(-psi / mu) if math.isfinite(psi) else 0.0
    upsilon = 0.25 * (lam / N - lam * decay - (d_p**2 + 2.0 * d_p + 5.0) * lam_max / 2.0)
    positive = upsilon > 0
    if not positive:
        logger.info("upsilon=%.3e is not positive; the memory guarantee is vacuous here", upsilon)
    return {
        "psi": _finite_or_none(psi),
        "dPrimeH": d_p,
        "lambdaMaxWtW": lam_max,
        "upsilon": upsilon,
        "noiseTolerance": math.sqrt(gamma**2 + upsilon) - gamma if upsilon >= 0 else None,
        "upsilonPositive": positive,
        "rowsNonConstant": math.isfinite(psi),
    }


def unregularized_noise_bound(W: DenseMatrix, H: DenseMatrix, eta: float, anchors=None, alpha_w: float | None = None) -> dict:
    """Noise tolerance and column error bound for the lambda = 0 solver stopped at residual eta + 2 delta."""
    if eta <= 0:
        raise ContractViolation(f"eta must be > 0, got {eta}")
    a_w = alpha_margin(W) if alpha_w is None else float(alpha_w)
    s = np.linalg.svd(W.data, compute_uv=False)
    s_max, s_min = float(s[0]), float(s[-1]) if W.cols <= W.rows else 0.0
    gamma = float(np.linalg.norm(W.data, axis=0).max())
    d_h = d_of_h(H, anchors)
    tol = math.sqrt(gamma**2 + a_w * eta * (1.0 - d_h) / (4.0 * s_max)) - gamma
    return {
        "noiseTolerance": tol,
        "columnErrorBound": _finite_or_none((eta + 4.0 * tol) / s_min if s_min > 0 else math.inf),
        "alphaW": a_w,
        "dH": d_h,
    }
