from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from src.analytics.errors import ConfigError, ContractViolation
from src.analytics.matstore import CoefficientMatrix

DEFAULT_LAMBDA = 1e-6
DEFAULT_MU = 1e-5


@dataclass(frozen=True)
class SmoothingParams:
    mu: float = DEFAULT_MU
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ConfigError(f"mu must be > 0, got {self.mu}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")

    @property
    def active(self) -> bool:
        return self.lam > 0


@dataclass(frozen=True)
class RowSoftmaxState:
    """
    Per-row shifted exp-sums of a C snapshot:
    row_shift[n] = max_i C(n, i), row_shifted_sum[n] = sum_i exp((C(n, i) - row_shift[n]) / mu),
    with the N - nnz implicit zeros counted in closed form.
    """

    row_shift: np.ndarray
    row_shifted_sum: np.ndarray
    mu: float

    @property
    def zero_weight(self) -> np.ndarray:
        # y_n for an implicit zero in row n
        return np.exp(-self.row_shift / self.mu) / self.row_shifted_sum


def phi_mu_row(x, mu: float) -> float:
    """
    Smoothed max: mu * log(mean(exp(x / mu))), evaluated in shifted form.
    Always within [max(x) - mu log N, max(x)].
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ContractViolation("phi_mu_row needs a non-empty vector")
    if mu <= 0:
        raise ContractViolation(f"mu must be > 0, got {mu}")
    x_max = float(x.max())
    n = x.size
    lower = x_max - mu * np.log(n)
    val = x_max + mu * (float(logsumexp((x - x_max) / mu)) - np.log(n))
    return float(min(max(val, lower), x_max))


def softmax_state(C: CoefficientMatrix, mu: float) -> RowSoftmaxState:
    """Builds the sweep snapshot in O(nnz + N)."""
    n = C.dim
    shift = C.row_max.copy()
    implicit = (n - C.row_nnz).astype(np.float64)
    sums = implicit * np.exp(-shift / mu)
    rows, vals, _ = C._flatten()
    if rows.size:
        np.add.at(sums, rows, np.exp((vals - shift[rows]) / mu))
    return RowSoftmaxState(row_shift=shift, row_shifted_sum=sums, mu=mu)


def phi_mu_total(C: CoefficientMatrix, mu: float, state: RowSoftmaxState | None = None) -> float:
    if mu <= 0:
        raise ContractViolation(f"mu must be > 0, got {mu}")
    st = state if state is not None else softmax_state(C, mu)
    n = C.dim
    per_row = st.row_shift + mu * (np.log(st.row_shifted_sum) - np.log(n))
    per_row = np.clip(per_row, st.row_shift - mu * np.log(n), st.row_shift)
    return float(per_row.sum())


def softmax_gradient_column(C: CoefficientMatrix, state: RowSoftmaxState, ell: int, mu: float) -> np.ndarray:
    """y_n = exp((C(n, ell) - m_n) / mu) / r_n for every row n."""
    y = state.zero_weight.copy()
    col = C.columns[ell]
    if col.nnz:
        idx = col.indices
        y[idx] = np.exp((col.values - state.row_shift[idx]) / mu) / state.row_shifted_sum[idx]
    return y


def softmax_gradient_block(C: CoefficientMatrix, state: RowSoftmaxState, start: int, stop: int) -> np.ndarray:
    """Columns [start, stop) of the softmax gradient as an N x B array."""
    y = np.repeat(state.zero_weight[:, None], stop - start, axis=1)
    for b, col in enumerate(C.columns[start:stop]):
        if col.nnz:
            idx = col.indices
            y[idx, b] = np.exp((col.values - state.row_shift[idx]) / state.mu) / state.row_shifted_sum[idx]
    return y


def rowinf_norm_sum(C: CoefficientMatrix) -> float:
    return float(C.row_max.sum())


def phi_mu_identity(n: int, mu: float) -> float:
    """Phi_mu(I_n): n rows, each a single 1 among n - 1 zeros."""
    if n < 1 or mu <= 0:
        raise ContractViolation(f"need n >= 1 and mu > 0, got n={n} mu={mu}")
    if n == 1:
        return 1.0
    per_row = 1.0 + mu * (np.logaddexp(0.0, np.log(n - 1) - 1.0 / mu) - np.log(n))
    return float(n * per_row)
