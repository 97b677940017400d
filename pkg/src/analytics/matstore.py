from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from src.analytics.errors import ContractViolation

PURGE_THRESHOLD = 1e-15
SUM_TOL = 1e-9

# int64 row index + float64 value per explicit entry
ENTRY_BYTES = 16
# row_max (f8) + row_nnz (i8) + row_argmax (i8) + stale flag (b1)
AGGREGATE_BYTES_PER_ROW = 25

_EMPTY_IDX = np.empty(0, dtype=np.int64)
_EMPTY_VAL = np.empty(0, dtype=np.float64)


# -------------------------
# Dense storage
# -------------------------

@dataclass(frozen=True)
class DenseMatrix:
    """
    Immutable real matrix, stored column-major (Fortran order).
    Houses X, W, H, V and eigen-embeddings.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64, order="F", copy=True)
        if a.ndim == 1:
            a = a.reshape(-1, 1, order="F")
        if a.ndim != 2:
            raise ContractViolation(f"dense matrix must be 2-D, got {a.ndim}-D")
        if not np.isfinite(a).all():
            raise ContractViolation("dense matrix contains non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def cols(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def column(self, j: int) -> np.ndarray:
        return self.data[:, j]

    def select_columns(self, idx: Sequence[int]) -> "DenseMatrix":
        return DenseMatrix(self.data[:, np.asarray(idx, dtype=np.int64)])

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.data))


# -------------------------
# Sparse simplex column
# -------------------------

class SparseSimplexColumn:
    """
    One column c_l of C as sorted (row index, value) pairs.
    An empty column is the all-zero start point before the first FW step.
    """

    __slots__ = ("indices", "values", "dim")

    def __init__(self, dim: int, indices: Iterable[int] | None = None, values: Iterable[float] | None = None):
        self.dim = int(dim)
        self.indices = _EMPTY_IDX if indices is None else np.asarray(indices, dtype=np.int64)
        self.values = _EMPTY_VAL if values is None else np.asarray(values, dtype=np.float64)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ContractViolation("indices and values must be 1-D and of equal length")

    @classmethod
    def unit(cls, dim: int, j: int) -> "SparseSimplexColumn":
        return cls(dim, [j], [1.0])

    @classmethod
    def from_dense(cls, vec: np.ndarray) -> "SparseSimplexColumn":
        v = np.asarray(vec, dtype=np.float64)
        idx = np.flatnonzero(v >= PURGE_THRESHOLD)
        return cls(v.size, idx, v[idx])

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def total(self) -> float:
        return float(self.values.sum())

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def check(self, allow_empty: bool = False) -> str | None:
        """Returns a description of the first violated invariant, or None."""
        if self.nnz == 0:
            return None if allow_empty else "column is empty"
        if np.any(np.diff(self.indices) <= 0):
            return "indices not strictly increasing"
        if self.indices[0] < 0 or self.indices[-1] >= self.dim:
            return "index out of range"
        if not np.isfinite(self.values).all() or np.any(self.values <= 0):
            return "values must be strictly positive"
        s = self.total()
        if abs(s - 1.0) > SUM_TOL:
            return f"values sum to {s!r}, not 1"
        return None

    def __repr__(self) -> str:
        pairs = ", ".join(f"({i}, {v:.6g})" for i, v in zip(self.indices.tolist(), self.values.tolist()))
        return f"SparseSimplexColumn(dim={self.dim}, [{pairs}])"


# -------------------------
# Coefficient matrix
# -------------------------

@dataclass
class CoefficientMatrix:
    """
    N sparse simplex columns plus per-row aggregates (max, nnz).

    Row maxima follow increases incrementally. When the column holding a row's
    maximum shrinks, the row is flagged stale and repaired in one O(nnz) pass on
    the next read, so `row_max` always equals a from-scratch recomputation.
    """

    dim: int
    columns: list[SparseSimplexColumn] = field(default_factory=list)

    def __post_init__(self):
        n = int(self.dim)
        if n < 1:
            raise ContractViolation("coefficient matrix needs N >= 1")
        if not self.columns:
            self.columns = [SparseSimplexColumn(n) for _ in range(n)]
        if len(self.columns) != n:
            raise ContractViolation(f"expected {n} columns, got {len(self.columns)}")
        for c in self.columns:
            if c.dim != n:
                raise ContractViolation("column dimension does not match N")
        self.rebuild_aggregates()

    @classmethod
    def zeros(cls, n: int) -> "CoefficientMatrix":
        return cls(n)

    @classmethod
    def identity(cls, n: int) -> "CoefficientMatrix":
        return cls(n, [SparseSimplexColumn.unit(n, j) for j in range(n)])

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "CoefficientMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractViolation("coefficient matrix must be square")
        n = a.shape[0]
        return cls(n, [SparseSimplexColumn.from_dense(a[:, j]) for j in range(n)])

    # ---- aggregates

    def rebuild_aggregates(self):
        n = self.dim
        self._row_max = np.zeros(n)
        self._row_nnz = np.zeros(n, dtype=np.int64)
        self._row_argmax = np.full(n, -1, dtype=np.int64)
        self._stale = np.ones(n, dtype=bool)
        rows, _, _ = self._flatten()
        np.add.at(self._row_nnz, rows, 1)
        self._total_nnz = int(rows.size)
        self._nonzero_rows = int(np.count_nonzero(self._row_nnz))
        self._refresh_row_max()
        self.peak_total_nnz = self._total_nnz
        self.peak_nonzero_rows = self._nonzero_rows

    def _flatten(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        counts = np.fromiter((c.nnz for c in self.columns), dtype=np.int64, count=self.dim)
        if counts.sum() == 0:
            return _EMPTY_IDX, _EMPTY_VAL, _EMPTY_IDX
        rows = np.concatenate([c.indices for c in self.columns])
        vals = np.concatenate([c.values for c in self.columns])
        cols = np.repeat(np.arange(self.dim, dtype=np.int64), counts)
        return rows, vals, cols

    def _refresh_row_max(self):
        if not self._stale.any():
            return
        rows, vals, cols = self._flatten()
        sel = self._stale[rows]
        r, v, c = rows[sel], vals[sel], cols[sel]
        self._row_max[self._stale] = 0.0
        self._row_argmax[self._stale] = -1
        if r.size:
            order = np.lexsort((c, -v, r))
            rs = r[order]
            first = np.ones(rs.size, dtype=bool)
            first[1:] = rs[1:] != rs[:-1]
            self._row_max[rs[first]] = v[order][first]
            self._row_argmax[rs[first]] = c[order][first]
        self._stale[:] = False

    @property
    def row_max(self) -> np.ndarray:
        self._refresh_row_max()
        return self._row_max

    @property
    def row_nnz(self) -> np.ndarray:
        return self._row_nnz

    @property
    def total_nnz(self) -> int:
        return self._total_nnz

    @property
    def nonzero_rows(self) -> int:
        return self._nonzero_rows

    def allocated_bytes(self) -> int:
        """Bytes actually held by entry arrays and row aggregates."""
        entries = sum(c.indices.nbytes + c.values.nbytes for c in self.columns)
        aggregates = self._row_max.nbytes + self._row_nnz.nbytes + self._row_argmax.nbytes + self._stale.nbytes
        return int(entries + aggregates)

    def expected_bytes(self) -> int:
        return self._total_nnz * ENTRY_BYTES + self.dim * AGGREGATE_BYTES_PER_ROW

    # ---- mutation

    def replace_columns(self, cols: np.ndarray, indptr: np.ndarray, indices: np.ndarray, values: np.ndarray):
        """
        Swaps in new columns `cols`, column b being indices/values[indptr[b]:indptr[b + 1]],
        and updates aggregates with one vectorized pass over the old and new entries.
        """
        n = self.dim
        cols = np.asarray(cols, dtype=np.int64)
        old = [self.columns[ell] for ell in cols]
        old_counts = np.fromiter((c.nnz for c in old), dtype=np.int64, count=cols.size)
        old_rows = np.concatenate([c.indices for c in old]) if old_counts.sum() else _EMPTY_IDX

        # a row whose maximum sat in a replaced column is repaired on the next read
        if old_rows.size:
            in_batch = np.zeros(n, dtype=bool)
            in_batch[cols] = True
            owner = self._row_argmax[old_rows]
            held = (owner >= 0) & in_batch[np.maximum(owner, 0)]
            self._stale[old_rows[held]] = True

        for b, ell in enumerate(cols):
            lo, hi = indptr[b], indptr[b + 1]
            self.columns[ell] = SparseSimplexColumn(n, indices[lo:hi], values[lo:hi])

        self._row_nnz += np.bincount(indices, minlength=n) - np.bincount(old_rows, minlength=n)
        self._nonzero_rows = int(np.count_nonzero(self._row_nnz))
        # running totals in column order, so the peak is exact within the batch
        running = self._total_nnz + np.cumsum(np.diff(indptr) - old_counts)
        if running.size:
            self._total_nnz = int(running[-1])
            self.peak_total_nnz = max(self.peak_total_nnz, int(running.max()))

        if indices.size:
            new_cols = np.repeat(cols, np.diff(indptr))
            order = np.lexsort((new_cols, -values, indices))
            rs = indices[order]
            first = np.ones(rs.size, dtype=bool)
            first[1:] = rs[1:] != rs[:-1]
            r, v, c = rs[first], values[order][first], new_cols[order][first]
            up = v > self._row_max[r]
            self._row_max[r[up]] = v[up]
            self._row_argmax[r[up]] = c[up]

        if self._nonzero_rows > self.peak_nonzero_rows:
            self.peak_nonzero_rows = self._nonzero_rows

    def reset_peaks(self):
        self.peak_total_nnz = self._total_nnz
        self.peak_nonzero_rows = self._nonzero_rows

    # ---- views

    def infeasible_columns(self) -> list[tuple[int, str]]:
        bad = []
        for ell, c in enumerate(self.columns):
            msg = c.check()
            if msg is not None:
                bad.append((ell, msg))
        return bad

    def support_rows(self) -> np.ndarray:
        return np.flatnonzero(self._row_nnz > 0)

    def block_csc(self, start: int, stop: int) -> sp.csc_matrix:
        """Columns [start, stop) as an N x B scipy CSC matrix (shares no state)."""
        return self.columns_csc(range(start, stop))

    def columns_csc(self, which: Iterable[int]) -> sp.csc_matrix:
        cols = [self.columns[int(ell)] for ell in which]
        counts = np.fromiter((c.nnz for c in cols), dtype=np.int64, count=len(cols))
        indptr = np.zeros(len(cols) + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        if indptr[-1]:
            idx = np.concatenate([c.indices for c in cols])
            val = np.concatenate([c.values for c in cols])
        else:
            idx, val = _EMPTY_IDX, _EMPTY_VAL
        return sp.csc_matrix((val, idx, indptr), shape=(self.dim, len(cols)))

    def to_coo(self) -> sp.coo_matrix:
        rows, vals, cols = self._flatten()
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))

    def copy(self) -> "CoefficientMatrix":
        return CoefficientMatrix(
            self.dim,
            [SparseSimplexColumn(self.dim, c.indices.copy(), c.values.copy()) for c in self.columns],
        )


# -------------------------
# Operations
# -------------------------

def mat_vec(X: DenseMatrix, c: SparseSimplexColumn) -> np.ndarray:
    if c.dim != X.cols:
        raise ContractViolation(f"column dimension {c.dim} does not match X with {X.cols} columns")
    if c.nnz == 0:
        return np.zeros(X.rows)
    return X.data[:, c.indices] @ c.values


def residual_gradient_column(X: DenseMatrix, c: SparseSimplexColumn, ell: int) -> np.ndarray:
    """p = X^T (X c - x_ell), through an M-length intermediate."""
    if not 0 <= ell < X.cols:
        raise ContractViolation(f"column index {ell} out of range for {X.cols} columns")
    r = mat_vec(X, c) - X.data[:, ell]
    return X.data.T @ r


def apply_fw_steps(C: CoefficientMatrix, cols, vertices, alpha: float) -> CoefficientMatrix:
    """
    c_l <- (1 - alpha) c_l + alpha e_j for every (l, j) in zip(cols, vertices), as one
    sparse update. Entries below PURGE_THRESHOLD are purged.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolation(f"step size {alpha} outside [0, 1]")
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vertices = np.asarray(vertices, dtype=np.int64).ravel()
    if cols.shape != vertices.shape:
        raise ContractViolation("need one vertex per column")
    if cols.size == 0:
        return C
    if min(cols.min(), vertices.min()) < 0 or max(cols.max(), vertices.max()) >= C.dim:
        raise ContractViolation("column or vertex index out of range")
    if np.unique(cols).size != cols.size:
        raise ContractViolation("a column takes at most one step per batch")
    if alpha == 0.0:
        return C

    B = cols.size
    old = C.columns_csc(cols)
    scaled = sp.csc_matrix((old.data * (1.0 - alpha), old.indices, old.indptr), shape=(C.dim, B))
    step = sp.csc_matrix((np.full(B, alpha), vertices, np.arange(B + 1)), shape=(C.dim, B))
    T = (scaled + step).tocsc()
    T.data[T.data < PURGE_THRESHOLD] = 0.0
    T.eliminate_zeros()
    T.sort_indices()
    C.replace_columns(cols, T.indptr, T.indices.astype(np.int64), T.data)
    return C


def apply_fw_step(C: CoefficientMatrix, ell: int, j: int, alpha: float) -> CoefficientMatrix:
    """c_ell <- (1 - alpha) c_ell + alpha e_j, purging entries below PURGE_THRESHOLD."""
    return apply_fw_steps(C, [ell], [j], alpha)


def row_inf_norms(C: CoefficientMatrix) -> np.ndarray:
    return C.row_max.copy()
