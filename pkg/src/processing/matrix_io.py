from __future__ import annotations

import io
import re
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.io
import scipy.sparse as sp

from src.analytics.errors import ContractViolation, InputParseError
from src.analytics.matstore import CoefficientMatrix, DenseMatrix, SparseSimplexColumn
from src.processing.embed import SymmetricMatrix

MM_SUFFIXES = {".mtx", ".mm"}
_LINE_RE = re.compile(r"line (\d+)")


def _is_matrix_market(path: Path) -> bool:
    return path.suffix.lower() in MM_SUFFIXES


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputParseError("file not found", path=str(p))
    return p


# -------------------------
# CSV
# -------------------------

def read_dense_csv(path) -> np.ndarray:
    """
    Headerless comma-separated matrix, one row per line, parsed with round-trip
    precision so values written with %.17g come back bit for bit.
    Every cell must parse as a finite number; the first bad cell is reported by line and column.
    """
    p = _existing(path)
    try:
        fast = pd.read_csv(
            p,
            header=None,
            dtype=np.float64,
            float_precision="round_trip",
            skip_blank_lines=False,
            skipinitialspace=True,
        ).to_numpy()
        if np.isfinite(fast).all():
            return fast
    except ValueError:
        pass
    # cell-by-cell pass: names the first bad cell, or parses what the fast reader refused
    return _parse_cellwise(p)


def _parse_cellwise(p: Path) -> np.ndarray:
    try:
        raw = pd.read_csv(
            p,
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError:
        raise InputParseError("empty file", path=str(p)) from None
    except pd.errors.ParserError as exc:
        m = _LINE_RE.search(str(exc))
        raise InputParseError(f"ragged row: {exc}", path=str(p), line=int(m.group(1)) if m else None) from None

    num = raw.apply(lambda s: pd.to_numeric(s.str.strip(), errors="coerce"))
    bad = ~np.isfinite(num.to_numpy(dtype=np.float64))
    if bad.any():
        r, c = np.argwhere(bad)[0]
        cell = raw.iat[r, c]
        raise InputParseError(f"not a finite number: {cell!r}", path=str(p), line=int(r) + 1, column=int(c) + 1)
    return np.array([[float(s) for s in row] for row in raw.to_numpy()], dtype=np.float64)


def write_dense_csv(a: np.ndarray) -> str:
    buf = io.StringIO()
    pd.DataFrame(np.asarray(a)).to_csv(buf, header=False, index=False, float_format="%.17g")
    return buf.getvalue()


# -------------------------
# Matrix Market
# -------------------------

def read_matrix_market(path):
    """Array files come back as ndarray, coordinate files as COO."""
    p = _existing(path)
    try:
        out = scipy.io.mmread(p)
    except Exception as exc:  # scipy raises several types for bad headers and bodies
        raise InputParseError(f"malformed Matrix Market file: {exc}", path=str(p)) from None
    if sp.issparse(out):
        out = out.tocoo()
        if not np.isfinite(out.data).all():
            raise InputParseError("non-finite entry", path=str(p))
    else:
        out = np.asarray(out, dtype=np.float64)
        if not np.isfinite(out).all():
            raise InputParseError("non-finite entry", path=str(p))
    return out


def write_matrix_market(target, a, comment: str = "") -> None:
    scipy.io.mmwrite(target, a, comment=comment, precision=17)


def coefficient_bytes(C: CoefficientMatrix, comment: str = "") -> bytes:
    """C as a Matrix Market coordinate file."""
    buf = io.BytesIO()
    write_matrix_market(buf, C.to_coo(), comment=comment)
    return buf.getvalue()


def dense_bytes(a: np.ndarray, comment: str = "") -> bytes:
    buf = io.BytesIO()
    write_matrix_market(buf, np.asarray(a, dtype=np.float64), comment=comment)
    return buf.getvalue()


# -------------------------
# Typed readers
# -------------------------

def read_dense(path) -> DenseMatrix:
    p = Path(path)
    if _is_matrix_market(p):
        out = read_matrix_market(p)
        a = out.toarray() if sp.issparse(out) else out
    else:
        a = read_dense_csv(p)
    if a.size == 0:
        raise InputParseError("matrix has no entries", path=str(p))
    return DenseMatrix(a)


def read_coefficients(path, n: int | None = None) -> CoefficientMatrix:
    """
    N x N coefficient matrix (coordinate or array); N is taken from the file when not given.
    Explicit zeros are dropped.
    Feasibility is not checked here; the solver rejects non-simplex columns.
    """
    p = Path(path)
    out = read_matrix_market(p) if _is_matrix_market(p) else read_dense_csv(p)
    S = sp.csc_matrix(out)
    n = S.shape[0] if n is None else n
    if S.shape != (n, n):
        raise InputParseError(f"coefficient matrix is {S.shape[0]} x {S.shape[1]}, expected {n} x {n}", path=str(p))
    S.sum_duplicates()
    S.eliminate_zeros()
    S.sort_indices()
    cols = [
        SparseSimplexColumn(n, S.indices[S.indptr[j] : S.indptr[j + 1]], S.data[S.indptr[j] : S.indptr[j + 1]])
        for j in range(n)
    ]
    return CoefficientMatrix(n, cols)


def read_symmetric(path) -> SymmetricMatrix:
    """
    Adjacency matrix. A file holding only one triangle is mirrored; a full file
    must be symmetric.
    """
    p = Path(path)
    out = read_matrix_market(p) if _is_matrix_market(p) else read_dense_csv(p)
    a = out.toarray() if sp.issparse(out) else out
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputParseError(f"adjacency must be square, got {a.shape}", path=str(p))
    if not np.any(np.tril(a, -1)):
        upper = a
    elif not np.any(np.triu(a, 1)):
        upper = a.T
    elif np.allclose(a, a.T, rtol=1e-12, atol=0.0):
        upper = a
    else:
        raise InputParseError("adjacency is not symmetric", path=str(p))
    return SymmetricMatrix.from_upper(upper)


def read_membership(path, k: int | None = None) -> DenseMatrix:
    """Ground-truth K x N membership; a N x K file is transposed when K is given."""
    H = read_dense(path)
    if k is not None and H.rows != k:
        if H.cols == k:
            return DenseMatrix(H.data.T)
        raise ContractViolation(f"membership is {H.rows} x {H.cols}, expected {k} rows")
    return H
