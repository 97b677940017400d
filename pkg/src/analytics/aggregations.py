import numpy as np
import pandas as pd

SUMMARY_COLUMNS = ["snrDb", "N", "solver", "lambda", "mu"]


def _num(s):
    return pd.to_numeric(s, errors="coerce")


def safe_mean(s: pd.Series) -> float:
    s = _num(s).dropna()
    if len(s) == 0:
        return np.nan
    return float(s.mean())


def trials_frame(records: list[dict]) -> pd.DataFrame:
    """Trial records (as emitted to JSON-lines) to a typed frame."""
    df = pd.DataFrame.from_records(records)
    if df.empty:
        return df
    for c in ["snrDb", "lambda", "mu", "residual", "peakNnzRatio", "wallTimeMs"]:
        if c in df.columns:
            df[c] = _num(df[c])
    df["success"] = df["success"].astype(bool)
    return df


def summarize_trials(df: pd.DataFrame, group_cols=None) -> pd.DataFrame:
    """
    One row per (snrDb, N, solver, lambda, mu) cell: trial count, failures,
    successRate and meanPeakNnzRatio. Failed trials count as unsuccessful.
    """
    group_cols = list(group_cols or SUMMARY_COLUMNS)
    if df.empty or any(c not in df.columns for c in group_cols):
        return pd.DataFrame(columns=group_cols + ["trials", "failures", "successRate", "meanPeakNnzRatio", "meanResidual"])

    d = df.copy()
    d["_failed"] = d["error"].notna() if "error" in d.columns else False

    rows = []
    for key, sub in d.groupby(group_cols, dropna=False, sort=True):
        key = key if isinstance(key, tuple) else (key,)
        rows.append({
            **dict(zip(group_cols, key)),
            "trials": int(len(sub)),
            "failures": int(sub["_failed"].sum()),
            "successRate": float(sub["success"].mean()),
            "meanPeakNnzRatio": safe_mean(sub["peakNnzRatio"]),
            "meanResidual": safe_mean(sub["residual"]),
        })
    return pd.DataFrame(rows)


def memory_growth(summary: pd.DataFrame, nnz_col: str = "meanPeakTotalNnz") -> pd.DataFrame:
    """Adds growthFactor = value at N / value at the previous N, per solver."""
    if summary.empty or nnz_col not in summary.columns:
        return summary
    out = summary.sort_values(["solver", "N"]).copy()
    prev = out.groupby("solver")[nnz_col].shift(1)
    out["growthFactor"] = _num(out[nnz_col]) / _num(prev)
    return out.reset_index(drop=True)


def summarize_memory(df: pd.DataFrame, bound: float = 2.0) -> pd.DataFrame:
    """Per (N, solver): mean peak nnz, mean ratio, worst ratio and the linearity verdict."""
    cols = ["N", "solver", "trials", "meanPeakTotalNnz", "meanPeakNnzRatio", "maxPeakNnzRatio", "linear"]
    if df.empty:
        return pd.DataFrame(columns=cols)
    rows = []
    for (n, solver), sub in df.groupby(["N", "solver"], sort=True):
        ratio = _num(sub["peakNnzRatio"])
        rows.append({
            "N": int(n),
            "solver": solver,
            "trials": int(len(sub)),
            "meanPeakTotalNnz": safe_mean(sub["peakTotalNnz"]),
            "meanPeakNnzRatio": safe_mean(ratio),
            "maxPeakNnzRatio": float(ratio.max()) if ratio.notna().any() else np.nan,
            "linear": bool(ratio.notna().any() and ratio.max() <= bound),
        })
    return memory_growth(pd.DataFrame(rows, columns=cols))
