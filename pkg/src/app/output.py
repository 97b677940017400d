from __future__ import annotations

import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd


def to_jsonable(x):
    """Plain JSON types; non-finite floats become "inf" / "-inf" / null."""
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, set, frozenset)):
        items = sorted(x) if isinstance(x, (set, frozenset)) else x
        return [to_jsonable(v) for v in items]
    if isinstance(x, np.ndarray):
        return [to_jsonable(v) for v in x.tolist()]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float):
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
    return x


def json_bytes(obj) -> bytes:
    return (json.dumps(to_jsonable(obj), indent=2, allow_nan=False) + "\n").encode("utf-8")


def jsonl_bytes(records) -> bytes:
    lines = [json.dumps(to_jsonable(r), separators=(",", ":"), allow_nan=False) for r in records]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def csv_bytes(df: pd.DataFrame, config: dict | None = None) -> bytes:
    """CSV with an optional leading `# config: {...}` line (read back with comment="#")."""
    buf = io.StringIO()
    if config is not None:
        buf.write("# config: " + json.dumps(to_jsonable(config), separators=(",", ":"), allow_nan=False) + "\n")
    df.to_csv(buf, index=False, float_format="%.10g", lineterminator="\n")
    return buf.getvalue().encode("utf-8")


def write_atomic(path, data: bytes | str) -> Path:
    """Write to a temp file in the target directory, then rename over the target."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=f".{p.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, p)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return p


def with_config(config: dict, payload: dict) -> dict:
    return {"config": config, **payload}
