"""
Reading long-format panels and writing result records.

Input is delimited text with a header row and one row per (time, asset).
Output is either line-delimited JSON (one record per line) or a delimited
table.  Floats are written with 17 significant digits so every value
round-trips exactly; NaN is written as null and infinities as the strings
``"inf"`` / ``"-inf"``.  Files are written to a temporary sibling and
renamed into place.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import ConfigError, DataError
from .panel import Panel, PanelPeriod, log_by_period, zscore_by_period

TRANSFORMS = {"zscore": zscore_by_period, "log": log_by_period}


@dataclasses.dataclass(frozen=True)
class LoadedPanel:
    panel: Panel
    time_labels: tuple  # original time values, in period order
    dropped_rows: int
    char_cols: tuple
    control_cols: tuple


def _require_columns(frame: pd.DataFrame, cols: Iterable[str]):
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise ConfigError(f"column not found: {', '.join(missing)}")


def read_panel(path, time_col: str, return_col: str, char_cols: Sequence[str],
               control_cols: Sequence[str] = (), weight_col: Optional[str] = None,
               asset_col: Optional[str] = None, sep: str = ",") -> LoadedPanel:
    """Load a long-format file into a :class:`Panel`.

    Rows with a missing value in any used column are dropped and counted.
    Periods are ordered by the sorted time values; within a period, rows
    keep their file order.
    """
    try:
        frame = pd.read_csv(path, sep=sep, float_precision="round_trip")
    except FileNotFoundError as exc:
        raise ConfigError(f"input not found: {path}") from exc
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    char_cols = tuple(char_cols)
    control_cols = tuple(control_cols)
    if not char_cols:
        raise ConfigError("at least one characteristic column is required")
    used = [time_col, return_col, *char_cols, *control_cols]
    if weight_col:
        used.append(weight_col)
    if asset_col:
        used.append(asset_col)
    _require_columns(frame, used)
    numeric = [return_col, *char_cols, *control_cols] + ([weight_col] if weight_col else [])
    for c in numeric:
        if not pd.api.types.is_numeric_dtype(frame[c]):
            converted = pd.to_numeric(frame[c], errors="coerce")
            bad = converted.isna() & frame[c].notna()
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise DataError(f"non-numeric value in column {c!r}, file row {row + 1}")
            frame[c] = converted
    before = len(frame)
    frame = frame.dropna(subset=used)
    dropped = before - len(frame)
    if frame.empty:
        raise DataError("no complete rows in input")

    periods = []
    labels = []
    for k, (label, g) in enumerate(frame.groupby(time_col, sort=True), start=1):
        periods.append(PanelPeriod(
            t=k,
            returns=g[return_col].to_numpy(dtype=float),
            characteristics=g[list(char_cols)].to_numpy(dtype=float),
            controls=g[list(control_cols)].to_numpy(dtype=float) if control_cols else None,
            weights=g[weight_col].to_numpy(dtype=float) if weight_col else None,
            asset_ids=g[asset_col].to_numpy() if asset_col else None,
        ))
        labels.append(label.item() if hasattr(label, "item") else label)
    return LoadedPanel(panel=Panel(tuple(periods)), time_labels=tuple(labels),
                       dropped_rows=int(dropped), char_cols=char_cols, control_cols=control_cols)


def panel_to_frame(panel: Panel, time_labels=None, char_cols=None, control_cols=None,
                   return_col="ret", time_col="t", asset_col="asset",
                   weight_col="weight") -> pd.DataFrame:
    """Long-format frame of a panel, the inverse of :func:`read_panel`."""
    labels = time_labels or [p.t for p in panel]
    char_cols = char_cols or [f"z{k + 1}" for k in range(panel.d)]
    control_cols = control_cols or [f"x{k + 1}" for k in range(panel.d_x)]
    parts = []
    for lab, p in zip(labels, panel):
        cols = {time_col: [lab] * p.n,
                asset_col: p.asset_ids if p.asset_ids is not None else np.arange(p.n),
                return_col: p.returns}
        cols.update({c: p.characteristics[:, k] for k, c in enumerate(char_cols)})
        cols.update({c: p.controls[:, k] for k, c in enumerate(control_cols)})
        if p.weights is not None:
            cols[weight_col] = p.weights
        parts.append(pd.DataFrame(cols))
    return pd.concat(parts, ignore_index=True)


def write_panel(path, panel: Panel, **kwargs):
    """Write a panel as long-format CSV with 17 significant digits."""
    write_atomic(path, panel_to_frame(panel, **kwargs).to_csv(index=False, float_format="%.17g"))


def parse_transform(text: str, char_cols: Sequence[str]):
    """``"zscore:col"`` -> (function, column index)."""
    name, sep, col = text.partition(":")
    if not sep or name not in TRANSFORMS:
        raise ConfigError(f"bad transform {text!r}; use zscore:COL or log:COL")
    if col not in char_cols:
        raise ConfigError(f"column not found: {col} (transforms apply to characteristic columns)")
    return TRANSFORMS[name], list(char_cols).index(col)


def apply_transforms(panel: Panel, transforms: Sequence[str], char_cols: Sequence[str]) -> Panel:
    """Apply ``zscore:col`` / ``log:col`` transforms in the given order."""
    for text in transforms:
        fn, k = parse_transform(text, char_cols)
        panel = fn(panel, k)
    return panel


def _format_float(x: float) -> str:
    if math.isnan(x):
        return "null"
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def plain(obj):
    """Convert numpy scalars/arrays, tuples and dataclasses to plain Python."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.as_dict() if hasattr(obj, "as_dict") else dataclasses.asdict(obj)
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj) -> str:
    """Compact JSON with 17-significant-digit floats."""
    obj = plain(obj)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _format_float(obj)
    if isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(k)}:{dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, list):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _csv_cell(v) -> str:
    v = plain(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else format(v, ".17g")
    if isinstance(v, (list, dict)):
        v = dumps(v)
    s = str(v)
    if any(ch in s for ch in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def render(records: Sequence[dict], fmt: str = "jsonl") -> str:
    """Serialize records; ``csv`` uses the union of keys in first-seen order."""
    if fmt == "jsonl":
        return "".join(dumps(r) + "\n" for r in records)
    if fmt == "csv":
        keys = list(dict.fromkeys(k for r in records for k in r))
        lines = [",".join(keys)]
        lines += [",".join(_csv_cell(r.get(k)) for k in keys) for r in records]
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown output format {fmt!r}")


def write_atomic(path, text: str):
    """Write ``text`` to ``path`` via a temporary file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_records(path, records: Sequence[dict], fmt: str = "jsonl"):
    write_atomic(path, render(records, fmt))


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
