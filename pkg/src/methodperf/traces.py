"""Coarse and fine profiling traces.

Traces are held as pandas DataFrames with fixed columns; times are integer
nanoseconds throughout. ``CoarseRecord``/``FineCallRecord`` exist for
row-at-a-time use (building small traces by hand, iterating a file).
"""
from __future__ import annotations

import gzip
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd

COARSE_COLUMNS = ["config_id", "repetition", "method", "total_time_ns", "call_count"]
FINE_COLUMNS = ["config_id", "repetition", "method", "call_index", "duration_ns"]
FINE_OPTIONAL = ["args_hash"]
BLACKBOX_COLUMNS = ["config_id", "repetition", "total_time_ns"]

# 64 log-spaced bins from 1 us to 100 s
HISTOGRAM_EDGES_NS = np.logspace(3, 11, 65)


class TraceFormatError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line


class CoarseRecord(NamedTuple):
    config_id: str
    repetition: int
    method: str
    total_time_ns: int
    call_count: int


class FineCallRecord(NamedTuple):
    config_id: str
    repetition: int
    method: str
    call_index: int
    duration_ns: int


@dataclass
class MethodDataset:
    """Per-method learning data: one row per configuration."""

    method: str
    config_ids: list
    X: np.ndarray
    time_ns: np.ndarray
    call_count: np.ndarray
    histograms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.config_ids)

    def subset(self, config_ids: Sequence[str]) -> "MethodDataset":
        index = {c: i for i, c in enumerate(self.config_ids)}
        rows = [index[c] for c in config_ids]
        return MethodDataset(self.method, list(config_ids), self.X[rows], self.time_ns[rows],
                             self.call_count[rows],
                             None if self.histograms is None else self.histograms[rows])


# -- file IO ------------------------------------------------------------------

def _open_text(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def _read_table(path, columns: list[str], optional: Sequence[str] = ()) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise TraceFormatError("file does not exist", path)
    with _open_text(path, "r") as fh:
        header = fh.readline()
    fields = header.strip().split(",")
    if fields[: len(columns)] != columns or any(f not in optional for f in fields[len(columns):]):
        raise TraceFormatError(f"bad header {header.strip()!r}, expected {','.join(columns)}",
                               path, 1)
    key_cols = [c for c in ("config_id", "method") if c in columns]
    int_cols = [c for c in fields if c not in key_cols and c != "args_hash"]
    dtypes = {c: "category" for c in key_cols} | {c: np.int64 for c in int_cols}
    dtypes |= {c: str for c in fields if c not in dtypes}
    try:
        # fast path; the row scan below only runs to locate a bad line
        df = pd.read_csv(path, skiprows=1, names=fields, header=None, dtype=dtypes,
                         keep_default_na=False, skip_blank_lines=True, compression="infer")
    except pd.errors.EmptyDataError:
        return _empty(columns)
    except (ValueError, pd.errors.ParserError, OverflowError):
        _scan_rows(path, fields, int_cols, key_cols)
        raise TraceFormatError("unreadable table", path) from None
    if df.empty:
        return _empty(columns)
    bad = bool(int_cols) and bool((df[int_cols] < 0).any().any())
    bad = bad or any("" in df[c].cat.categories for c in key_cols)
    if bad:
        _scan_rows(path, fields, int_cols, key_cols)
    return df[columns + [f for f in fields if f in optional]]


def _scan_rows(path, fields: list[str], int_cols: list[str], key_cols: list[str]) -> None:
    """Raise a TraceFormatError naming the first malformed data line."""
    positions = {c: i for i, c in enumerate(fields)}
    with _open_text(Path(path), "r") as fh:
        next(fh, None)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            values = line.rstrip("\r\n").split(",")
            if len(values) != len(fields):
                raise TraceFormatError(f"expected {len(fields)} fields, got {len(values)}", path, lineno)
            for col in key_cols:
                if not values[positions[col]]:
                    raise TraceFormatError(f"empty {col}", path, lineno)
            for col in int_cols:
                raw = values[positions[col]]
                if not (raw.isdigit() and raw.isascii()):
                    raise TraceFormatError(f"column {col} must be a non-negative integer, got {raw!r}",
                                           path, lineno)


def _empty(columns: list[str]) -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=object if c in ("config_id", "method") else np.int64)
                         for c in columns})


def _write_table(df: pd.DataFrame, path, columns: list[str]) -> None:
    path = Path(path)
    if "method" in columns and pd.Series(_labels(df["method"]), dtype=object).str.contains(",").any():
        raise TraceFormatError("method ids must not contain commas", path)
    with _open_text(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        df[columns].to_csv(fh, header=False, index=False, lineterminator="\n")


def _labels(column: pd.Series):
    return column.cat.categories.astype(str) if isinstance(column.dtype, pd.CategoricalDtype) \
        else column.astype(str).unique()


def read_coarse(path) -> pd.DataFrame:
    df = _read_table(path, COARSE_COLUMNS)
    bad = (df["call_count"] == 0) & (df["total_time_ns"] != 0)
    if bad.any():
        raise TraceFormatError("call_count is 0 but total_time_ns is not", path,
                               int(np.flatnonzero(bad.to_numpy())[0]) + 2)
    return df


def read_fine(path) -> pd.DataFrame:
    df = _read_table(path, FINE_COLUMNS, FINE_OPTIONAL)
    dup = df.duplicated(["config_id", "repetition", "method", "call_index"])
    if dup.any():
        raise TraceFormatError("duplicate call_index", path, int(np.flatnonzero(dup.to_numpy())[0]) + 2)
    return df


def read_blackbox(path) -> pd.DataFrame:
    return _read_table(path, BLACKBOX_COLUMNS)


def iter_fine(path) -> Iterator[FineCallRecord]:
    for row in read_fine(path)[FINE_COLUMNS].itertuples(index=False):
        yield FineCallRecord(*row)


def write_coarse(df, path) -> None:
    _write_table(to_frame(df, COARSE_COLUMNS), path, COARSE_COLUMNS)


def write_fine(df, path) -> None:
    df = to_frame(df, FINE_COLUMNS)
    cols = FINE_COLUMNS + [c for c in FINE_OPTIONAL if c in df.columns]
    _write_table(df, path, cols)


def write_blackbox(df, path) -> None:
    _write_table(to_frame(df, BLACKBOX_COLUMNS), path, BLACKBOX_COLUMNS)


def to_frame(records, columns: list[str]) -> pd.DataFrame:
    """Accept a DataFrame or an iterable of record tuples."""
    if isinstance(records, pd.DataFrame):
        return records
    rows = list(records)
    if not rows:
        return _empty(columns)
    return pd.DataFrame(rows, columns=columns)


# -- aggregation --------------------------------------------------------------

def _dataset_frame(per_config: pd.DataFrame, config_ids: Sequence[str], methods: Sequence[str],
                   value_cols: Sequence[str]) -> dict[str, pd.DataFrame]:
    full = pd.MultiIndex.from_product([list(methods), list(config_ids)], names=["method", "config_id"])
    table = per_config.set_index(["method", "config_id"])[list(value_cols)].reindex(full, fill_value=0)
    return {m: table.loc[m] for m in methods}


def aggregate_repetitions(records, config_ids: Sequence[str] | None = None,
                          encoder=None, statistic: str = "mean") -> dict[str, MethodDataset]:
    """Collapse coarse repetitions into one row per (configuration, method).

    Methods never seen under a configuration get time 0 and count 0.
    ``encoder`` maps a config id to its feature vector; when omitted ``X`` is empty.
    """
    df = _plain_keys(to_frame(records, COARSE_COLUMNS))
    if config_ids is None:
        config_ids = sorted(df["config_id"].unique())
    methods = sorted(df["method"].unique())
    # absent (config, rep, method) triples count as 0 within a repetition
    reps = df[["config_id", "repetition"]].drop_duplicates()
    per_rep = df.groupby(["config_id", "repetition", "method"], sort=False)[
        ["total_time_ns", "call_count"]].sum()
    if statistic not in ("mean", "median"):
        raise ValueError(f"unknown statistic {statistic!r}")
    grid = (reps.merge(pd.DataFrame({"method": methods}), how="cross")
            .set_index(["config_id", "repetition", "method"]))
    per_rep = per_rep.reindex(grid.index, fill_value=0).reset_index()
    per_config = per_rep.groupby(["config_id", "method"])[["total_time_ns", "call_count"]].agg(statistic)
    per_config = per_config.reset_index()
    tables = _dataset_frame(per_config, config_ids, methods, ["total_time_ns", "call_count"])
    X = _encode(config_ids, encoder)
    return {m: MethodDataset(m, list(config_ids), X, t["total_time_ns"].to_numpy(float),
                             t["call_count"].to_numpy(float))
            for m, t in tables.items()}


def _plain_keys(df: pd.DataFrame) -> pd.DataFrame:
    cats = {c: str for c in ("config_id", "method")
            if c in df.columns and isinstance(df[c].dtype, pd.CategoricalDtype)}
    return df.astype(cats) if cats else df


def _encode(config_ids, encoder) -> np.ndarray:
    if encoder is None:
        return np.zeros((len(config_ids), 0))
    return np.vstack([encoder(c) for c in config_ids]) if config_ids else np.zeros((0, 0))


def filter_outliers(calls, tail_fraction: float = 0.01) -> pd.DataFrame:
    """Drop the ``ceil(tail_fraction * n)`` longest calls of every (config, repetition, method) group.

    Ties in duration drop the higher call index first.
    """
    if not 0 <= tail_fraction < 0.5:
        raise ValueError("tail_fraction must lie in [0, 0.5)")
    df = to_frame(calls, FINE_COLUMNS)
    if tail_fraction == 0 or df.empty:
        return df.reset_index(drop=True)
    keys = ["config_id", "repetition", "method"]
    group = df.groupby(keys, sort=False, observed=True).ngroup().to_numpy()
    duration = df["duration_ns"].to_numpy()
    order = np.lexsort((-df["call_index"].to_numpy(), -duration, group))
    sorted_groups = group[order]
    rank = np.arange(len(order)) - np.searchsorted(sorted_groups, sorted_groups, side="left")
    sizes = np.bincount(group)
    drop = np.ceil(tail_fraction * sizes - 1e-12).astype(np.int64)
    keep = np.empty(len(order), dtype=bool)
    keep[order] = rank >= drop[sorted_groups]
    return df[keep].reset_index(drop=True)


def log_histogram(durations_ns) -> np.ndarray:
    """Counts over 64 log-spaced bins (1 us to 100 s); out-of-range values clip to the end bins."""
    d = np.clip(np.asarray(durations_ns, dtype=float), HISTOGRAM_EDGES_NS[0], HISTOGRAM_EDGES_NS[-1])
    counts, _ = np.histogram(d, bins=HISTOGRAM_EDGES_NS)
    return counts


def summarize_fine(calls, config_ids: Sequence[str] | None = None, encoder=None,
                   methods: Sequence[str] | None = None, histograms: bool = False,
                   statistic: str = "mean") -> dict[str, MethodDataset]:
    """Sum call durations per repetition, then average over repetitions."""
    df = to_frame(calls, FINE_COLUMNS)
    if config_ids is None:
        config_ids = sorted(map(str, df["config_id"].unique()))
    if methods is None:
        methods = sorted(map(str, df["method"].unique()))
    per_rep = (df.groupby(["config_id", "repetition", "method"], observed=True)["duration_ns"]
               .agg(total_time_ns="sum", call_count="size").reset_index())
    per_rep = _plain_keys(per_rep)
    reps = _plain_keys(df[["config_id", "repetition"]].drop_duplicates())
    grid = (reps.merge(pd.DataFrame({"method": list(methods)}), how="cross")
            .set_index(["config_id", "repetition", "method"]))
    per_rep = (per_rep.set_index(["config_id", "repetition", "method"])
               .reindex(grid.index, fill_value=0).reset_index())
    per_config = (per_rep.groupby(["config_id", "method"], observed=True)[["total_time_ns", "call_count"]]
                  .agg(statistic).reset_index())
    tables = _dataset_frame(per_config, config_ids, methods, ["total_time_ns", "call_count"])
    X = _encode(config_ids, encoder)
    hist = _histograms(df, config_ids, methods) if histograms else {}
    return {m: MethodDataset(m, list(config_ids), X, t["total_time_ns"].to_numpy(float),
                             t["call_count"].to_numpy(float), hist.get(m))
            for m, t in tables.items()}


def _histograms(df: pd.DataFrame, config_ids, methods) -> dict[str, np.ndarray]:
    out = {m: np.zeros((len(config_ids), len(HISTOGRAM_EDGES_NS) - 1), dtype=np.int64)
           for m in methods}
    index = {c: i for i, c in enumerate(config_ids)}
    for (method, cfg), group in df.groupby(["method", "config_id"], observed=True):
        if method in out and cfg in index:
            out[method][index[cfg]] = log_histogram(group["duration_ns"].to_numpy())
    return out


def group_calls(calls) -> Iterable[tuple[tuple, np.ndarray]]:
    """Yield ((config_id, repetition, method), durations) per call group."""
    df = to_frame(calls, FINE_COLUMNS)
    for key, group in df.groupby(["config_id", "repetition", "method"], sort=True, observed=True):
        yield key, group["duration_ns"].to_numpy()


def tail_count(n: int, fraction: float = 0.01) -> int:
    return int(math.ceil(fraction * n - 1e-12))
