"""Measurement, configuration and context variance; profiled-vs-unprofiled correlation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .traces import (
    COARSE_COLUMNS,
    FINE_COLUMNS,
    MethodDataset,
    aggregate_repetitions,
    log_histogram,
    tail_count,
    to_frame,
)

MEASUREMENT_BOUND = 0.04


class DegenerateSeriesError(ValueError):
    """Too few points for the requested statistic."""


def cv(values) -> float:
    """Population standard deviation over the mean; an all-zero series has cv 0."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("cv of an empty series")
    mu = x.mean()
    if mu == 0:
        return 0.0
    return float(x.std() / mu)


@dataclass
class CvCurve:
    repetitions: list[int]
    cv: list[float]
    stable: bool

    @property
    def final(self) -> float:
        return self.cv[-1]


def measurement_cv_curve(rep_values, tolerance: float = 0.01, stable_from: int = 5) -> CvCurve:
    """cv after k = 2..K repetitions.

    ``rep_values`` is a length-K series, or a (configurations, K) matrix in which
    case the per-configuration curves are averaged. The curve is stable when every
    entry from ``stable_from`` on lies within ``tolerance`` of the final entry.
    """
    x = np.atleast_2d(np.asarray(rep_values, dtype=float))
    K = x.shape[1]
    if K < 2:
        raise ValueError("need at least two repetitions")
    ks = list(range(2, K + 1))
    curve = [float(np.mean([cv(row[:k]) for row in x])) for k in ks]
    start = min(stable_from, K)
    stable = all(abs(c - curve[-1]) < tolerance for k, c in zip(ks, curve) if k >= start)
    return CvCurve(ks, curve, stable)


def configuration_cv(dataset: MethodDataset) -> float:
    if len(dataset) < 2:
        raise DegenerateSeriesError("configuration cv needs at least two configurations")
    return cv(dataset.time_ns)


def classify_config_sensitive(value: float, bound: float = MEASUREMENT_BOUND) -> bool:
    return value > bound


@dataclass
class ContextStats:
    n_calls: int
    histogram: np.ndarray
    tail_share: float


def context_stats(durations, tail_fraction: float = 0.01) -> ContextStats:
    d = np.sort(np.asarray(durations, dtype=float))
    if d.size == 0:
        raise ValueError("context statistics need at least one call")
    total = d.sum()
    top = d[d.size - tail_count(d.size, tail_fraction):].sum()
    return ContextStats(int(d.size), log_histogram(d), float(top / total) if total > 0 else 0.0)


@dataclass
class CorrelationReport:
    pearson: float | None
    spearman: float | None
    n: int
    config_ids: list = field(default_factory=list)
    unprofiled: list = field(default_factory=list)
    profiled: list = field(default_factory=list)

    @property
    def defined(self) -> bool:
        return self.pearson is not None

    def to_dict(self, series: bool = True) -> dict:
        out = {"pearson": self.pearson, "spearman": self.spearman, "n": self.n}
        if series:
            out["pairs"] = [{"config_id": c, "unprofiled": u, "profiled": p}
                            for c, u, p in zip(self.config_ids, self.unprofiled, self.profiled)]
        return out


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0:
        return None
    return float(np.clip((a @ b) / denom, -1.0, 1.0))


def correlate(unprofiled: Mapping[str, float], profiled: Mapping[str, float]) -> CorrelationReport:
    """Pearson on raw values and Spearman on average ranks, paired by configuration id."""
    if set(unprofiled) != set(profiled):
        raise ValueError("both series must cover the same configurations")
    keys = sorted(unprofiled)
    if len(keys) < 3:
        raise DegenerateSeriesError("correlation needs at least three configurations")
    u = np.array([float(unprofiled[k]) for k in keys])
    p = np.array([float(profiled[k]) for k in keys])
    pearson = _pearson(u, p)
    spearman = _pearson(rankdata(u), rankdata(p)) if pearson is not None else None
    return CorrelationReport(pearson, spearman, len(keys), keys, u.tolist(), p.tolist())


# -- reports ------------------------------------------------------------------

@dataclass
class MethodVariance:
    method: str
    cv_measurement: float
    cv_configuration: float
    config_sensitive: bool
    tail_share: float | None = None
    histogram: list | None = None


@dataclass
class VarianceReport:
    bound: float
    methods: list[MethodVariance]

    def to_dict(self) -> dict:
        return {"format_version": 1, "measurement_bound": self.bound,
                "methods": [vars(m) for m in self.methods]}

    def ranking(self) -> list[tuple[str, float]]:
        """(method, cv_configuration) sorted descending, ties by method id."""
        return sorted(((m.method, m.cv_configuration) for m in self.methods),
                      key=lambda t: (-t[1], t[0]))


def per_repetition_totals(coarse) -> pd.DataFrame:
    """Table (method, config_id) x repetition of per-run totals; absent methods are 0."""
    df = to_frame(coarse, COARSE_COLUMNS)
    table = df.pivot_table(index=["method", "config_id"], columns="repetition",
                           values="total_time_ns", aggfunc="sum", fill_value=0, observed=True)
    full = pd.MultiIndex.from_product([sorted(df["method"].astype(str).unique()),
                                       sorted(df["config_id"].astype(str).unique())],
                                      names=["method", "config_id"])
    table.index = pd.MultiIndex.from_arrays([table.index.get_level_values(0).astype(str),
                                             table.index.get_level_values(1).astype(str)],
                                            names=["method", "config_id"])
    return table.reindex(full, fill_value=0).sort_index()


def variance_report(coarse, fine=None, bound: float = MEASUREMENT_BOUND,
                    tail_fraction: float = 0.01) -> VarianceReport:
    totals = per_repetition_totals(coarse)
    datasets = aggregate_repetitions(coarse)
    tails: dict[str, list[float]] = {}
    hists: dict[str, np.ndarray] = {}
    if fine is not None:
        fdf = to_frame(fine, FINE_COLUMNS)
        for (cfg, rep, method), group in fdf.groupby(["config_id", "repetition", "method"],
                                                     observed=True):
            stats = context_stats(group["duration_ns"].to_numpy(), tail_fraction)
            tails.setdefault(str(method), []).append(stats.tail_share)
            hists[str(method)] = hists.get(str(method), 0) + stats.histogram
    out = []
    for method in sorted(datasets):
        rows = totals.loc[method].to_numpy(dtype=float)
        cv_meas = float(np.mean([cv(r) for r in rows])) if rows.shape[1] >= 2 else 0.0
        ds = datasets[method]
        cv_conf = configuration_cv(ds) if len(ds) >= 2 else 0.0
        out.append(MethodVariance(
            method, cv_meas, cv_conf, classify_config_sensitive(cv_conf, bound),
            float(np.mean(tails[method])) if method in tails else None,
            hists[method].tolist() if method in hists else None))
    return VarianceReport(bound, out)
