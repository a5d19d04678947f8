"""Synthetic configurable systems with known per-method influence functions.

A ``GroundTruthSystem`` plays the part of a profiled program: every method has
an expected per-call time and an expected call count, both functions of the
configuration. Simulated runs add context variance (lognormal call durations
with Pareto-tailed contamination), multiplicative measurement noise per run,
and profiler overhead that may depend on option values.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .configspace import Configuration, ConfigurationSpace, OptionDef
from .traces import FINE_COLUMNS

# stream tags keep per-call, run-noise and blackbox draws independent
_CALLS, _COARSE_NOISE, _FINE_NOISE, _BLACKBOX_NOISE = 1, 2, 3, 4


@dataclass
class TermFunction:
    """``intercept + sum(linear) + sum(pairs) + sum(quadratic)`` over normalized option values.

    Binary options normalize to 0/1; numeric options to ``(v - min) / (max - min)``.
    """

    intercept: float
    linear: dict = field(default_factory=dict)  # option -> coefficient
    pairs: dict = field(default_factory=dict)  # "a*b" -> coefficient
    quadratic: dict = field(default_factory=dict)  # numeric option -> coefficient

    def evaluate(self, norm: Mapping[str, float]) -> float:
        v = self.intercept
        for o, c in self.linear.items():
            v += c * norm[o]
        for key, c in self.pairs.items():
            a, b = key.split("*")
            v += c * norm[a] * norm[b]
        for o, c in self.quadratic.items():
            v += c * norm[o] ** 2
        return v

    def options(self) -> set[str]:
        out = set(self.linear) | set(self.quadratic)
        for key in self.pairs:
            out |= set(key.split("*"))
        return out

    @property
    def is_constant(self) -> bool:
        return not (any(self.linear.values()) or any(self.pairs.values())
                    or any(self.quadratic.values()))


@dataclass
class MethodTruth:
    name: str
    time: TermFunction  # expected ns per call
    calls: TermFunction  # expected calls per run
    sigma: float = 0.0  # lognormal sigma of per-call durations
    contamination: float = 0.0  # probability a call is replaced by a Pareto outlier
    tail_exponent: float = 1.5
    sensitive: bool = False
    nonlinear: bool = False

    def __post_init__(self):
        if not 0.0 <= self.contamination <= 0.05:
            raise ValueError(f"{self.name}: contamination must lie in [0, 0.05]")
        if self.sigma < 0 or self.tail_exponent <= 0:
            raise ValueError(f"{self.name}: sigma must be >= 0 and tail_exponent > 0")

    @property
    def contaminated(self) -> bool:
        return self.contamination > 0


@dataclass
class OverheadModel:
    coarse_factor: float = 1.0
    fine_factor: float = 1.0
    slopes: dict = field(default_factory=dict)  # option -> slope on the raw option value

    def coarse(self, assignment: Mapping) -> float:
        f = self.coarse_factor
        for o, s in self.slopes.items():
            f *= 1.0 + s * float(assignment[o])
        return f


@dataclass
class GroundTruthSystem:
    space: ConfigurationSpace
    methods: list[MethodTruth]
    measurement_cv: float = 0.0
    overhead: OverheadModel = field(default_factory=OverheadModel)

    def __post_init__(self):
        known = set(self.space.names)
        if len({m.name for m in self.methods}) != len(self.methods):
            raise ValueError("method names must be unique")
        for m in self.methods:
            unknown = (m.time.options() | m.calls.options()) - known
            if unknown:
                raise ValueError(f"{m.name}: unknown option(s) {sorted(unknown)}")
            # normalized values lie in [0, 1], so this bounds the per-call time from below
            worst = m.time.intercept + sum(min(0.0, c) for part in (m.time.linear, m.time.pairs,
                                                                    m.time.quadratic)
                                           for c in part.values())
            if worst <= 0:
                raise ValueError(f"{m.name}: expected per-call time can reach {worst} <= 0")

    def method(self, name: str) -> MethodTruth:
        for m in self.methods:
            if m.name == name:
                return m
        raise KeyError(name)

    @property
    def method_names(self) -> list[str]:
        return [m.name for m in self.methods]

    def normalized(self, cfg: Configuration) -> dict:
        return {o.name: o.normalize(cfg[o.name]) for o in self.space.options}

    def per_call_time(self, method: str | MethodTruth, cfg: Configuration) -> float:
        m = self.method(method) if isinstance(method, str) else method
        return m.time.evaluate(self.normalized(cfg))

    def expected_calls(self, method: str | MethodTruth, cfg: Configuration) -> int:
        m = self.method(method) if isinstance(method, str) else method
        return max(0, int(math.floor(m.calls.evaluate(self.normalized(cfg)) + 0.5)))

    def sensitive_methods(self) -> list[str]:
        return [m.name for m in self.methods if m.sensitive]

    def hard_methods(self) -> list[str]:
        """Injected hard set: configuration-sensitive and (contaminated or nonlinear)."""
        return [m.name for m in self.methods if m.sensitive and (m.contaminated or m.nonlinear)]

    # -- serialization
    def to_dict(self) -> dict:
        return {"format_version": 1, "space": self.space.to_dict(),
                "measurement_cv": self.measurement_cv, "overhead": asdict(self.overhead),
                "methods": [asdict(m) for m in self.methods]}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GroundTruthSystem":
        methods = []
        for raw in doc["methods"]:
            raw = dict(raw)
            raw["time"] = TermFunction(**raw["time"])
            raw["calls"] = TermFunction(**raw["calls"])
            methods.append(MethodTruth(**raw))
        return cls(ConfigurationSpace.from_dict(doc["space"]), methods,
                   doc.get("measurement_cv", 0.0), OverheadModel(**doc.get("overhead", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "GroundTruthSystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


def true_perf(system: GroundTruthSystem, method: str, cfg: Configuration) -> float:
    """Noiseless expected total time of ``method`` in one run: per-call time times call count."""
    m = system.method(method)
    return system.per_call_time(m, cfg) * system.expected_calls(m, cfg)


def true_blackbox(system: GroundTruthSystem, cfg: Configuration) -> float:
    return sum(true_perf(system, m.name, cfg) for m in system.methods)


# -- generation ---------------------------------------------------------------

@dataclass
class GeneratorProfile:
    n_binary: int = 10
    n_numeric: int = 2
    numeric_values: tuple = (1, 2, 4, 8)
    constraints: tuple = ()
    n_methods: int = 60
    sensitive_fraction: float = 0.05
    n_contaminated: int = 3
    nonlinear_fraction: float = 0.0  # of the sensitive methods
    contamination_p: float = 0.01
    tail_exponent: float = 1.5
    sigma_range: tuple = (0.05, 0.3)
    time_range_ns: tuple = (2_000, 50_000)  # per-call intercept, log-uniform
    calls_range: tuple = (100, 5_000)  # log-uniform
    hot_time_range_ns: tuple = (12_000, 50_000)  # sensitive methods
    hot_calls_range: tuple = (1_000, 3_000)  # sensitive methods
    effect_range: tuple = (0.2, 1.0)  # binary effects relative to the intercept
    numeric_effect_range: tuple = (0.1, 0.3)
    nonlinear_effect_range: tuple = (20.0, 40.0)  # quadratic, relative to the intercept
    measurement_cv: float = 0.02
    coarse_overhead: float = 1.0
    fine_overhead: float = 1.0
    overhead_slopes: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GeneratorProfile":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown profile settings: {', '.join(sorted(unknown))}")
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        return cls(**doc)


def _log_uniform(rng, lo, hi) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def method_name(i: int) -> str:
    return f"app.Module{i % 7}::method{i:03d}()"


def gen_system(profile: GeneratorProfile, seed: int) -> GroundTruthSystem:
    """Generate a system; a fixed count of methods depend on options, the rest are constant.

    Contaminated methods are taken from the sensitive methods first.
    Sensitive methods depend on one or two binary options (plus an optional
    numeric term); nonlinear ones add a strong quadratic numeric response.
    """
    rng = np.random.default_rng(seed)
    options = [OptionDef(f"o{i}") for i in range(profile.n_binary)]
    options += [OptionDef.numeric(f"n{i}", list(profile.numeric_values))
                for i in range(profile.n_numeric)]
    space = ConfigurationSpace(options, list(profile.constraints))
    binary = [o.name for o in space.binary_options]
    numeric = [o.name for o in space.numeric_options]

    n = profile.n_methods
    n_sensitive = int(math.floor(profile.sensitive_fraction * n + 0.5))
    order = rng.permutation(n)
    sensitive = set(order[:n_sensitive].tolist())
    n_nonlinear = int(math.floor(profile.nonlinear_fraction * n_sensitive + 0.5)) if numeric else 0
    nonlinear = set(order[:n_nonlinear].tolist())
    contaminated = set(order[n_nonlinear:][:profile.n_contaminated].tolist())
    if len(contaminated) < profile.n_contaminated:
        contaminated |= set(order[:profile.n_contaminated - len(contaminated)].tolist())

    methods = []
    for i in range(n):
        hot = i in sensitive
        base = round(_log_uniform(rng, *(profile.hot_time_range_ns if hot else profile.time_range_ns)))
        sigma = float(rng.uniform(*profile.sigma_range))
        time = TermFunction(float(base))
        if hot:
            calls = TermFunction(float(round(_log_uniform(rng, *profile.hot_calls_range))))
            k = int(rng.integers(1, 3)) if binary else 0
            relevant = sorted(rng.choice(binary, size=min(k, len(binary)), replace=False).tolist())
            for o in relevant:
                time.linear[o] = float(round(base * rng.uniform(*profile.effect_range)))
            if len(relevant) == 2 and rng.random() < 0.5:
                time.pairs["*".join(relevant)] = float(round(base * rng.uniform(*profile.effect_range)))
            if relevant and rng.random() < 0.5:
                calls.linear[relevant[0]] = float(round(calls.intercept * rng.uniform(*profile.effect_range)))
            if numeric and (rng.random() < 0.5 or not relevant):
                o = str(rng.choice(numeric))
                time.linear[o] = float(round(base * rng.uniform(*profile.numeric_effect_range)))
            if i in nonlinear:
                o = numeric[0]
                time.quadratic[o] = float(round(base * rng.uniform(*profile.nonlinear_effect_range)))
        else:
            calls = TermFunction(float(round(_log_uniform(rng, *profile.calls_range))))
        methods.append(MethodTruth(
            method_name(i), time, calls, sigma,
            profile.contamination_p if i in contaminated else 0.0,
            profile.tail_exponent, i in sensitive, i in nonlinear))
    overhead = OverheadModel(profile.coarse_overhead, profile.fine_overhead,
                             dict(profile.overhead_slopes))
    return GroundTruthSystem(space, methods, profile.measurement_cv, overhead)


# -- simulation ---------------------------------------------------------------

def _cfg_words(cfg: Configuration) -> list[int]:
    h = int(cfg.id, 16)
    return [h >> 32, h & 0xFFFFFFFF]


def stream(seed: int, tag: int, cfg: Configuration, repetition: int, method_index: int = 0):
    """Random generator for one (tag, method, configuration, repetition) stream."""
    ss = np.random.SeedSequence([int(seed), tag, method_index, *_cfg_words(cfg), int(repetition)])
    return np.random.Generator(np.random.PCG64(ss))


def _run_noise(system: GroundTruthSystem, seed: int, tag: int, cfg: Configuration, rep: int) -> float:
    nu = system.measurement_cv
    if nu <= 0:
        return 1.0
    s = math.sqrt(math.log1p(nu * nu))
    return float(math.exp(stream(seed, tag, cfg, rep).normal() * s - 0.5 * s * s))


def call_durations(system: GroundTruthSystem, index: int, cfg: Configuration, repetition: int,
                   seed: int) -> np.ndarray:
    """Unrounded per-call durations (ns) of method ``index`` in one run."""
    m = system.methods[index]
    norm = system.normalized(cfg)
    expected = m.time.evaluate(norm)
    n = max(0, int(math.floor(m.calls.evaluate(norm) + 0.5)))
    if n == 0:
        return np.zeros(0)
    if m.sigma <= 0 and m.contamination <= 0:
        return np.full(n, expected)
    rng = stream(seed, _CALLS, cfg, repetition, index)
    d = np.full(n, expected)
    if m.sigma > 0:
        d = expected * np.exp(m.sigma * rng.standard_normal(n) - 0.5 * m.sigma ** 2)
    if m.contamination > 0:
        hit = rng.random(n) < m.contamination
        k = int(hit.sum())
        if k:
            d[hit] = 10.0 * expected * (1.0 + rng.pareto(m.tail_exponent, size=k))
    return d


def _configs(cfgs) -> list[Configuration]:
    return [cfgs] if isinstance(cfgs, Configuration) else list(cfgs)


def simulate_coarse(system: GroundTruthSystem, cfgs, repetitions: int, seed: int) -> pd.DataFrame:
    """Per-run method totals as a coarse profiler would report them."""
    rows_cfg, rows_rep, rows_m, totals, counts = [], [], [], [], []
    for cfg in _configs(cfgs):
        factor = system.overhead.coarse(cfg.assignment)
        for rep in range(repetitions):
            noise = _run_noise(system, seed, _COARSE_NOISE, cfg, rep)
            for i, m in enumerate(system.methods):
                d = np.rint(call_durations(system, i, cfg, rep, seed))
                if d.size == 0:
                    continue
                rows_cfg.append(cfg.id)
                rows_rep.append(rep)
                rows_m.append(m.name)
                totals.append(int(round(float(d.sum()) * factor * noise)))
                counts.append(d.size)
    return pd.DataFrame({"config_id": rows_cfg, "repetition": np.array(rows_rep, dtype=np.int64),
                         "method": rows_m, "total_time_ns": np.array(totals, dtype=np.int64),
                         "call_count": np.array(counts, dtype=np.int64)})


def simulate_fine(system: GroundTruthSystem, cfgs, methods: Sequence[str] | None,
                  repetitions: int, seed: int) -> pd.DataFrame:
    """Per-call durations of the selected methods, as an instrumenting profiler would log them."""
    names = system.method_names
    wanted = names if methods is None else list(methods)
    index = {n: i for i, n in enumerate(names)}
    cfgs = _configs(cfgs)
    if len({c.id for c in cfgs}) != len(cfgs):
        raise ValueError("duplicate configurations passed to the simulator")
    cfg_codes, rep_col, m_codes, call_idx, durs = [], [], [], [], []
    for ci, cfg in enumerate(cfgs):
        for rep in range(repetitions):
            scale = system.overhead.fine_factor * _run_noise(system, seed, _FINE_NOISE, cfg, rep)
            for mi, name in enumerate(wanted):
                d = np.rint(np.rint(call_durations(system, index[name], cfg, rep, seed)) * scale)
                n = d.size
                if n == 0:
                    continue
                cfg_codes.append(np.full(n, ci, dtype=np.int32))
                rep_col.append(np.full(n, rep, dtype=np.int32))
                m_codes.append(np.full(n, mi, dtype=np.int32))
                call_idx.append(np.arange(n, dtype=np.int64))
                durs.append(d.astype(np.int64))
    if not durs:
        return pd.DataFrame({c: pd.Series(dtype=object if c in ("config_id", "method") else np.int64)
                             for c in FINE_COLUMNS})
    return pd.DataFrame({
        "config_id": _categorical(cfg_codes, [c.id for c in cfgs]),
        "repetition": np.concatenate(rep_col).astype(np.int64),
        "method": _categorical(m_codes, list(wanted)),
        "call_index": np.concatenate(call_idx),
        "duration_ns": np.concatenate(durs),
    })


def _categorical(codes: list, labels: list) -> pd.Categorical:
    # categorical keys keep million-row call traces compact
    return pd.Categorical.from_codes(np.concatenate(codes), categories=labels)


def simulate_blackbox(system: GroundTruthSystem, cfgs, repetitions: int, seed: int) -> pd.DataFrame:
    """Unprofiled end-to-end run times: summed call durations without overhead."""
    rows_cfg, rows_rep, totals = [], [], []
    for cfg in _configs(cfgs):
        for rep in range(repetitions):
            noise = _run_noise(system, seed, _BLACKBOX_NOISE, cfg, rep)
            total = sum(float(np.rint(call_durations(system, i, cfg, rep, seed)).sum())
                        for i in range(len(system.methods)))
            rows_cfg.append(cfg.id)
            rows_rep.append(rep)
            totals.append(int(round(total * noise)))
    return pd.DataFrame({"config_id": rows_cfg, "repetition": np.array(rows_rep, dtype=np.int64),
                         "total_time_ns": np.array(totals, dtype=np.int64)})
