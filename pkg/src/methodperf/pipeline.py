"""Two-step white-box modeling: coarse learning, filtering, fine re-learning, influence tracing."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .analysis import MEASUREMENT_BOUND, CorrelationReport, correlate
from .configspace import Configuration, ConfigurationSpace
from .learning import (
    PerfModel,
    RandomForest,
    TreeHyperparams,
    fit_cart,
    fit_forest,
    importance,
    mape,
    term_key,
    zero_actuals,
)
from .sampling import SampleSet
from .traces import (
    COARSE_COLUMNS,
    FINE_COLUMNS,
    MethodDataset,
    aggregate_repetitions,
    filter_outliers,
    summarize_fine,
    to_frame,
)

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


class MissingConfigurationError(ValueError):
    def __init__(self, missing: Sequence[str], what: str = "traces"):
        super().__init__(f"{what} do not cover configuration(s): {', '.join(missing)}")
        self.missing = list(missing)


@dataclass(frozen=True)
class FilterParams:
    alpha: float = 5.0  # percent
    beta: float = 10_000_000.0  # ns
    gamma: float = 0.01

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"alpha_percent": self.alpha, "beta_ns": self.beta, "gamma": self.gamma}


# -- performance aggregates ---------------------------------------------------

def black_box_perf(times: Mapping[str, float] | Sequence[float]) -> float:
    """System time of one configuration: the sum over all methods."""
    values = times.values() if isinstance(times, Mapping) else times
    return float(sum(values))


def blackbox_series(datasets: Mapping[str, MethodDataset]) -> np.ndarray:
    methods = sorted(datasets)
    if not methods:
        return np.zeros(0)
    return np.sum([datasets[m].time_ns for m in methods], axis=0)


def abs_perf(dataset: MethodDataset) -> float:
    if len(dataset) == 0:
        raise ValueError("absPerf needs a non-empty sample set")
    return float(np.mean(dataset.time_ns))


def rel_perf(dataset: MethodDataset, blackbox: np.ndarray) -> float:
    bb = np.asarray(blackbox, dtype=float)
    keep = bb > 0
    if not keep.any():
        return 0.0
    return float(np.mean(dataset.time_ns[keep] / bb[keep]))


# -- filtering ----------------------------------------------------------------

def triggers(model: PerfModel, params: FilterParams) -> dict[str, bool]:
    err = model.test_mape is not None and model.test_mape >= params.alpha
    return {"err": bool(err), "abs": bool(model.abs_perf >= params.beta),
            "rel": bool(model.rel_perf >= params.gamma)}


def phi(model: PerfModel, params: FilterParams) -> bool:
    t = triggers(model, params)
    return t["err"] and (t["abs"] or t["rel"])


@dataclass
class HardSet:
    methods: list[str]
    triggers: dict[str, dict] = field(default_factory=dict)

    def __contains__(self, method: str) -> bool:
        return method in self.methods

    def __len__(self) -> int:
        return len(self.methods)

    def to_dict(self) -> dict:
        return {"methods": list(self.methods),
                "triggers": {m: self.triggers[m] for m in sorted(self.triggers)}}


def select_hard(models: Mapping[str, PerfModel], params: FilterParams = FilterParams()) -> HardSet:
    """Methods whose model error reaches alpha and that run long enough (beta) or matter enough (gamma)."""
    fired = {m: triggers(models[m], params) for m in sorted(models)}
    chosen = [m for m in sorted(models) if phi(models[m], params)]
    chosen.sort(key=lambda m: (-models[m].test_mape, m))
    return HardSet(chosen, {m: fired[m] for m in chosen})


# -- learning -----------------------------------------------------------------

def method_seed(seed: int, method: str) -> int:
    digest = hashlib.blake2b(f"{int(seed)}\x00{method}".encode(), digest_size=4).digest()
    return int.from_bytes(digest, "big")


def _fit_one(method, learn: MethodDataset, test: MethodDataset, blackbox, hp, seed, phase):
    tree = fit_cart(learn, hp, method_seed(seed, method))
    train_err = mape(learn.time_ns, tree.predict(learn.X)) if len(learn) else None
    test_err = mape(test.time_ns, tree.predict(test.X)) if len(test) else None
    return PerfModel(method, tree, train_err, test_err, abs_perf(learn), rel_perf(learn, blackbox),
                     phase, zero_actuals(test.time_ns))


def learn_models(learn: Mapping[str, MethodDataset], test: Mapping[str, MethodDataset],
                 hp: TreeHyperparams = TreeHyperparams(), seed: int = 0, phase: int = 1,
                 blackbox: np.ndarray | None = None, n_jobs: int = 1) -> dict[str, PerfModel]:
    """Fit one CART per method on ``learn`` and score it on ``test``."""
    methods = sorted(learn)
    if blackbox is None:
        blackbox = blackbox_series(learn)
    jobs = [(m, learn[m], test[m], blackbox, hp, seed, phase) for m in methods]
    if n_jobs in (None, 1):
        fitted = [_fit_one(*j) for j in jobs]
    else:
        fitted = Parallel(n_jobs=n_jobs)(delayed(_fit_one)(*j) for j in jobs)
    return {m.method: m for m in fitted}


def accuracy_fraction(models: Mapping[str, PerfModel], alpha: float,
                      methods: Sequence[str] | None = None) -> float | None:
    names = sorted(models) if methods is None else list(methods)
    scored = [models[m].test_mape for m in names if models[m].test_mape is not None]
    if not scored:
        return None
    return float(np.mean([e < alpha for e in scored]))


def _encoder(space: ConfigurationSpace, configs: Sequence[Configuration]):
    vectors = {c.id: space.encode(c) for c in configs}
    return vectors.__getitem__


def check_coverage(df: pd.DataFrame, ids: Sequence[str], what: str) -> None:
    present = set(map(str, df["config_id"].unique()))
    missing = [c for c in ids if c not in present]
    if missing:
        raise MissingConfigurationError(missing, what)


@dataclass
class PhaseResult:
    models: dict[str, PerfModel]
    learn: dict[str, MethodDataset]
    test: dict[str, MethodDataset]
    fraction_accurate: float | None
    errors: dict[str, str] = field(default_factory=dict)


def run_phase1(space: ConfigurationSpace, learn_set: SampleSet, coarse, test_set: SampleSet,
               hp: TreeHyperparams = TreeHyperparams(), alpha: float = 5.0, seed: int = 0,
               statistic: str = "mean", n_jobs: int = 1) -> PhaseResult:
    """Learn one model per method from repetition-averaged coarse traces."""
    df = to_frame(coarse, COARSE_COLUMNS)
    check_coverage(df, learn_set.ids, "coarse traces")
    check_coverage(df, test_set.ids, "coarse traces")
    enc = _encoder(space, list(learn_set) + list(test_set))
    learn = aggregate_repetitions(df, learn_set.ids, enc, statistic)
    test = aggregate_repetitions(df, test_set.ids, enc, statistic)
    for m in learn:
        test.setdefault(m, MethodDataset(m, test_set.ids, np.vstack([enc(c) for c in test_set.ids]),
                                         np.zeros(len(test_set)), np.zeros(len(test_set))))
    models = learn_models(learn, test, hp, seed, 1, n_jobs=n_jobs)
    return PhaseResult(models, learn, test, accuracy_fraction(models, alpha))


def run_phase2(space: ConfigurationSpace, hard: HardSet, fine, learn_set: SampleSet,
               test_set: SampleSet, hp: TreeHyperparams = TreeHyperparams(), alpha: float = 5.0,
               seed: int = 0, tail_fraction: float = 0.01, blackbox: np.ndarray | None = None,
               statistic: str = "mean", n_jobs: int = 1) -> PhaseResult:
    """Re-learn the hard methods from outlier-filtered per-call traces."""
    if not hard.methods:
        return PhaseResult({}, {}, {}, None)
    df = to_frame(fine, FINE_COLUMNS)
    present = set(map(str, df["method"].unique())) if len(df) else set()
    errors = {m: "method absent from fine traces" for m in hard.methods if m not in present}
    wanted = [m for m in hard.methods if m in present]
    if not wanted:
        return PhaseResult({}, {}, {}, None, errors)
    check_coverage(df, learn_set.ids, "fine traces")
    check_coverage(df, test_set.ids, "fine traces")
    df = df[df["method"].isin(wanted)]
    kept = filter_outliers(df, tail_fraction)
    enc = _encoder(space, list(learn_set) + list(test_set))
    learn = summarize_fine(kept[kept["config_id"].isin(learn_set.ids)], learn_set.ids, enc,
                           wanted, statistic=statistic)
    test = summarize_fine(kept[kept["config_id"].isin(test_set.ids)], test_set.ids, enc,
                          wanted, statistic=statistic)
    if blackbox is None:
        blackbox = blackbox_series(learn)
    models = learn_models(learn, test, hp, seed, 2, blackbox=blackbox, n_jobs=n_jobs)
    return PhaseResult(models, learn, test, accuracy_fraction(models, alpha, wanted), errors)


# -- influence tracing ---------------------------------------------------------

@dataclass
class TermTrace:
    term: tuple
    system_score: float
    methods: list[tuple[str, float]]  # (method, effect ns), descending

    def to_dict(self) -> dict:
        return {"term": term_key(self.term), "system_score": self.system_score,
                "methods": [{"method": m, "effect_ns": e} for m, e in self.methods]}


@dataclass
class InfluenceTrace:
    relevant_methods: list[str]
    coverage: float
    terms: list[TermTrace]
    system_importance: list = field(default_factory=list)

    def term(self, term: tuple) -> TermTrace:
        for t in self.terms:
            if set(t.term) == set(term):
                return t
        raise KeyError(term_key(term))

    def to_dict(self) -> dict:
        return {"coverage": self.coverage, "relevant_methods": list(self.relevant_methods),
                "terms": [t.to_dict() for t in self.terms],
                "system_importance": [{"term": term_key(t), "score": s}
                                      for t, s in self.system_importance]}


def coverage_set(datasets: Mapping[str, MethodDataset], coverage: float = 0.8) -> list[str]:
    """Smallest prefix of methods by descending absPerf whose sum reaches ``coverage`` of the system time."""
    ranked = sorted(((abs_perf(d), m) for m, d in datasets.items()), key=lambda t: (-t[0], t[1]))
    target = coverage * float(np.mean(blackbox_series(datasets)))
    out, acc = [], 0.0
    for value, m in ranked:
        if acc >= target and out:
            break
        out.append(m)
        acc += value
    return out


def _term_score(table: list, term: tuple) -> float:
    key = set(term)
    for t, s in table:
        if set(t) == key and len(t) == len(term):
            return s
    return 0.0


def trace_influence(system_model, method_models: Mapping[str, object],
                    datasets: Mapping[str, MethodDataset], feature_names: Sequence[str],
                    top_k: int = 2, coverage: float = 0.8,
                    measurement_bound: float = MEASUREMENT_BOUND,
                    error_bound: Mapping[str, float] | float | None = None,
                    terms: Sequence[tuple] | None = None, effect: str = "spread") -> InfluenceTrace:
    """Attribute the most influential system-level terms to individual methods.

    A method's effect for a term is its per-method importance of the term
    times a scale in ns: the standard deviation of its time over the sample
    (``effect="spread"``) or its absPerf (``effect="abs"``). It is listed when
    the effect exceeds the error bound, by default ``measurement_bound * absPerf``.
    """
    if effect not in ("spread", "abs"):
        raise ValueError(f"unknown effect scale {effect!r}")
    system_table = importance(system_model, feature_names)
    if terms is None:
        chosen = [t for t, s in system_table if s > 0][:top_k]
    else:
        chosen = [tuple(t) for t in terms]
    relevant = coverage_set(datasets, coverage)
    tables = {m: importance(method_models[m], feature_names) for m in relevant if m in method_models}
    traces = []
    for term in chosen:
        hits = []
        for m in relevant:
            if m not in tables:
                continue
            d = datasets[m]
            scale = float(np.std(d.time_ns)) if effect == "spread" else abs_perf(d)
            value = _term_score(tables[m], term) * scale
            if error_bound is None:
                bound = measurement_bound * abs_perf(d)
            elif isinstance(error_bound, Mapping):
                bound = error_bound[m]
            else:
                bound = float(error_bound)
            if value > bound:
                hits.append((m, value))
        hits.sort(key=lambda t: (-t[1], t[0]))
        traces.append(TermTrace(term, _term_score(system_table, term), hits))
    return InfluenceTrace(relevant, coverage, traces, system_table)


def fit_influence_models(datasets: Mapping[str, MethodDataset], n_trees: int = 100,
                         hp: TreeHyperparams = TreeHyperparams(), seed: int = 0,
                         methods: Sequence[str] | None = None,
                         n_jobs: int = 1) -> tuple[RandomForest, dict[str, RandomForest]]:
    """System-level forest on blackBoxPerf plus one forest per method."""
    names = sorted(datasets) if methods is None else list(methods)
    any_ds = datasets[sorted(datasets)[0]]
    system_ds = MethodDataset("<system>", any_ds.config_ids, any_ds.X, blackbox_series(datasets),
                              np.zeros(len(any_ds)))
    system = fit_forest(system_ds, n_trees, hp, method_seed(seed, "<system>"))

    def one(m):
        return m, fit_forest(datasets[m], n_trees, hp, method_seed(seed, m))

    if n_jobs in (None, 1):
        fitted = [one(m) for m in names]
    else:
        fitted = Parallel(n_jobs=n_jobs)(delayed(one)(m) for m in names)
    return system, dict(fitted)


# -- overhead study ------------------------------------------------------------

@dataclass
class OverheadReport:
    overall: CorrelationReport
    group_by: str | None = None
    per_level: dict = field(default_factory=dict)  # level -> CorrelationReport | None

    def to_dict(self) -> dict:
        return {"global": self.overall.to_dict(series=False), "group_by": self.group_by,
                "per_level": {str(k): (None if v is None else v.to_dict(series=False))
                              for k, v in self.per_level.items()}}


def overhead_study(unprofiled: Mapping[str, float], profiled: Mapping[str, float],
                   configs: Sequence[Configuration] = (), group_by: str | None = None) -> OverheadReport:
    """Global and per-level correlation between unprofiled and profiled system times."""
    overall = correlate(unprofiled, profiled)
    if group_by is None:
        return OverheadReport(overall)
    levels: dict = {}
    for cfg in configs:
        if cfg.id in unprofiled:
            levels.setdefault(cfg[group_by], []).append(cfg.id)
    per_level = {}
    for level in sorted(levels):
        ids = levels[level]
        if len(ids) < 3:
            per_level[level] = None
            continue
        per_level[level] = correlate({i: unprofiled[i] for i in ids}, {i: profiled[i] for i in ids})
    return OverheadReport(overall, group_by, per_level)


# -- end-to-end ------------------------------------------------------------------

@dataclass
class PipelineReport:
    params: FilterParams
    hyperparams: TreeHyperparams
    seed: int
    phase1: PhaseResult
    hard: HardSet
    phase2: PhaseResult
    correlations: dict = field(default_factory=dict)
    influence: InfluenceTrace | None = None

    def final_models(self) -> dict[str, PerfModel]:
        out = dict(self.phase1.models)
        out.update(self.phase2.models)
        return out

    def residual_methods(self) -> list[str]:
        return [m for m in self.hard.methods if m in self.phase2.models
                and (self.phase2.models[m].test_mape or 0.0) >= self.params.alpha]

    def summary(self) -> dict:
        return {
            "methods": len(self.phase1.models),
            "hard_methods": len(self.hard),
            "phase1_fraction_under_alpha": self.phase1.fraction_accurate,
            "phase2_fraction_under_alpha": self.phase2.fraction_accurate,
            "residual_methods": self.residual_methods(),
        }

    def to_dict(self, include_models: bool = False) -> dict:
        methods = []
        for m in sorted(self.phase1.models):
            p1 = self.phase1.models[m]
            entry = {"method": m, "phase1_test_mape": p1.test_mape, "phase1_train_mape": p1.train_mape,
                     "abs_perf_ns": p1.abs_perf, "rel_perf": p1.rel_perf, "hard": m in self.hard,
                     "zero_test_rows": p1.zero_test_rows}
            if m in self.phase2.models:
                p2 = self.phase2.models[m]
                entry["phase2_test_mape"] = p2.test_mape
                entry["phase2_train_mape"] = p2.train_mape
                entry["phase2_worse"] = (p2.test_mape is not None and p1.test_mape is not None
                                         and p2.test_mape > p1.test_mape)
            if m in self.phase2.errors:
                entry["phase2_error"] = self.phase2.errors[m]
            if include_models:
                entry["model"] = self.final_models()[m].predictor.to_dict()
            methods.append(entry)
        out = {"format_version": REPORT_VERSION, "filter": self.params.to_dict(),
               "hyperparams": vars(self.hyperparams).copy(), "seed": self.seed,
               "summary": self.summary(), "hard_set": self.hard.to_dict(), "methods": methods,
               "correlations": {k: v.to_dict() for k, v in sorted(self.correlations.items())}}
        if self.influence is not None:
            out["influence"] = self.influence.to_dict()
        return out


def run_pipeline(space: ConfigurationSpace, learn_set: SampleSet, test_set: SampleSet, coarse,
                 fine: pd.DataFrame | Callable[[list[str]], pd.DataFrame] | None,
                 params: FilterParams = FilterParams(), hp: TreeHyperparams = TreeHyperparams(),
                 seed: int = 0, tail_fraction: float = 0.01, blackbox=None,
                 statistic: str = "mean", n_jobs: int = 1) -> PipelineReport:
    """Coarse learning, filtering and fine re-learning in one call.

    ``fine`` is either a per-call trace table or a callable that produces one
    for the selected hard methods (the second profiling run). ``blackbox``
    optionally maps config ids to unprofiled system times for correlation.
    """
    p1 = run_phase1(space, learn_set, coarse, test_set, hp, params.alpha, seed, statistic, n_jobs)
    hard = select_hard(p1.models, params)
    logger.info("phase 1: %d methods, %d selected for fine profiling", len(p1.models), len(hard))
    if hard.methods and fine is not None:
        fine_df = fine(list(hard.methods)) if callable(fine) else fine
        p2 = run_phase2(space, hard, fine_df, learn_set, test_set, hp, params.alpha, seed,
                        tail_fraction, blackbox_series(p1.learn), statistic, n_jobs)
    else:
        p2 = PhaseResult({}, {}, {}, None,
                         {m: "no fine traces supplied" for m in hard.methods} if fine is None else {})
    report = PipelineReport(params, hp, seed, p1, hard, p2)
    if blackbox is not None:
        report.correlations = blackbox_correlations(blackbox, p1, report.final_models(), learn_set)
    return report


def blackbox_correlations(blackbox: Mapping[str, float], p1: PhaseResult,
                          models: Mapping[str, PerfModel], learn_set: SampleSet) -> dict:
    """Unprofiled system time against profiled aggregates (measured and predicted)."""
    ids = [c for c in learn_set.ids if c in blackbox]
    if len(ids) < 3:
        return {}
    measured = blackbox_series(p1.learn)
    index = {c: i for i, c in enumerate(p1.learn[sorted(p1.learn)[0]].config_ids)}
    X = np.vstack([p1.learn[sorted(p1.learn)[0]].X[index[c]] for c in ids])
    predicted = np.sum([models[m].predict(X) for m in sorted(models)], axis=0)
    bb = {c: float(blackbox[c]) for c in ids}
    return {
        "bb_vs_profiled": correlate(bb, {c: float(measured[index[c]]) for c in ids}),
        "bb_vs_whitebox": correlate(bb, {c: float(p) for c, p in zip(ids, predicted)}),
    }
