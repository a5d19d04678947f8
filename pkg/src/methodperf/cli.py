"""Command-line entry point: ``methodperf <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .analysis import DegenerateSeriesError, variance_report
from .configspace import ConfigSpaceError, ConfigurationSpace, UnsatisfiableError
from .learning import PerfModel, TreeHyperparams, importance, parse_term
from .pipeline import (
    FilterParams,
    HardSet,
    MissingConfigurationError,
    blackbox_series,
    check_coverage,
    coverage_set,
    fit_influence_models,
    overhead_study,
    run_phase1,
    run_phase2,
    run_pipeline,
    select_hard,
    trace_influence,
)
from .sampling import (
    ExhaustedSpaceError,
    SampleSet,
    SamplingError,
    build_learning_set,
    parse_design,
    sample_random,
)
from .synthsys import (
    GeneratorProfile,
    GroundTruthSystem,
    gen_system,
    simulate_blackbox,
    simulate_coarse,
    simulate_fine,
)
from .traces import (
    HISTOGRAM_EDGES_NS,
    TraceFormatError,
    aggregate_repetitions,
    read_blackbox,
    read_coarse,
    read_fine,
    write_blackbox,
    write_coarse,
    write_fine,
)

log = logging.getLogger("methodperf")

FORMAT_VERSION = 1
JOBS_ENV = "METHODPERF_JOBS"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3

# parameters that never influence output bytes stay out of the manifest
_UNRECORDED = {"func", "out", "outdir", "jobs", "verbose", "ranking_csv", "histogram_dir",
               "mape_csv", "csv"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- io helpers ---------------------------------------------------------------

def _digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dump(doc, path: str | Path) -> None:
    text = json.dumps(doc, indent=2, allow_nan=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _ms(ns) -> str:
    return "" if ns is None else f"{ns / 1e6:.3f}"


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _load_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None


_INPUT_KEYS = ("space", "samples", "test", "exclude", "coarse", "fine", "blackbox", "system",
               "profile", "models", "input", "fine_from")


def _inputs(args) -> list[str]:
    paths = []
    for key in _INPUT_KEYS:
        value = getattr(args, key, None)
        if value is None:
            continue
        paths.extend(value if isinstance(value, list) else [value])
    return paths


def write_manifest(args, outputs: Sequence[str | Path]) -> None:
    """Sidecar ``<output>.manifest.json`` next to every output file."""
    params = {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}
    doc = {
        "format_version": FORMAT_VERSION,
        "tool": "methodperf",
        "tool_version": __version__,
        "subcommand": args.command,
        "parameters": params,
        "inputs": {p: _digest(p) for p in _inputs(args)},
        "seed": getattr(args, "seed", None),
    }
    for out in outputs:
        _dump(doc, f"{out}.manifest.json")


def _space(path) -> ConfigurationSpace:
    return ConfigurationSpace.load(path)


def _samples(path, space) -> SampleSet:
    return SampleSet.load(path, space)


def _hyperparams(args) -> TreeHyperparams:
    return TreeHyperparams(min_samples_leaf=args.min_samples_leaf, max_depth=args.max_depth)


def _filter_params(args) -> FilterParams:
    return FilterParams(args.alpha, args.beta, args.gamma)


def _blackbox_means(path) -> dict[str, float]:
    df = read_blackbox(path)
    return df.groupby("config_id", observed=True)["total_time_ns"].mean().astype(float).to_dict()


# -- subcommands ----------------------------------------------------------------

def cmd_sample(args) -> int:
    space = _space(args.space)
    if args.strategy == "random":
        if args.seed is None:
            raise UsageError("--seed is required for random sampling")
        if args.k is None:
            raise UsageError("--k is required for random sampling")
        exclude = []
        for path in args.exclude or []:
            exclude.extend(_samples(path, space))
        result = sample_random(space, args.k, args.seed, exclude)
    else:
        design = None if args.design == "none" else parse_design(args.design)
        result = build_learning_set(space, args.strategy, design, args.max_samples)
    _dump(result.to_dict(), args.out)
    write_manifest(args, [args.out])
    log.info("%d configurations written to %s", len(result), args.out)
    return EXIT_OK


def _load_system(args) -> GroundTruthSystem:
    if args.system:
        return GroundTruthSystem.load(args.system)
    if args.profile:
        profile = GeneratorProfile.from_dict(_load_json(args.profile))
    else:
        profile = GeneratorProfile()
    return gen_system(profile, args.seed)


def _fine_methods(args, system: GroundTruthSystem) -> list[str] | None:
    if args.fine_from:
        doc = _load_json(args.fine_from)
        hard = doc.get("hard_set", doc)
        return list(hard["methods"])
    if args.fine_methods == "all":
        return system.method_names
    if args.fine_methods:
        names = [m for m in args.fine_methods.split(";") if m]
        unknown = [m for m in names if m not in system.method_names]
        if unknown:
            raise TraceFormatError(f"unknown method(s): {', '.join(unknown)}")
        return names
    return None


def cmd_simulate(args) -> int:
    system = _load_system(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = [outdir / "space.json", outdir / "truth.json"]
    system.space.save(outputs[0])
    system.save(outputs[1])
    cfgs = []
    seen = set()
    for path in args.samples or []:
        for cfg in _samples(path, system.space):
            if cfg.id not in seen:
                seen.add(cfg.id)
                cfgs.append(cfg)
    if cfgs:
        write_coarse(simulate_coarse(system, cfgs, args.repetitions, args.seed), outdir / "coarse.csv")
        write_blackbox(simulate_blackbox(system, cfgs, args.repetitions, args.seed),
                       outdir / "blackbox.csv")
        outputs += [outdir / "coarse.csv", outdir / "blackbox.csv"]
        methods = _fine_methods(args, system)
        if methods:
            write_fine(simulate_fine(system, cfgs, methods, args.repetitions, args.seed),
                       outdir / "fine.csv")
            outputs.append(outdir / "fine.csv")
    write_manifest(args, outputs)
    log.info("simulated %d configurations into %s", len(cfgs), outdir)
    return EXIT_OK


def cmd_variance(args) -> int:
    coarse = read_coarse(args.coarse)
    fine = read_fine(args.fine) if args.fine else None
    report = variance_report(coarse, fine, args.bound, args.tail_fraction)
    doc = report.to_dict()
    doc["ranking"] = [{"method": m, "cv_configuration": v} for m, v in report.ranking()]
    if args.blackbox:
        unprofiled = _blackbox_means(args.blackbox)
        datasets = aggregate_repetitions(coarse)
        ids = datasets[sorted(datasets)[0]].config_ids if datasets else []
        profiled = dict(zip(ids, blackbox_series(datasets).tolist()))
        missing = sorted(set(profiled) - set(unprofiled))
        if missing:
            raise MissingConfigurationError(missing, "blackbox times")
        unprofiled = {c: unprofiled[c] for c in profiled}
        cfgs = []
        if args.group_by:
            if not (args.space and args.samples):
                raise UsageError("--group-by needs --space and --samples")
            space = _space(args.space)
            space.option(args.group_by)
            cfgs = [c for path in args.samples for c in _samples(path, space)]
        doc["overhead"] = overhead_study(unprofiled, profiled, cfgs, args.group_by).to_dict()
    _dump(doc, args.out)
    outputs = [args.out]
    if args.ranking_csv:
        _write_csv(args.ranking_csv, ["method", "cv_configuration"],
                   [(m, _num(v)) for m, v in report.ranking()])
        outputs.append(args.ranking_csv)
    if args.histogram_dir:
        if fine is None:
            raise UsageError("--histogram-dir needs --fine")
        outdir = Path(args.histogram_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        edges = HISTOGRAM_EDGES_NS
        for i, mv in enumerate(report.methods):
            if mv.histogram is None:
                continue
            path = outdir / f"method{i:04d}.csv"
            _write_csv(path, ["method", "lower_ns", "upper_ns", "count"],
                       [(mv.method, _num(edges[b]), _num(edges[b + 1]), int(c))
                        for b, c in enumerate(mv.histogram)])
            outputs.append(path)
    write_manifest(args, outputs)
    return EXIT_OK


def _models_doc(models: dict[str, PerfModel], hp: TreeHyperparams, phase: int) -> dict:
    return {"format_version": FORMAT_VERSION, "phase": phase, "hyperparams": vars(hp).copy(),
            "models": [models[m].to_dict() for m in sorted(models)]}


def cmd_learn(args) -> int:
    space = _space(args.space)
    learn, test = _samples(args.samples, space), _samples(args.test, space)
    hp = _hyperparams(args)
    p1 = run_phase1(space, learn, read_coarse(args.coarse), test, hp, seed=args.seed,
                    statistic=args.statistic, n_jobs=args.jobs)
    models, phase = p1.models, 1
    if args.fine:
        fine = read_fine(args.fine)
        hard = HardSet(sorted(set(map(str, fine["method"].unique()))))
        p2 = run_phase2(space, hard, fine, learn, test, hp, seed=args.seed,
                        tail_fraction=args.tail_fraction, blackbox=blackbox_series(p1.learn),
                        statistic=args.statistic, n_jobs=args.jobs)
        models, phase = {**p1.models, **p2.models}, 2
    _dump(_models_doc(models, hp, phase), args.out)
    outputs = [args.out]
    if args.mape_csv:
        _write_csv(args.mape_csv, ["method", "phase", "train_mape", "test_mape", "abs_perf_ms",
                                   "rel_perf", "zero_test_rows"],
                   [(m, models[m].phase, _num(models[m].train_mape), _num(models[m].test_mape),
                     _ms(models[m].abs_perf), _num(models[m].rel_perf), models[m].zero_test_rows)
                    for m in sorted(models)])
        outputs.append(args.mape_csv)
    write_manifest(args, outputs)
    return EXIT_OK


def cmd_filter(args) -> int:
    doc = _load_json(args.models)
    try:
        models = {e["method"]: PerfModel.from_dict(e) for e in doc["models"]}
    except (KeyError, TypeError) as exc:
        raise TraceFormatError(f"not a model file: missing {exc}", args.models) from None
    params = _filter_params(args)
    hard = select_hard(models, params)
    _dump({"format_version": FORMAT_VERSION, "filter": params.to_dict(),
           "hard_set": hard.to_dict()}, args.out)
    write_manifest(args, [args.out])
    log.info("%d of %d methods selected", len(hard), len(models))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    space = _space(args.space)
    learn, test = _samples(args.samples, space), _samples(args.test, space)
    coarse = read_coarse(args.coarse)
    if args.fine and args.system:
        raise UsageError("use either --fine or --system, not both")
    fine = None
    if args.fine:
        fine = read_fine(args.fine)
    elif args.system:
        if args.seed is None:
            raise UsageError("--seed is required when fine traces are simulated")
        system = GroundTruthSystem.load(args.system)
        cfgs = list(learn) + [c for c in test if c.id not in set(learn.ids)]

        def fine(methods):
            return simulate_fine(system, cfgs, methods, args.repetitions, args.seed)

    blackbox = _blackbox_means(args.blackbox) if args.blackbox else None
    report = run_pipeline(space, learn, test, coarse, fine, _filter_params(args), _hyperparams(args),
                          seed=args.seed or 0, tail_fraction=args.tail_fraction, blackbox=blackbox,
                          statistic=args.statistic, n_jobs=args.jobs)
    doc = report.to_dict(include_models=args.include_models)
    _dump(doc, args.out)
    write_manifest(args, [args.out])
    s = report.summary()
    log.info("phase 1: %s accurate; hard set %d; phase 2: %s accurate",
             s["phase1_fraction_under_alpha"], s["hard_methods"], s["phase2_fraction_under_alpha"])
    return EXIT_OK


def cmd_influence(args) -> int:
    space = _space(args.space)
    samples = _samples(args.samples, space)
    coarse = read_coarse(args.coarse)
    check_coverage(coarse, samples.ids, "coarse traces")
    enc = {c.id: space.encode(c) for c in samples}
    datasets = aggregate_repetitions(coarse, samples.ids, enc.__getitem__, args.statistic)
    if not datasets:
        raise DegenerateSeriesError("no methods in the coarse traces")
    hp = _hyperparams(args)
    relevant = coverage_set(datasets, args.coverage)
    system, forests = fit_influence_models(datasets, args.trees, hp, args.seed, relevant, args.jobs)
    terms = [parse_term(t) for t in args.terms] if args.terms else None
    trace = trace_influence(system, forests, datasets, space.names, args.top_k, args.coverage,
                            args.bound, terms=terms, effect=args.effect)
    doc = {"format_version": FORMAT_VERSION, "trees": args.trees, "seed": args.seed,
           "effect": args.effect, **trace.to_dict()}
    doc["method_importance"] = {m: [{"term": "*".join(t), "score": s}
                                    for t, s in importance(forests[m], space.names)[:args.top_k]]
                               for m in trace.relevant_methods}
    _dump(doc, args.out)
    write_manifest(args, [args.out])
    return EXIT_OK


def _fmt(x, pattern="{:.2f}") -> str:
    return "n/a" if x is None else pattern.format(x)


def render(doc: dict) -> str:
    """Plain-text summary of any JSON document the tool writes."""
    lines = []
    if "summary" in doc:
        s = doc["summary"]
        f = doc["filter"]
        lines.append(f"filter: alpha={f['alpha_percent']}% beta={f['beta_ns']:.0f}ns gamma={f['gamma']}")
        lines.append(f"methods: {s['methods']}  hard: {s['hard_methods']}")
        lines.append(f"phase 1 share under alpha: {_fmt(s['phase1_fraction_under_alpha'], '{:.3f}')}")
        lines.append(f"phase 2 share under alpha: {_fmt(s['phase2_fraction_under_alpha'], '{:.3f}')}")
        lines.append("")
        lines.append(f"{'method':<48} {'mape1':>8} {'mape2':>8} {'absPerf ms':>11} {'relPerf':>8}")
        for e in doc["methods"]:
            lines.append(f"{e['method']:<48} {_fmt(e['phase1_test_mape']):>8} "
                         f"{_fmt(e.get('phase2_test_mape')):>8} {e['abs_perf_ns'] / 1e6:>11.3f} "
                         f"{e['rel_perf']:>8.4f}{'  *' if e['hard'] else ''}")
        for name, c in doc.get("correlations", {}).items():
            lines.append(f"{name}: pearson {_fmt(c['pearson'], '{:.4f}')} "
                         f"spearman {_fmt(c['spearman'], '{:.4f}')} (n={c['n']})")
    elif "ranking" in doc:
        lines.append(f"measurement bound: {doc['measurement_bound']:.2%}")
        rows = {m["method"]: m for m in doc["methods"]}
        for r in doc["ranking"]:
            m = rows[r["method"]]
            flag = "  sensitive" if m["config_sensitive"] else ""
            lines.append(f"{m['method']:<48} cv_conf {m['cv_configuration']:.4f} "
                         f"cv_meas {m['cv_measurement']:.4f}{flag}")
        if "overhead" in doc:
            o = doc["overhead"]["global"]
            lines.append(f"overhead: pearson {_fmt(o['pearson'], '{:.4f}')} "
                         f"spearman {_fmt(o['spearman'], '{:.4f}')}")
            for level, c in doc["overhead"]["per_level"].items():
                if c is not None:
                    lines.append(f"  {doc['overhead']['group_by']}={level}: "
                                 f"pearson {_fmt(c['pearson'], '{:.4f}')}")
    elif "terms" in doc:
        lines.append(f"coverage set ({doc['coverage']:.0%}): {len(doc['relevant_methods'])} methods")
        for t in doc["terms"]:
            lines.append(f"{t['term']} (system score {t['system_score']:.3f}): "
                         f"{len(t['methods'])} methods")
            for m in t["methods"]:
                lines.append(f"  {m['method']:<46} {m['effect_ns'] / 1e6:.3f} ms")
    elif "hard_set" in doc:
        for m in doc["hard_set"]["methods"]:
            lines.append(m)
    elif "models" in doc:
        lines.append(f"phase {doc['phase']} models: {len(doc['models'])}")
        for e in doc["models"]:
            lines.append(f"{e['method']:<48} phase {e['phase']} test mape {_fmt(e['test_mape']):>8}")
    elif "configurations" in doc:
        lines.append(f"{doc['strategy']}: {len(doc['configurations'])} configurations")
    else:
        raise TraceFormatError("unrecognized document")
    return "\n".join(lines) + "\n"


def table(doc: dict) -> tuple[list[str], list[tuple]]:
    """Flat table of a document: per-method errors, the cv ranking, or term-to-method effects."""
    if "summary" in doc:
        return (["method", "phase1_test_mape", "phase2_test_mape", "abs_perf_ms", "rel_perf", "hard"],
                [(e["method"], _num(e["phase1_test_mape"]), _num(e.get("phase2_test_mape")),
                  _ms(e["abs_perf_ns"]), _num(e["rel_perf"]), int(e["hard"])) for e in doc["methods"]])
    if "ranking" in doc:
        return ["method", "cv_configuration"], [(r["method"], _num(r["cv_configuration"]))
                                                for r in doc["ranking"]]
    if "terms" in doc:
        return (["term", "method", "effect_ms"],
                [(t["term"], m["method"], _ms(m["effect_ns"])) for t in doc["terms"] for m in t["methods"]])
    if "models" in doc:
        return (["method", "phase", "test_mape"],
                [(e["method"], e["phase"], _num(e["test_mape"])) for e in doc["models"]])
    raise TraceFormatError("document has no tabular view")


def cmd_report(args) -> int:
    doc = _load_json(args.input)
    if not isinstance(doc, dict):
        raise TraceFormatError("expected a JSON object", args.input)
    text = json.dumps(doc, indent=2) + "\n" if args.format == "json" else render(doc)
    outputs = []
    if args.csv:
        header, rows = table(doc)
        _write_csv(args.csv, header, rows)
        outputs.append(args.csv)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        outputs.append(args.out)
    else:
        sys.stdout.write(text)
    if outputs:
        write_manifest(args, outputs)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _tree_args(p) -> None:
    p.add_argument("--statistic", choices=["mean", "median"], default="mean",
                   help="aggregate over repetitions")
    p.add_argument("--min-samples-leaf", type=int, default=2)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--jobs", type=int, default=_default_jobs(),
                   help=f"worker processes (default from {JOBS_ENV}, else 1)")


def _filter_args(p) -> None:
    d = FilterParams()
    p.add_argument("--alpha", type=float, default=d.alpha, help="MAPE threshold in percent")
    p.add_argument("--beta", "--beta-ns", dest="beta", type=float, default=d.beta,
                   help="absolute time threshold in ns")
    p.add_argument("--gamma", type=float, default=d.gamma, help="relative time threshold (0..1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="methodperf", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("sample", help="draw a configuration sample")
    p.add_argument("--space", required=True)
    p.add_argument("--strategy", choices=["fw", "pw", "random"], default="pw")
    p.add_argument("--design", default="9x3", help="numeric design RUNSxLEVELS, or 'none'")
    p.add_argument("--k", type=int, help="sample size for random sampling")
    p.add_argument("--seed", type=int)
    p.add_argument("--exclude", action="append", help="sample set whose configurations to skip")
    p.add_argument("--max-samples", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="generate a synthetic system and its traces")
    p.add_argument("--seed", type=int, required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--profile", help="generator settings JSON")
    src.add_argument("--system", help="existing ground-truth JSON")
    p.add_argument("--samples", action="append", help="sample set(s) to simulate")
    p.add_argument("--repetitions", type=int, default=5)
    fine = p.add_mutually_exclusive_group()
    fine.add_argument("--fine-methods", help="'all' or ';'-separated method ids for per-call traces")
    fine.add_argument("--fine-from", help="filter or pipeline output naming the hard set")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("variance", help="measurement, configuration and context variance")
    p.add_argument("--coarse", required=True)
    p.add_argument("--fine")
    p.add_argument("--bound", type=float, default=0.04)
    p.add_argument("--tail-fraction", type=float, default=0.01)
    p.add_argument("--blackbox", help="unprofiled times for the overhead study")
    p.add_argument("--space")
    p.add_argument("--samples", action="append")
    p.add_argument("--group-by", help="option whose levels split the overhead correlation")
    p.add_argument("--ranking-csv", help="write (method, cv_configuration) sorted descending")
    p.add_argument("--histogram-dir", help="write one call-duration histogram CSV per method")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("learn", help="fit one regression tree per method")
    p.add_argument("--space", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--coarse", required=True)
    p.add_argument("--fine", help="per-call traces; their methods are re-learned from them")
    p.add_argument("--tail-fraction", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    _tree_args(p)
    p.add_argument("--mape-csv", help="write per-method errors as CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("filter", help="select methods for fine-grained profiling")
    p.add_argument("--models", required=True)
    _filter_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("pipeline", help="coarse learning, filtering and fine re-learning")
    p.add_argument("--space", required=True)
    p.add_argument("--samples", "--learn-set", dest="samples", required=True)
    p.add_argument("--test", "--test-set", dest="test", required=True)
    p.add_argument("--coarse", required=True)
    p.add_argument("--fine", help="per-call traces covering the hard methods")
    p.add_argument("--system", help="ground-truth JSON; simulate the fine run for the hard set")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--blackbox")
    p.add_argument("--seed", type=int)
    p.add_argument("--tail-fraction", type=float, default=0.01)
    p.add_argument("--include-models", action="store_true")
    _filter_args(p)
    _tree_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("influence", help="trace system-level terms to methods")
    p.add_argument("--space", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--coarse", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--top-k", type=int, default=2)
    p.add_argument("--coverage", type=float, default=0.8)
    p.add_argument("--bound", type=float, default=0.04)
    p.add_argument("--terms", action="append", help="term such as o1*o2 (repeatable)")
    p.add_argument("--effect", choices=["spread", "abs"], default="spread",
                   help="ns scale multiplied with a term's importance")
    _tree_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_influence)

    p = sub.add_parser("report", help="human-readable summary of a JSON output")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("--csv", help="also write the document's table as CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        parser.print_usage(sys.stderr)
        print("methodperf: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"methodperf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnsatisfiableError, ExhaustedSpaceError, DegenerateSeriesError) as exc:
        print(f"methodperf {args.command}: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (TraceFormatError, ConfigSpaceError, SamplingError, MissingConfigurationError,
            OSError, KeyError, ValueError) as exc:
        print(f"methodperf {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
