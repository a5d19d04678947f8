"""Learning-set construction: feature-wise, pair-wise, Plackett-Burman and random sampling."""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .configspace import (
    ConfigSpaceError,
    Configuration,
    ConfigurationSpace,
    OptionDef,
    UnsatisfiableError,
)

logger = logging.getLogger(__name__)

FEATURE_WISE = "feature_wise"
PAIR_WISE = "pair_wise"
RANDOM = "random"
COMPOSED = "composed"

# Cyclic generator rows for (runs, levels). Each row is a maximal-length linear
# recurring sequence over GF(levels); its rotations plus the all-zero row form
# an orthogonal array on the first (runs - 1) / (levels - 1) columns.
PB_SEEDS: dict[tuple[int, int], str] = {
    (9, 3): "01220211",
    (27, 3): "00111021121010022201221202",
    (25, 5): "014434023313041121032242",
    (125, 5): (
        "0014120332224243340432042342201003231044111212442024102142110300"
        "414302233313122101230132133040023240114443431130314034134402"
    ),
}


class SamplingError(ValueError):
    pass


class UnsupportedDesignError(SamplingError):
    pass


class ExhaustedSpaceError(SamplingError):
    pass


@dataclass(frozen=True)
class SampleSet:
    strategy: str
    configurations: tuple
    seed: int | None = None
    skipped: tuple = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.configurations)

    def __iter__(self):
        return iter(self.configurations)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.configurations]

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "strategy": self.strategy,
            "seed": self.seed,
            "configurations": [c.to_json() for c in self.configurations],
            "skipped": list(self.skipped),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, doc: Mapping, space: ConfigurationSpace) -> "SampleSet":
        configs = []
        for entry in doc["configurations"]:
            cfg = space.configuration(entry["assignment"])
            if not space.validate(cfg):
                raise ConfigSpaceError(f"configuration {entry.get('id')} is not valid")
            if "id" in entry and entry["id"] != cfg.id:
                raise ConfigSpaceError(f"configuration id mismatch: {entry['id']} != {cfg.id}")
            configs.append(cfg)
        return cls(doc.get("strategy", COMPOSED), tuple(configs), doc.get("seed"),
                   tuple(doc.get("skipped", ())))

    @classmethod
    def load(cls, path: str | Path, space: ConfigurationSpace) -> "SampleSet":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), space)


@dataclass(frozen=True)
class NumericDesign:
    option_names: tuple
    rows: np.ndarray  # (runs, options) level indices
    levels: tuple  # per option: tuple of domain values, indexed by level

    def values(self) -> list[dict]:
        return [{name: self.levels[j][int(row[j])] for j, name in enumerate(self.option_names)}
                for row in self.rows]

    @property
    def is_empty(self) -> bool:
        return len(self.option_names) == 0


def _dedupe(configs: Iterable[Configuration]) -> tuple:
    seen, out = set(), []
    for c in configs:
        if c.id not in seen:
            seen.add(c.id)
            out.append(c)
    return tuple(out)


def _centered(space: ConfigurationSpace) -> dict:
    return {o.name: o.center() for o in space.numeric_options}


def sample_feature_wise(space: ConfigurationSpace) -> SampleSet:
    """Base configuration plus one configuration enabling each binary option."""
    centers = _centered(space)
    configs = [space.find_valid(centers)]
    skipped = []
    for o in space.binary_options:
        try:
            configs.append(space.find_valid({**centers, o.name: True}))
        except UnsatisfiableError as exc:
            logger.warning("feature-wise: option %s cannot be enabled: %s", o.name, exc)
            skipped.append({"options": [o.name], "reason": "unsatisfiable"})
    return SampleSet(FEATURE_WISE, _dedupe(configs), skipped=tuple(skipped))


def sample_pair_wise(space: ConfigurationSpace) -> SampleSet:
    """Feature-wise set extended by one configuration per satisfiable pair of binary options."""
    fw = sample_feature_wise(space)
    centers = _centered(space)
    configs = list(fw.configurations)
    skipped = list(fw.skipped)
    for a, b in itertools.combinations(space.binary_options, 2):
        try:
            configs.append(space.find_valid({**centers, a.name: True, b.name: True}))
        except UnsatisfiableError:
            skipped.append({"options": [a.name, b.name], "reason": "unsatisfiable"})
    return SampleSet(PAIR_WISE, _dedupe(configs), skipped=tuple(skipped))


def level_values(option: OptionDef, n_levels: int) -> tuple:
    """Pick ``n_levels`` quantile values from the option's domain (round-half-up indices)."""
    m = len(option.domain) - 1
    idx = [int(math.floor(k * m / (n_levels - 1) + 0.5)) for k in range(n_levels)]
    return tuple(option.domain[i] for i in idx)


def supported_designs() -> list[tuple[int, int]]:
    return sorted(PB_SEEDS)


def design_columns(runs: int, levels: int) -> int:
    return (runs - 1) // (levels - 1)


def plackett_burman(options: Sequence[OptionDef], design: tuple[int, int] = (9, 3)) -> NumericDesign:
    options = list(options)
    if not options:
        return NumericDesign((), np.zeros((1, 0), dtype=int), ())
    design = tuple(design)
    if design not in PB_SEEDS:
        raise UnsupportedDesignError(
            f"unsupported design {design[0]}x{design[1]}; supported: "
            + ", ".join(f"{n}x{l}" for n, l in supported_designs()))
    runs, n_levels = design
    ncols = design_columns(runs, n_levels)
    if len(options) > ncols:
        raise UnsupportedDesignError(
            f"design {runs}x{n_levels} supports at most {ncols} numeric options, got {len(options)}")
    seed = np.array([int(ch) for ch in PB_SEEDS[design]])
    period = len(seed)
    rows = np.array([np.roll(seed, -i) for i in range(period)] + [np.zeros(period, dtype=int)])
    return NumericDesign(tuple(o.name for o in options), rows[:, :len(options)].astype(int),
                         tuple(level_values(o, n_levels) for o in options))


def compose_samples(binary_set: SampleSet, design: NumericDesign, space: ConfigurationSpace,
                    max_samples: int | None = None) -> SampleSet:
    """Cross binary configurations with the numeric design rows."""
    if design.is_empty:
        configs = binary_set.configurations
        if max_samples is not None:
            configs = configs[:max_samples]
        return SampleSet(binary_set.strategy, configs, binary_set.seed, binary_set.skipped)
    configs, skipped = [], list(binary_set.skipped)
    rows = design.values()
    for cfg in binary_set.configurations:
        base = cfg.assignment
        for row in rows:
            candidate = space.configuration({**base, **row})
            if space.validate(candidate):
                configs.append(candidate)
            else:
                skipped.append({"base": cfg.id, "design": row, "reason": "invalid"})
    configs = _dedupe(configs)
    if max_samples is not None:
        configs = configs[:max_samples]
    return SampleSet(COMPOSED, configs, binary_set.seed, tuple(skipped))


def sample_random(space: ConfigurationSpace, k: int, seed: int,
                  exclude: Iterable[Configuration] = (), max_rejections: int | None = None) -> SampleSet:
    """Draw ``k`` distinct valid configurations not in ``exclude``.

    Each option is drawn independently (fair coin / uniform over the domain);
    invalid, duplicate and excluded draws are rejected.
    """
    if k < 1:
        raise SamplingError("k must be at least 1")
    excluded = {c.id for c in exclude}
    if space.candidate_count() <= 1 << 16:
        available = sum(1 for c in space.enumerate_valid() if c.id not in excluded)
        if k > available:
            raise ExhaustedSpaceError(f"requested {k} configurations but only {available} are available")
    budget = max_rejections if max_rejections is not None else 1000 * k + 10000
    rng = np.random.default_rng(seed)
    names = space.names
    out: list[Configuration] = []
    seen = set(excluded)
    rejections = 0
    while len(out) < k:
        draw = {}
        for o in space.options:
            i = int(rng.integers(len(o.domain)))
            draw[o.name] = o.domain[i]
        cfg = space.configuration({n: draw[n] for n in names})
        if cfg.id in seen or not space.validate(cfg):
            rejections += 1
            if rejections > budget:
                raise ExhaustedSpaceError(
                    f"gave up after {rejections} rejected draws with {len(out)} of {k} configurations")
            continue
        seen.add(cfg.id)
        out.append(cfg)
    return SampleSet(RANDOM, tuple(out), seed)


def parse_design(text: str) -> tuple[int, int]:
    try:
        runs, levels = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise UnsupportedDesignError(f"design must look like 9x3, got {text!r}") from None
    return runs, levels


def build_learning_set(space: ConfigurationSpace, strategy: str = PAIR_WISE,
                       design: tuple[int, int] | None = (9, 3),
                       max_samples: int | None = None) -> SampleSet:
    """Binary sampling (fw/pw) crossed with a Plackett-Burman design for the numeric options."""
    if strategy in ("fw", FEATURE_WISE):
        binary = sample_feature_wise(space)
    elif strategy in ("pw", PAIR_WISE):
        binary = sample_pair_wise(space)
    else:
        raise SamplingError(f"unknown binary strategy {strategy!r}")
    if design is None or not space.numeric_options:
        numeric = plackett_burman([])
    else:
        numeric = plackett_burman(space.numeric_options, design)
    return compose_samples(binary, numeric, space, max_samples)
