"""Configuration spaces: binary and numeric options with propositional constraints.

Constraints are written in a small prefix grammar::

    formula := NAME
             | "(" "not" formula ")"
             | "(" "and" formula formula+ ")"
             | "(" "or" formula formula+ ")"
             | "(" "implies" formula formula ")"

The outermost parentheses may be omitted, so ``implies A B`` and
``(implies A B)`` are equivalent. Only binary options may appear as names.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

BINARY = "binary"
NUMERIC = "numeric"

_OPERATORS = {"not": (1, 1), "and": (2, None), "or": (2, None), "implies": (2, 2)}
_TOKEN_RE = re.compile(r"\s*(?:(\()|(\))|([A-Za-z_][A-Za-z0-9_.\-]*)|(\S))")


class ConfigSpaceError(ValueError):
    """Malformed space definition or configuration."""


class UnknownOptionError(ConfigSpaceError):
    pass


class ConstraintSyntaxError(ConfigSpaceError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnsatisfiableError(ConfigSpaceError):
    """No valid configuration extends the requested partial assignment."""

    def __init__(self, required: Mapping[str, Any], conflicting: Sequence[str]):
        req = ", ".join(f"{k}={v}" for k, v in required.items()) or "<nothing>"
        msg = f"no valid configuration extends {{{req}}}"
        if conflicting:
            msg += "; conflicting constraints: " + "; ".join(conflicting)
        super().__init__(msg)
        self.required = dict(required)
        self.conflicting = list(conflicting)


class SpaceTooLargeError(ConfigSpaceError):
    pass


# -- constraint formulas ------------------------------------------------------

@dataclass(frozen=True)
class Formula:
    op: str  # "var", "not", "and", "or", "implies"
    args: tuple = ()
    name: str | None = None

    def variables(self) -> set[str]:
        if self.op == "var":
            return {self.name}
        out: set[str] = set()
        for a in self.args:
            out |= a.variables()
        return out

    def evaluate(self, values: Mapping[str, bool]) -> bool | None:
        """Three-valued evaluation; ``None`` when unassigned options decide the outcome."""
        if self.op == "var":
            v = values.get(self.name)
            return None if v is None else bool(v)
        if self.op == "not":
            v = self.args[0].evaluate(values)
            return None if v is None else not v
        if self.op == "implies":
            a = self.args[0].evaluate(values)
            b = self.args[1].evaluate(values)
            if a is False or b is True:
                return True
            if a is True and b is False:
                return False
            return None
        vals = [a.evaluate(values) for a in self.args]
        if self.op == "and":
            if any(v is False for v in vals):
                return False
            return None if any(v is None for v in vals) else True
        if any(v is True for v in vals):
            return True
        return None if any(v is None for v in vals) else False

    def __str__(self) -> str:
        if self.op == "var":
            return self.name
        return "(" + " ".join([self.op] + [str(a) for a in self.args]) + ")"


def parse_constraint(text: str, line: int = 1) -> Formula:
    tokens: list[tuple[str, str, int]] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            break
        col = m.start(m.lastindex) + 1
        if m.group(1):
            tokens.append(("(", "(", col))
        elif m.group(2):
            tokens.append((")", ")", col))
        elif m.group(3):
            tokens.append(("word", m.group(3), col))
        else:
            raise ConstraintSyntaxError(f"unexpected character {m.group(4)!r}", line, col)
        pos = m.end()
    if not tokens:
        raise ConstraintSyntaxError("empty constraint", line, 1)

    def parse(i: int) -> tuple[Formula, int]:
        if i >= len(tokens):
            raise ConstraintSyntaxError("unexpected end of constraint", line, len(text) + 1)
        kind, val, col = tokens[i]
        if kind == "word":
            if val in _OPERATORS:
                raise ConstraintSyntaxError(f"operator {val!r} must follow '('", line, col)
            return Formula("var", name=val), i + 1
        if kind == ")":
            raise ConstraintSyntaxError("unexpected ')'", line, col)
        return parse_compound(i + 1, closing=True)

    def parse_compound(i: int, closing: bool) -> tuple[Formula, int]:
        if i >= len(tokens):
            raise ConstraintSyntaxError("unexpected end of constraint", line, len(text) + 1)
        kind, val, col = tokens[i]
        if kind != "word" or val not in _OPERATORS:
            raise ConstraintSyntaxError(f"unknown operator {val!r}", line, col)
        lo, hi = _OPERATORS[val]
        args = []
        i += 1
        while i < len(tokens) and tokens[i][0] != ")":
            arg, i = parse(i)
            args.append(arg)
        if closing:
            if i >= len(tokens):
                raise ConstraintSyntaxError("missing ')'", line, len(text) + 1)
            i += 1
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ConstraintSyntaxError(f"wrong number of operands for {val!r}", line, col)
        return Formula(val, tuple(args)), i

    if tokens[0][0] == "word" and tokens[0][1] in _OPERATORS:
        formula, i = parse_compound(0, closing=False)
    else:
        formula, i = parse(0)
    if i != len(tokens):
        raise ConstraintSyntaxError(f"unexpected token {tokens[i][1]!r}", line, tokens[i][2])
    return formula


# -- options, spaces, configurations ------------------------------------------

def _canonical_number(v: float) -> int | float:
    f = float(v)
    return int(f) if f.is_integer() else f


@dataclass(frozen=True)
class OptionDef:
    name: str
    kind: str = BINARY
    domain: tuple = (False, True)
    default: Any = None

    def __post_init__(self):
        if not self.name or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.\-]*", self.name):
            raise ConfigSpaceError(f"invalid option name {self.name!r}")
        if self.name in _OPERATORS:
            raise ConfigSpaceError(f"option name {self.name!r} is reserved")
        if self.kind == BINARY:
            object.__setattr__(self, "domain", (False, True))
            object.__setattr__(self, "default", bool(self.default))
        elif self.kind == NUMERIC:
            dom = tuple(_canonical_number(v) for v in self.domain)
            if not dom:
                raise ConfigSpaceError(f"numeric option {self.name!r} has an empty domain")
            if any(b <= a for a, b in zip(dom, dom[1:])):
                raise ConfigSpaceError(f"domain of {self.name!r} is not strictly ascending")
            object.__setattr__(self, "domain", dom)
            default = dom[0] if self.default is None else _canonical_number(self.default)
            if default not in dom:
                raise ConfigSpaceError(f"default {default} of {self.name!r} not in domain")
            object.__setattr__(self, "default", default)
        else:
            raise ConfigSpaceError(f"unknown option kind {self.kind!r}")

    @classmethod
    def numeric(cls, name: str, values=None, *, span=None, default=None) -> "OptionDef":
        if values is None:
            if span is None:
                raise ConfigSpaceError(f"numeric option {name!r} needs values or range")
            lo, hi, step = span
            if step <= 0:
                raise ConfigSpaceError(f"range step of {name!r} must be positive")
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            values = [lo + i * step for i in range(n)]
        return cls(name, NUMERIC, tuple(values), default)

    @property
    def is_binary(self) -> bool:
        return self.kind == BINARY

    def center(self):
        """Middle value of the domain (round-half-up index), used as the design center."""
        if self.is_binary:
            return False
        return self.domain[int(math.floor((len(self.domain) - 1) / 2 + 0.5))]

    def normalize(self, value) -> float:
        if self.is_binary:
            return float(bool(value))
        lo, hi = self.domain[0], self.domain[-1]
        return 0.0 if hi == lo else (float(value) - lo) / (hi - lo)

    def to_dict(self) -> dict:
        if self.is_binary:
            return {"name": self.name, "kind": BINARY, "default": self.default}
        return {"name": self.name, "kind": NUMERIC, "values": list(self.domain),
                "default": self.default}



def _value_text(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return repr(_canonical_number(v))


@dataclass(frozen=True)
class Configuration:
    """A complete assignment, stored in the owning space's option order."""

    items: tuple  # ((name, value), ...)

    @property
    def assignment(self) -> dict:
        return dict(self.items)

    @property
    def id(self) -> str:
        text = "".join(f"{k}={_value_text(v)};" for k, v in self.items)
        return hashlib.blake2b(text.encode(), digest_size=8).hexdigest()

    def __getitem__(self, name):
        for k, v in self.items:
            if k == name:
                return v
        raise KeyError(name)

    def to_json(self) -> dict:
        return {"id": self.id,
                "assignment": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v)
                               for k, v in self.items}}

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={_value_text(v)}" for k, v in self.items)
        return f"Configuration({body})"


@dataclass(frozen=True)
class ConfigurationSpace:
    options: tuple
    constraints: tuple = ()
    constraint_texts: tuple = field(default=(), compare=False)

    def __init__(self, options: Sequence[OptionDef], constraints: Sequence = ()):
        options = tuple(options)
        names = [o.name for o in options]
        if len(set(names)) != len(names):
            raise ConfigSpaceError("option names must be unique")
        binary = {o.name for o in options if o.is_binary}
        parsed, texts = [], []
        for i, c in enumerate(constraints, start=1):
            f = parse_constraint(c, line=i) if isinstance(c, str) else c
            for v in sorted(f.variables()):
                if v not in names:
                    raise UnknownOptionError(f"constraint {i} references unknown option {v!r}")
                if v not in binary:
                    raise ConfigSpaceError(f"constraint {i} references numeric option {v!r}")
            parsed.append(f)
            texts.append(c if isinstance(c, str) else str(f))
        object.__setattr__(self, "options", options)
        object.__setattr__(self, "constraints", tuple(parsed))
        object.__setattr__(self, "constraint_texts", tuple(texts))
        if not self.is_satisfiable():
            raise UnsatisfiableError({}, list(texts))

    # -- lookup
    @property
    def names(self) -> list[str]:
        return [o.name for o in self.options]

    @property
    def binary_options(self) -> list[OptionDef]:
        return [o for o in self.options if o.is_binary]

    @property
    def numeric_options(self) -> list[OptionDef]:
        return [o for o in self.options if not o.is_binary]

    def option(self, name: str) -> OptionDef:
        for o in self.options:
            if o.name == name:
                return o
        raise UnknownOptionError(f"unknown option {name!r}")

    def __len__(self) -> int:
        return len(self.options)

    # -- construction
    def configuration(self, assignment: Mapping[str, Any]) -> Configuration:
        """Build a configuration from a mapping; does not check constraints."""
        self._check_names(assignment)
        items = []
        for o in self.options:
            if o.name not in assignment:
                raise ConfigSpaceError(f"option {o.name!r} is unassigned")
            items.append((o.name, self._coerce(o, assignment[o.name])))
        return Configuration(tuple(items))

    def _check_names(self, assignment: Mapping[str, Any]) -> None:
        known = set(self.names)
        for k in assignment:
            if k not in known:
                raise UnknownOptionError(f"unknown option {k!r}")

    @staticmethod
    def _coerce(o: OptionDef, v):
        if o.is_binary:
            if isinstance(v, str):
                v = v.strip().lower() in ("1", "true", "yes", "on")
            return bool(v)
        return _canonical_number(v)

    # -- checks
    def validate(self, cfg: Configuration | Mapping[str, Any]) -> bool:
        assignment = cfg.assignment if isinstance(cfg, Configuration) else dict(cfg)
        self._check_names(assignment)
        for o in self.options:
            if o.name not in assignment:
                return False
            v = assignment[o.name]
            if o.is_binary:
                if not isinstance(v, (bool, np.bool_, int, np.integer)) or v not in (0, 1):
                    return False
            elif _canonical_number(v) not in o.domain:
                return False
        values = {o.name: bool(assignment[o.name]) for o in self.binary_options}
        return all(f.evaluate(values) for f in self.constraints)

    def is_satisfiable(self) -> bool:
        try:
            self.find_valid({})
        except UnsatisfiableError:
            return False
        return True

    def candidate_count(self) -> int:
        return math.prod(len(o.domain) for o in self.options)

    # -- search
    def find_valid(self, required: Mapping[str, Any] | None = None) -> Configuration:
        """Deterministically complete ``required`` into a valid configuration.

        Backtracks over binary options in option order trying ``False`` before
        ``True``; numeric options take their required value or their default.
        """
        required = dict(required or {})
        self._check_names(required)
        fixed = {}
        for k, v in required.items():
            o = self.option(k)
            v = self._coerce(o, v)
            if not o.is_binary and v not in o.domain:
                raise ConfigSpaceError(f"required value {v} of {k!r} is outside its domain")
            fixed[k] = v
        binary = [o.name for o in self.binary_options]
        values = {k: v for k, v in fixed.items() if k in binary}
        blamed: set[int] = set()

        def consistent() -> bool:
            for i, f in enumerate(self.constraints):
                if f.evaluate(values) is False:
                    blamed.add(i)
                    return False
            return True

        def search(i: int) -> bool:
            if i == len(binary):
                return True
            name = binary[i]
            if name in fixed:
                return search(i + 1)
            for val in (False, True):
                values[name] = val
                if consistent() and search(i + 1):
                    return True
            del values[name]
            return False

        if not (consistent() and search(0)):
            raise UnsatisfiableError(required, [self.constraint_texts[i] for i in sorted(blamed)])
        out = {}
        for o in self.options:
            out[o.name] = values[o.name] if o.is_binary else fixed.get(o.name, o.default)
        return self.configuration(out)

    def enumerate_valid(self, limit: int = 1 << 16) -> list[Configuration]:
        if self.candidate_count() > limit:
            raise SpaceTooLargeError(
                f"{self.candidate_count()} candidate assignments exceed the limit of {limit}")
        return list(self._iter_valid())

    def _iter_valid(self) -> Iterator[Configuration]:
        for combo in itertools.product(*(o.domain for o in self.options)):
            assignment = dict(zip(self.names, combo))
            if self.validate(assignment):
                yield self.configuration(assignment)

    # -- encoding
    def encode(self, cfg: Configuration | Mapping[str, Any]) -> np.ndarray:
        assignment = cfg.assignment if isinstance(cfg, Configuration) else dict(cfg)
        self._check_names(assignment)
        return np.array([float(assignment[n]) for n in self.names], dtype=float)

    def encode_many(self, cfgs: Sequence[Configuration]) -> np.ndarray:
        if not cfgs:
            return np.zeros((0, len(self.options)))
        return np.vstack([self.encode(c) for c in cfgs])

    def decode(self, vector: Sequence[float]) -> Configuration:
        if len(vector) != len(self.options):
            raise ConfigSpaceError("feature vector length does not match the space")
        return self.configuration({o.name: (bool(v) if o.is_binary else v)
                                   for o, v in zip(self.options, vector)})

    # -- serialization
    def to_dict(self) -> dict:
        return {"format_version": 1,
                "options": [o.to_dict() for o in self.options],
                "constraints": list(self.constraint_texts)}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ConfigurationSpace":
        options = []
        for raw in doc.get("options", []):
            kind = raw.get("kind", BINARY)
            if kind == BINARY:
                options.append(OptionDef(raw["name"], BINARY, default=raw.get("default", False)))
            elif "values" in raw:
                options.append(OptionDef.numeric(raw["name"], raw["values"],
                                                 default=raw.get("default")))
            elif "range" in raw:
                options.append(OptionDef.numeric(raw["name"], span=tuple(raw["range"]),
                                                 default=raw.get("default")))
            else:
                raise ConfigSpaceError(f"numeric option {raw.get('name')!r} needs values or range")
        return cls(options, list(doc.get("constraints", [])))

    @classmethod
    def load(cls, path: str | Path) -> "ConfigurationSpace":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
