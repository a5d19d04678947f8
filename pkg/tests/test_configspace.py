import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from methodperf.configspace import (
    ConfigSpaceError,
    ConfigurationSpace,
    ConstraintSyntaxError,
    OptionDef,
    SpaceTooLargeError,
    UnknownOptionError,
    UnsatisfiableError,
    parse_constraint,
)


def binary_space(names, constraints=()):
    return ConfigurationSpace([OptionDef(n) for n in names], constraints)


@pytest.fixture
def ab_implies():
    return binary_space("AB", ["(implies A B)"])


class TestConstraintGrammar:
    def test_prefix_forms(self):
        f = parse_constraint("(and A (or B (not C)) (implies D E))")
        assert f.variables() == {"A", "B", "C", "D", "E"}
        assert f.evaluate({"A": True, "B": False, "C": False, "D": False, "E": False}) is True
        assert f.evaluate({"A": True, "B": False, "C": True, "D": False, "E": False}) is False

    def test_outer_parentheses_optional(self):
        assert str(parse_constraint("implies A B")) == str(parse_constraint("(implies A B)"))

    def test_three_valued_evaluation(self):
        f = parse_constraint("(implies A B)")
        assert f.evaluate({"A": False}) is True
        assert f.evaluate({"A": True}) is None

    @pytest.mark.parametrize("text, column", [
        ("(xor A B)", 2),
        ("(and A B", 9),
        ("(and A B))", 10),
        ("(not A B)", 2),
        ("", 1),
    ])
    def test_syntax_errors_carry_position(self, text, column):
        with pytest.raises(ConstraintSyntaxError) as info:
            parse_constraint(text, line=3)
        assert info.value.line == 3
        assert info.value.column == column

    def test_unknown_option_in_constraint(self):
        with pytest.raises(UnknownOptionError):
            binary_space("AB", ["(implies A Z)"])

    def test_numeric_option_rejected_in_constraint(self):
        with pytest.raises(ConfigSpaceError):
            ConfigurationSpace([OptionDef("A"), OptionDef.numeric("n", [1, 2])], ["(or A n)"])


class TestOptionDef:
    def test_numeric_range(self):
        o = OptionDef.numeric("n", span=(0, 10, 5))
        assert o.domain == (0, 5, 10)
        assert o.default == 0

    def test_domain_must_ascend(self):
        with pytest.raises(ConfigSpaceError):
            OptionDef.numeric("n", [1, 4, 2])

    def test_default_in_domain(self):
        with pytest.raises(ConfigSpaceError):
            OptionDef.numeric("n", [1, 2], default=3)

    def test_empty_domain(self):
        with pytest.raises(ConfigSpaceError):
            OptionDef.numeric("n", [])

    def test_center_rounds_half_up(self):
        assert OptionDef.numeric("n", [1, 2, 4, 8]).center() == 4
        assert OptionDef.numeric("n", [1, 2, 4]).center() == 2

    def test_duplicate_names(self):
        with pytest.raises(ConfigSpaceError):
            binary_space("AA")


class TestValidate:
    def test_implication_holds(self, ab_implies):
        assert ab_implies.validate({"A": True, "B": True})

    def test_implication_violated(self, ab_implies):
        assert not ab_implies.validate({"A": True, "B": False})

    def test_numeric_out_of_domain(self):
        space = ConfigurationSpace([OptionDef.numeric("n", [1, 2, 4])])
        assert not space.validate({"n": 3})
        assert space.validate({"n": 4})

    def test_unknown_option(self, ab_implies):
        with pytest.raises(UnknownOptionError):
            ab_implies.validate({"A": True, "B": True, "Q": False})

    def test_partial_assignment_invalid(self, ab_implies):
        assert not ab_implies.validate({"A": False})


class TestEnumerate:
    def test_unconstrained_binary(self):
        assert len(binary_space("ABC").enumerate_valid()) == 8

    def test_implication(self, ab_implies):
        got = [(c["A"], c["B"]) for c in ab_implies.enumerate_valid()]
        assert got == [(False, False), (False, True), (True, True)]

    def test_mixed(self):
        space = ConfigurationSpace([OptionDef("A"), OptionDef("B"), OptionDef.numeric("n", [1, 2, 4])])
        assert len(space.enumerate_valid()) == 12

    def test_limit(self):
        with pytest.raises(SpaceTooLargeError):
            binary_space([f"o{i}" for i in range(10)]).enumerate_valid(limit=100)


class TestFindValid:
    def test_completes_implication(self, ab_implies):
        assert ab_implies.find_valid({"A": True}).assignment == {"A": True, "B": True}

    def test_false_first(self):
        assert binary_space("AB").find_valid({}).assignment == {"A": False, "B": False}

    def test_contradiction_rejected_at_construction(self):
        with pytest.raises(UnsatisfiableError):
            binary_space("AB", ["(and A (not A))"])

    def test_unsatisfiable_request_names_constraints(self):
        space = binary_space("ABC", ["(not (and A B))", "(implies C A)"])
        with pytest.raises(UnsatisfiableError) as info:
            space.find_valid({"A": True, "B": True})
        assert "(not (and A B))" in info.value.conflicting

    def test_numeric_default(self):
        space = ConfigurationSpace([OptionDef("A"), OptionDef.numeric("n", [1, 2, 4], default=2)])
        assert space.find_valid({"A": True}).assignment == {"A": True, "n": 2}


class TestEncoding:
    def test_encode_order(self):
        space = ConfigurationSpace([OptionDef("A"), OptionDef("B"), OptionDef.numeric("n", [1, 4])])
        vec = space.encode(space.configuration({"A": True, "B": False, "n": 4}))
        np.testing.assert_array_equal(vec, [1.0, 0.0, 4.0])

    def test_all_false_is_zero(self):
        space = binary_space("ABC")
        assert not space.encode(space.find_valid({})).any()

    def test_round_trip(self):
        space = ConfigurationSpace([OptionDef("A"), OptionDef.numeric("n", [0.5, 1.5])])
        for cfg in space.enumerate_valid():
            assert space.decode(space.encode(cfg)) == cfg

    def test_ids_distinct_and_stable(self):
        space = ConfigurationSpace([OptionDef("A"), OptionDef("B"), OptionDef.numeric("n", [1, 2, 4])])
        ids = [c.id for c in space.enumerate_valid()]
        assert len(set(ids)) == len(ids)
        again = [c.id for c in space.enumerate_valid()]
        assert ids == again
        assert all(len(i) == 16 for i in ids)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        space = ConfigurationSpace(
            [OptionDef("A"), OptionDef("B"), OptionDef.numeric("n", span=(1, 3, 1), default=2)],
            ["(implies A B)"])
        path = tmp_path / "space.json"
        space.save(path)
        loaded = ConfigurationSpace.load(path)
        assert loaded.names == space.names
        assert loaded.option("n").domain == (1, 2, 3)
        assert [c.id for c in loaded.enumerate_valid()] == [c.id for c in space.enumerate_valid()]

    def test_range_key(self):
        doc = {"options": [{"name": "n", "kind": "numeric", "range": [0, 4, 2]}], "constraints": []}
        assert ConfigurationSpace.from_dict(json.loads(json.dumps(doc))).option("n").domain == (0, 2, 4)


# -- properties ---------------------------------------------------------------

names = [f"o{i}" for i in range(6)]
literal = st.sampled_from(names)
formula = st.recursive(
    literal,
    lambda inner: st.one_of(
        st.builds(lambda a: f"(not {a})", inner),
        st.builds(lambda a, b: f"(implies {a} {b})", inner, inner),
        st.builds(lambda xs: f"(and {' '.join(xs)})", st.lists(inner, min_size=2, max_size=3)),
        st.builds(lambda xs: f"(or {' '.join(xs)})", st.lists(inner, min_size=2, max_size=3)),
    ),
    max_leaves=5,
)


def brute_force(space):
    out = []
    for combo in itertools.product(*(o.domain for o in space.options)):
        assignment = dict(zip(space.names, combo))
        if all(f.evaluate({k: bool(v) for k, v in assignment.items() if k in names}) for f in space.constraints):
            out.append(assignment)
    return out


@settings(max_examples=60, deadline=None)
@given(st.lists(formula, max_size=3))
def test_enumeration_matches_brute_force(constraints):
    options = [OptionDef(n) for n in names] + [OptionDef.numeric("n", [1, 2])]
    try:
        space = ConfigurationSpace(options, constraints)
    except UnsatisfiableError:
        return
    assert [c.assignment for c in space.enumerate_valid()] == brute_force(space)


@settings(max_examples=60, deadline=None)
@given(st.lists(formula, max_size=3), st.dictionaries(literal, st.booleans(), max_size=3))
def test_find_valid_output_is_valid_and_repeatable(constraints, required):
    try:
        space = ConfigurationSpace([OptionDef(n) for n in names], constraints)
    except UnsatisfiableError:
        return
    try:
        cfg = space.find_valid(required)
    except UnsatisfiableError:
        assert not any(all(a[k] == v for k, v in required.items()) for a in brute_force(space))
        return
    assert space.validate(cfg)
    assert all(cfg[k] == v for k, v in required.items())
    assert space.find_valid(required) == cfg
