import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from met.rules import (
    MAX_CASES,
    CaseExplosion,
    Leaf,
    Node,
    RuleSyntaxError,
    compile_rule,
    normalize,
    parse,
    render,
)

from oracles import ast_types, minimal_satisfying, random_ast, satisfied

LISTING_2 = "OR(AND(6:temperature,6:wind),AND(1:temperature,1:motion))"
LISTING_4 = "OR(AND(5:packetLoss,1:temperature),1:powerConsumption)"


def test_parse_smart_home_rule():
    assert parse(LISTING_2) == Node(
        "OR",
        Node("AND", Leaf(6, "temperature"), Leaf(6, "wind")),
        Node("AND", Leaf(1, "temperature"), Leaf(1, "motion")),
    )


def test_parse_bare_leaf():
    assert parse("3:a") == Leaf(3, "a")


def test_parse_multiline_with_whitespace():
    text = """OR(
        AND(6:temperature,6:wind),
        AND(1:temperature,1:motion)
    )"""
    assert parse(text) == parse(LISTING_2)
    assert parse(" AND ( 2 : a , 2:b ) ") == Node("AND", Leaf(2, "a"), Leaf(2, "b"))


def test_not_is_rejected_at_offset_zero():
    with pytest.raises(RuleSyntaxError) as info:
        parse("NOT(1:a)")
    assert info.value.position == 0
    assert info.value.expected == "count or AND/OR"


def test_zero_count_rejected():
    with pytest.raises(RuleSyntaxError) as info:
        parse("0:a")
    assert info.value.position == 0
    assert "at least 1" in str(info.value)


def test_count_upper_bound():
    assert parse("1000000:a") == Leaf(1_000_000, "a")
    with pytest.raises(RuleSyntaxError):
        parse("1000001:a")


def test_parenthesized_leaf_is_rejected():
    with pytest.raises(RuleSyntaxError) as info:
        parse("(3:a)")
    assert info.value.position == 0


@pytest.mark.parametrize(
    "text, position",
    [
        ("AND(1:a)", 7),
        ("AND(1:a,1:b", 11),
        ("1:a extra", 4),
        ("1:", 2),
        ("1:a1", 3),
        ("and(1:a,1:b)", 0),
        ("", 0),
    ],
)
def test_syntax_error_positions(text, position):
    with pytest.raises(RuleSyntaxError) as info:
        parse(text)
    assert info.value.position == position


def test_render_examples():
    assert render(Leaf(3, "a")) == "3:a"
    assert render(Node("AND", Leaf(2, "a"), Leaf(2, "b"))) == "AND(2:a,2:b)"
    assert render(parse(LISTING_4)) == LISTING_4


def test_roundtrip_seeded_random_asts():
    rng = random.Random(1234)
    for _ in range(1000):
        ast = random_ast(rng, depth=rng.randint(0, 5))
        assert parse(render(ast)) == ast


ast_strategy = st.recursive(
    st.builds(Leaf, st.integers(1, 1_000_000), st.from_regex(r"[a-zA-Z]{1,8}", fullmatch=True)),
    lambda inner: st.builds(Node, st.sampled_from(["AND", "OR"]), inner, inner),
    max_leaves=16,
)


@settings(max_examples=300)
@given(ast_strategy)
def test_roundtrip_property(ast):
    assert parse(render(ast)) == ast


def test_normalize_incident_rule():
    rule = compile_rule(LISTING_4)
    assert rule.requirement_maps() == [{"packetLoss": 5, "temperature": 1}, {"powerConsumption": 1}]
    assert [c.index for c in rule.cases] == [0, 1]
    assert rule.event_types == ("packetLoss", "temperature", "powerConsumption")
    assert rule.source_text == LISTING_4


def test_normalize_single_leaf():
    assert compile_rule("1:a").requirement_maps() == [{"a": 1}]


def test_normalize_distribution_matches_brute_force():
    text = "AND(OR(1:a,1:b),OR(1:c,1:d))"
    cases = compile_rule(text).requirement_maps()
    assert cases == [{"a": 1, "c": 1}, {"a": 1, "d": 1}, {"b": 1, "c": 1}, {"b": 1, "d": 1}]
    brute = minimal_satisfying(parse(text), bound=2)
    assert sorted(map(sorted, (c.items() for c in cases))) == sorted(map(sorted, (c.items() for c in brute)))


def test_repeated_type_in_conjunction_sums():
    assert compile_rule("AND(2:a,3:a)").requirement_maps() == [{"a": 5}]
    assert compile_rule("AND(OR(1:a,1:b),1:a)").requirement_maps() == [{"a": 2}, {"b": 1, "a": 1}]


def test_duplicate_cases_keep_first_position():
    assert compile_rule("OR(1:a,1:a)").requirement_maps() == [{"a": 1}]
    rule = compile_rule("OR(OR(1:b,AND(1:a,1:c)),AND(1:c,1:a))")
    assert rule.requirement_maps() == [{"b": 1}, {"a": 1, "c": 1}]


def test_normalize_is_deterministic():
    text = "OR(AND(OR(1:a,2:b),OR(1:c,1:a)),AND(3:d,OR(1:b,1:a)))"
    assert compile_rule(text).requirement_maps() == compile_rule(text).requirement_maps()


def _balanced_and(names):
    if len(names) == 1:
        return f"OR(1:{names[0]}x,1:{names[0]}y)"
    mid = len(names) // 2
    return f"AND({_balanced_and(names[:mid])},{_balanced_and(names[mid:])})"


def test_case_cap():
    names = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k"]
    assert len(compile_rule(_balanced_and(names[:10])).cases) == MAX_CASES
    with pytest.raises(CaseExplosion):
        compile_rule(_balanced_and(names))


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_cases_agree_with_ast_semantics(rng):
    ast = random_ast(rng, depth=4, max_count=3)
    rule = normalize(ast)
    types = ast_types(ast)
    for _ in range(10):
        counts = {t: rng.randint(0, 6) for t in types}
        assert any(c.satisfied_by(counts) for c in rule.cases) == satisfied(ast, counts), (render(ast), counts)


def test_case_invariants_on_random_rules():
    rng = random.Random(99)
    for _ in range(300):
        rule = normalize(random_ast(rng))
        maps = rule.requirement_maps()
        assert 1 <= len(maps) <= MAX_CASES
        assert all(maps) and all(n >= 1 for m in maps for n in m.values())
        assert len({frozenset(m.items()) for m in maps}) == len(maps)
        assert [c.index for c in rule.cases] == list(range(len(maps)))
