"""Trigger-rule language: parsing, rendering and case normalization.

A rule is either a leaf ``<count>:<type>`` or a binary condition
``AND(<rule>,<rule>)`` / ``OR(<rule>,<rule>)``. Whitespace between tokens is
ignored. Normalization flattens a rule into an ordered list of disjunctive
cases, each case a mapping from event type to the number of events it needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple, Union

MAX_COUNT = 1_000_000
MAX_CASES = 1024

CONDITIONS = ("AND", "OR")
_WHITESPACE = " \t\r\n"


class RuleSyntaxError(ValueError):
    """Rule text is not derivable from the grammar."""

    def __init__(self, message: str, position: int, expected: str):
        super().__init__(f"{message} at offset {position} (expected {expected})")
        self.position = position
        self.expected = expected
        self.reason = message


class CaseExplosion(ValueError):
    """Normalization would produce more than ``MAX_CASES`` cases."""


@dataclass(frozen=True)
class Leaf:
    count: int
    event_type: str


@dataclass(frozen=True)
class Node:
    condition: str
    left: "RuleAst"
    right: "RuleAst"


RuleAst = Union[Leaf, Node]


@dataclass(frozen=True, eq=False)
class CaseRequirement:
    index: int
    requirements: Mapping[str, int]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CaseRequirement):
            return NotImplemented
        return self.index == other.index and dict(self.requirements) == dict(other.requirements)

    def __hash__(self) -> int:
        return hash((self.index, frozenset(self.requirements.items())))

    def satisfied_by(self, counts: Mapping[str, int]) -> bool:
        return all(counts.get(t, 0) >= n for t, n in self.requirements.items())


@dataclass(frozen=True)
class NormalizedRule:
    cases: Tuple[CaseRequirement, ...]
    source_text: str

    @property
    def event_types(self) -> Tuple[str, ...]:
        """Distinct event types in first-appearance order across cases."""
        seen: Dict[str, None] = {}
        for case in self.cases:
            for t in case.requirements:
                seen.setdefault(t, None)
        return tuple(seen)

    def requirement_maps(self) -> List[Dict[str, int]]:
        return [dict(c.requirements) for c in self.cases]


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in _WHITESPACE:
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, char: str) -> None:
        if self.peek() != char:
            found = repr(self.text[self.pos]) if self.pos < len(self.text) else "end of input"
            raise RuleSyntaxError(f"unexpected {found}", self.pos, repr(char))
        self.pos += 1

    def take_while(self, pred) -> str:
        start = self.pos
        while self.pos < len(self.text) and pred(self.text[self.pos]):
            self.pos += 1
        return self.text[start:self.pos]

    def rule(self) -> RuleAst:
        ch = self.peek()
        start = self.pos
        if ch.isascii() and ch.isdigit():
            digits = self.take_while(lambda c: c.isascii() and c.isdigit())
            count = int(digits)
            if count < 1:
                raise RuleSyntaxError("count must be at least 1", start, "count >= 1")
            if count > MAX_COUNT:
                raise RuleSyntaxError(f"count exceeds {MAX_COUNT}", start, f"count <= {MAX_COUNT}")
            self.expect(":")
            self.skip_ws()
            type_start = self.pos
            name = self.take_while(_is_type_char)
            if not name:
                raise RuleSyntaxError("missing event type", type_start, "event type [a-zA-Z]+")
            return Leaf(count, name)
        if _is_type_char(ch):
            word = self.take_while(_is_type_char)
            if word not in CONDITIONS:
                raise RuleSyntaxError(f"unknown condition {word!r}", start, "count or AND/OR")
            self.expect("(")
            left = self.rule()
            self.expect(",")
            right = self.rule()
            self.expect(")")
            return Node(word, left, right)
        found = repr(ch) if ch else "end of input"
        raise RuleSyntaxError(f"unexpected {found}", self.pos, "count or AND/OR")


def _is_type_char(c: str) -> bool:
    return c.isascii() and c.isalpha()


def parse(text: str) -> RuleAst:
    """Parse rule text into an AST, raising ``RuleSyntaxError`` on any deviation."""
    parser = _Parser(text)
    ast = parser.rule()
    parser.skip_ws()
    if parser.pos != len(text):
        raise RuleSyntaxError("trailing input", parser.pos, "end of input")
    return ast


def render(ast: RuleAst) -> str:
    if isinstance(ast, Leaf):
        return f"{ast.count}:{ast.event_type}"
    return f"{ast.condition}({render(ast.left)},{render(ast.right)})"


def _key(case: Mapping[str, int]) -> frozenset:
    return frozenset(case.items())


def _dedup(cases: List[Dict[str, int]]) -> List[Dict[str, int]]:
    seen = set()
    out = []
    for case in cases:
        k = _key(case)
        if k not in seen:
            seen.add(k)
            out.append(case)
    return out


def _cases(ast: RuleAst) -> List[Dict[str, int]]:
    # Case counts never shrink when combining sub-rules (AND is injective per
    # operand after dedup), so checking the cap on every sub-result is exact.
    if isinstance(ast, Leaf):
        return [{ast.event_type: ast.count}]
    left = _cases(ast.left)
    right = _cases(ast.right)
    if ast.condition == "OR":
        combined = _dedup(left + right)
    else:
        combined = []
        seen = set()
        for lc in left:
            for rc in right:
                merged = dict(lc)
                for t, n in rc.items():
                    merged[t] = merged.get(t, 0) + n
                k = _key(merged)
                if k in seen:
                    continue
                seen.add(k)
                combined.append(merged)
                if len(combined) > MAX_CASES:
                    break
    if len(combined) > MAX_CASES:
        raise CaseExplosion(f"rule expands to more than {MAX_CASES} cases")
    return combined


def normalize(ast: RuleAst, source_text: str | None = None) -> NormalizedRule:
    """Expand a rule into its disjunctive cases.

    AND distributes over OR with the left operand's cases enumerated first.
    Leaves of the same type inside one case add up their counts, and duplicate
    cases keep only their earliest position.
    """
    cases = _cases(ast)
    return NormalizedRule(
        cases=tuple(CaseRequirement(i, c) for i, c in enumerate(cases)),
        source_text=render(ast) if source_text is None else source_text,
    )


def compile_rule(text: str) -> NormalizedRule:
    return normalize(parse(text), text)
