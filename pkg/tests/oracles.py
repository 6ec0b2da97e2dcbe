"""Test-only reference implementations, independent of the code under test."""

from __future__ import annotations

import itertools
import random
from functools import lru_cache
from typing import Dict, Iterable, List, Sequence, Tuple

from met.core import Event
from met.rules import Leaf, Node

TYPES = ("a", "b", "c", "d")


def random_ast(rng: random.Random, depth: int = 4, types: Sequence[str] = TYPES, max_count: int = 6):
    """Random rule with at most ``depth`` levels of conditions above the leaves."""
    if depth == 0 or rng.random() < 0.3:
        return Leaf(rng.randint(1, max_count), rng.choice(types))
    return Node(
        rng.choice(("AND", "OR")),
        random_ast(rng, depth - 1, types, max_count),
        random_ast(rng, depth - 1, types, max_count),
    )


def ast_types(ast) -> List[str]:
    if isinstance(ast, Leaf):
        return [ast.event_type]
    out = ast_types(ast.left)
    return out + [t for t in ast_types(ast.right) if t not in out]


def satisfied(ast, counts: Dict[str, int]) -> bool:
    """Resource semantics on the AST itself.

    A leaf n:t needs n events of t; OR needs either side; AND needs the
    available events to be split so that each side is satisfied by its share.
    """
    types = tuple(sorted(ast_types(ast)))
    return _sat(ast, types, tuple(counts.get(t, 0) for t in types))


@lru_cache(maxsize=None)
def _sat(ast, types: Tuple[str, ...], counts: Tuple[int, ...]) -> bool:
    if isinstance(ast, Leaf):
        return counts[types.index(ast.event_type)] >= ast.count
    if ast.condition == "OR":
        return _sat(ast.left, types, counts) or _sat(ast.right, types, counts)
    for split in itertools.product(*(range(c + 1) for c in counts)):
        rest = tuple(c - s for c, s in zip(counts, split))
        if _sat(ast.left, types, split) and _sat(ast.right, types, rest):
            return True
    return False


def minimal_satisfying(ast, bound: int) -> List[Dict[str, int]]:
    """All componentwise-minimal count vectors (each count <= bound) that satisfy ``ast``."""
    types = sorted(ast_types(ast))
    sat = []
    for vec in itertools.product(range(bound + 1), repeat=len(types)):
        if satisfied(ast, dict(zip(types, vec))):
            sat.append(vec)
    minimal = [
        v for v in sat
        if not any(w != v and all(x <= y for x, y in zip(w, v)) for w in sat)
    ]
    return [{t: n for t, n in zip(types, v) if n} for v in minimal]


def random_stream(rng: random.Random, types: Sequence[str], n: int, prefix: str = "e") -> List[Event]:
    weights = [rng.random() + 0.1 for _ in types]
    return [
        Event(f"{prefix}{i}", t, b"", i)
        for i, t in enumerate(rng.choices(list(types), weights=weights, k=n))
    ]


def events_of(types: Iterable[str], prefix: str = "e") -> List[Event]:
    return [Event(f"{prefix}{i}", t, b"", i) for i, t in enumerate(types)]
