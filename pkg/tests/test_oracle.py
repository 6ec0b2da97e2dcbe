import io
import random
from fractions import Fraction

from met.core import Event
from met.harness.scenario import INCIDENT_RULE, deterministic_schedule, incident_detection
from met.oracle import (
    event_from_json,
    event_to_json,
    firing_from_json,
    firing_to_json,
    invocation_ratio,
    read_jsonl,
    replay,
    replay_rescan,
    signatures,
    write_jsonl,
)
from met.rules import compile_rule, render

from oracles import events_of, random_ast, random_stream


def schedule_events(duration):
    sched = deterministic_schedule(incident_detection(duration))
    return [Event(f"e{i}", t, b"", off) for i, (off, _, t) in enumerate(sched)]


def test_single_leaf():
    (f,) = replay("1:a", events_of("a"))
    assert f.case_index == 0 and [e.id for e in f.consumed["a"]] == ["e0"]


def test_incident_minute():
    firings = replay(INCIDENT_RULE, schedule_events(60))
    assert len(firings) == 54
    assert sum(f.case_index == 0 for f in firings) == 36
    assert sum(f.case_index == 1 for f in firings) == 18


def test_incident_ratio_ten_minutes():
    events = schedule_events(600)
    assert len(events) == 2340
    assert invocation_ratio(INCIDENT_RULE, events) == Fraction(2340, 540) == Fraction(13, 3)


def test_ratio_examples():
    assert invocation_ratio("1:a", events_of("a" * 17)) == 1
    assert invocation_ratio("3:a", events_of("a" * 9)) == 3
    assert invocation_ratio("3:a", events_of("aa")) is None


def test_irrelevant_types_are_skipped():
    firings = replay("2:a", events_of("azaza"))
    assert [[e.id for e in f.consumed["a"]] for f in firings] == [["e0", "e2"]]
    assert [e.arrival_seq for e in firings[0].consumed["a"]] == [0, 1]


def test_rescan_agrees_with_incremental():
    rng = random.Random(11)
    for _ in range(300):
        text = render(random_ast(rng))
        stream = random_stream(rng, compile_rule(text).event_types, rng.randint(0, 250))
        assert signatures(replay(text, stream)) == signatures(replay_rescan(text, stream))


def test_jsonl_roundtrip():
    firings = replay(INCIDENT_RULE, schedule_events(60))
    buf = io.StringIO()
    write_jsonl([firing_to_json(f) for f in firings], buf)
    buf.seek(0)
    back = [firing_from_json(r) for r in read_jsonl(buf)]
    assert signatures(back) == signatures(firings)
    ev = Event("x", "a", b"\x00\xffdata", 42, 3)
    assert event_from_json(event_to_json(ev, with_payload=True)) == ev
