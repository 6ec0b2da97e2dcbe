"""Single-threaded reference evaluator for trigger rules.

``replay`` simulates a trigger over an ordered event log without sharing any
evaluation code with :mod:`met.core`. ``replay_rescan`` is a deliberately
naive second implementation that rescans the whole arrival log for every case
on every arrival; the two are cross-checked in the tests. Neither is safe to
share between threads.
"""

from __future__ import annotations

import base64
import json
from fractions import Fraction
from typing import IO, Dict, Iterable, Iterator, List, Optional, Sequence

from .core import Event, FiringRecord
from .rules import NormalizedRule, compile_rule

ORACLE_TRIGGER = "oracle"


def _relevant(rule: NormalizedRule, events: Iterable[Event]) -> Iterator[Event]:
    types = set(rule.event_types)
    return (e for e in events if e.event_type in types)


def replay(rule_text: str, events: Iterable[Event], trigger_id: str = ORACLE_TRIGGER) -> List[FiringRecord]:
    """Expected firing sequence for ``events`` arriving in the given order.

    Events whose type does not occur in the rule are skipped, as a dispatcher
    would never route them to the trigger.
    """
    rule = compile_rule(rule_text)
    pending: Dict[str, List[Event]] = {t: [] for t in rule.event_types}
    cases = [tuple(case.items()) for case in rule.requirement_maps()]
    firings: List[FiringRecord] = []
    for seq, ev in enumerate(_relevant(rule, events)):
        pending[ev.event_type].append(Event(ev.id, ev.event_type, ev.payload, ev.created_at, seq))
        for index, case in enumerate(cases):
            if all(len(pending[t]) >= n for t, n in case):
                consumed = {}
                for t, n in case:
                    consumed[t] = pending[t][:n]
                    del pending[t][:n]
                firings.append(FiringRecord(trigger_id, index, consumed, 0, ev.id))
                break
    return firings


def replay_rescan(rule_text: str, events: Iterable[Event], trigger_id: str = ORACLE_TRIGGER) -> List[FiringRecord]:
    """Quadratic reference: rescans the full arrival log on every arrival."""
    rule = compile_rule(rule_text)
    log: List[Event] = []
    used: List[bool] = []
    firings: List[FiringRecord] = []
    for seq, ev in enumerate(_relevant(rule, events)):
        log.append(Event(ev.id, ev.event_type, ev.payload, ev.created_at, seq))
        used.append(False)
        for case in rule.cases:
            picked: Dict[str, List[int]] = {}
            for t, n in case.requirements.items():
                idx = [i for i, e in enumerate(log) if not used[i] and e.event_type == t][:n]
                if len(idx) < n:
                    break
                picked[t] = idx
            else:
                for idx in picked.values():
                    for i in idx:
                        used[i] = True
                consumed = {t: [log[i] for i in idx] for t, idx in picked.items()}
                firings.append(FiringRecord(trigger_id, case.index, consumed, 0, ev.id))
                break
    return firings


def invocation_ratio(rule_text: str, events: Sequence[Event]) -> Optional[Fraction]:
    """Baseline invocations (one per event) over MET invocations, None if no firing."""
    firings = replay(rule_text, events)
    if not firings:
        return None
    return Fraction(len(events), len(firings))


def signatures(firings: Iterable[FiringRecord]) -> list:
    return [f.signature() for f in firings]


# JSON-lines log formats shared with the harness.

def event_to_json(ev: Event, with_payload: bool = False) -> dict:
    rec = {"eventId": ev.id, "type": ev.event_type, "createdAt": ev.created_at}
    if ev.arrival_seq >= 0:
        rec["arrivalSeq"] = ev.arrival_seq
    if with_payload:
        rec["payload"] = base64.b64encode(ev.payload).decode("ascii")
    return rec


def event_from_json(rec: dict) -> Event:
    payload = rec.get("payload")
    return Event(
        id=rec["eventId"],
        event_type=rec["type"],
        payload=base64.b64decode(payload) if payload else b"",
        created_at=int(rec.get("createdAt", 0)),
        arrival_seq=int(rec.get("arrivalSeq", -1)),
    )


def firing_to_json(f: FiringRecord) -> dict:
    return {
        "triggerId": f.trigger_id,
        "caseIndex": f.case_index,
        "events": {
            t: [{"id": e.id, "createdAt": e.created_at} for e in evs]
            for t, evs in f.consumed.items()
        },
        "firedAt": f.fired_at,
        "fulfillingEventId": f.fulfilling_event_id,
    }


def firing_from_json(rec: dict) -> FiringRecord:
    consumed = {
        t: [Event(e["id"], t, b"", int(e.get("createdAt", 0))) for e in evs]
        for t, evs in rec["events"].items()
    }
    return FiringRecord(
        trigger_id=rec["triggerId"],
        case_index=int(rec["caseIndex"]),
        consumed=consumed,
        fired_at=int(rec.get("firedAt", 0)),
        fulfilling_event_id=rec.get("fulfillingEventId", ""),
    )


def read_jsonl(source: str | IO[str]) -> List[dict]:
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            return read_jsonl(fh)
    return [json.loads(line) for line in source if line.strip()]


def write_jsonl(records: Iterable[dict], target: str | IO[str]) -> None:
    if isinstance(target, str):
        with open(target, "w", encoding="utf-8") as fh:
            write_jsonl(records, fh)
        return
    for rec in records:
        target.write(json.dumps(rec, separators=(",", ":")) + "\n")
