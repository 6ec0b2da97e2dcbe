"""Offline metrics: latency, throughput, invocation ratio and the oracle diff."""

from __future__ import annotations

from collections import Counter, defaultdict
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from ..core import Event, FiringRecord
from ..oracle import firing_from_json, replay
from ..rules import compile_rule

CDF_POINTS = 101


class ReportError(RuntimeError):
    """The logs are inconsistent: firings that the events cannot explain, or missing ones."""


def percentiles(values_ms: Sequence[float]) -> Optional[dict]:
    if len(values_ms) == 0:
        return None
    arr = np.asarray(values_ms, dtype=float)
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    return {
        "count": int(arr.size),
        "median": float(p50),
        "p95": float(p95),
        "p99": float(p99),
        "mean": float(arr.mean()),
        "max": float(arr.max()),
    }


def cdf(values_ms: Sequence[float], points: int = CDF_POINTS) -> List[List[float]]:
    """[value, cumulative fraction] pairs at evenly spaced quantiles."""
    if len(values_ms) == 0:
        return []
    qs = np.linspace(0, 100, points)
    vals = np.percentile(np.asarray(values_ms, dtype=float), qs)
    return [[float(v), float(q / 100)] for v, q in zip(vals, qs)]


def acked_events(event_records: Iterable[dict]) -> List[dict]:
    return [r for r in event_records if r.get("status") == 200 and "eventId" in r]


def _event(rec: dict) -> Event:
    return Event(rec["eventId"], rec["type"], b"", int(rec.get("createdAt", 0)))


def expected_firings(
    triggers: Mapping[str, str],
    acked: Sequence[dict],
    arrival_records: Optional[Sequence[dict]] = None,
) -> Dict[str, List[FiringRecord]]:
    """Oracle replay per trigger.

    With arrival logs each replica's serialized arrival order is replayed on
    its own; otherwise the event log order stands in for the arrival order,
    which is only valid for a single replica fed sequentially.
    """
    expected: Dict[str, List[FiringRecord]] = {}
    if arrival_records is not None:
        streams: Dict[tuple, List[dict]] = defaultdict(list)
        for rec in arrival_records:
            streams[(rec["triggerId"], rec.get("replica", ""))].append(rec)
        for tid in triggers:
            expected[tid] = []
        for (tid, _replica), recs in sorted(streams.items()):
            if tid not in triggers:
                raise ReportError(f"arrival log mentions unknown trigger {tid}")
            recs.sort(key=lambda r: r["arrivalSeq"])
            expected[tid].extend(replay(triggers[tid], [_event(r) for r in recs], tid))
        return expected
    ordered = sorted(acked, key=lambda r: r.get("seq", 0)) if acked and "seq" in acked[0] else list(acked)
    events = [_event(r) for r in ordered]
    for tid, rule in triggers.items():
        expected[tid] = replay(rule, events, tid)
    return expected


def oracle_diff(expected: Mapping[str, List[FiringRecord]], actual: Sequence[FiringRecord]) -> dict:
    by_trigger: Dict[str, Counter] = defaultdict(Counter)
    for f in actual:
        by_trigger[f.trigger_id][f.signature()] += 1
    missing = unexpected = 0
    details = {}
    for tid in set(expected) | set(by_trigger):
        want = Counter(f.signature() for f in expected.get(tid, []))
        got = by_trigger.get(tid, Counter())
        m = sum((want - got).values())
        u = sum((got - want).values())
        if m or u:
            details[tid] = {"missing": m, "unexpected": u}
        missing += m
        unexpected += u
    return {
        "verdict": "pass" if missing == 0 and unexpected == 0 else "fail",
        "missing": missing,
        "unexpected": unexpected,
        "triggers": details,
    }


def build_report(
    event_records: Sequence[dict],
    firing_records: Sequence[dict],
    triggers: Mapping[str, str],
    arrival_records: Optional[Sequence[dict]] = None,
    duration_seconds: Optional[float] = None,
    check_oracle: bool = True,
) -> dict:
    """Metrics document for one run; raises ReportError when the logs disagree."""
    sent = [r for r in event_records if "sentAt" in r]
    acked = acked_events(event_records)
    if duration_seconds is None:
        if sent:
            end = max(r.get("ackAt", r["sentAt"]) for r in sent)
            duration_seconds = max((end - min(r["sentAt"] for r in sent)) / 1e9, 1e-9)
        else:
            duration_seconds = 0.0
    firings = [firing_from_json(r) for r in firing_records]

    known = {r["eventId"]: r for r in acked}
    for f in firings:
        if f.trigger_id not in triggers:
            raise ReportError(f"firing for unknown trigger {f.trigger_id}")
        for evs in f.consumed.values():
            for e in evs:
                if e.id not in known:
                    raise ReportError(f"firing of {f.trigger_id} consumed unlogged event {e.id}")

    latencies = [r["latencyNs"] / 1e6 for r in firing_records if "latencyNs" in r]
    ack_latencies = [(r["ackAt"] - r["sentAt"]) / 1e6 for r in acked if "ackAt" in r]

    per_trigger = {}
    for tid, rule_text in triggers.items():
        rule = compile_rule(rule_text)
        types = set(rule.event_types)
        relevant = sum(1 for r in acked if r["type"] in types)
        mine = [f for f in firings if f.trigger_id == tid]
        cases = Counter(f.case_index for f in mine)
        entry = {
            "rule": rule_text,
            "events": relevant,
            "firings": len(mine),
            "firingsByCase": [cases.get(i, 0) for i in range(len(rule.cases))],
            "invocationRatio": _ratio(relevant, len(mine)),
        }
        minutes = _firings_per_minute(mine, known, len(rule.cases))
        if minutes:
            entry["firingsPerMinute"] = minutes
        per_trigger[tid] = entry

    report = {
        "events": {"sent": len(sent), "acked": len(acked)},
        "durationSeconds": duration_seconds,
        "throughput": len(acked) / duration_seconds if duration_seconds > 0 else 0.0,
        "sentPerSecond": len(sent) / duration_seconds if duration_seconds > 0 else 0.0,
        "firings": len(firings),
        "invocationRatio": _ratio(len(acked), len(firings)),
        "latencyMs": percentiles(latencies),
        "latencyCdf": cdf(latencies),
        "ackLatencyMs": percentiles(ack_latencies),
        "triggers": per_trigger,
    }
    if check_oracle:
        expected = expected_firings(triggers, acked, arrival_records)
        diff = oracle_diff(expected, firings)
        report["oracle"] = diff
        if diff["verdict"] != "pass":
            raise ReportError(
                f"sink firings disagree with oracle replay: {diff['missing']} missing, "
                f"{diff['unexpected']} unexpected ({diff['triggers']})"
            )
    else:
        report["oracle"] = {"verdict": "skipped"}
    return report


def _ratio(events: int, firings: int) -> Optional[dict]:
    if firings == 0:
        return None
    frac = Fraction(events, firings)
    return {"value": float(frac), "events": events, "firings": firings}


def _firings_per_minute(firings: Sequence[FiringRecord], known: Mapping[str, dict], n_cases: int) -> Dict[str, List[int]]:
    """Case counts bucketed by the scheduled minute of each fulfilling event."""
    buckets: Dict[int, List[int]] = {}
    for f in firings:
        rec = known.get(f.fulfilling_event_id)
        if rec is None or "scheduledAt" not in rec:
            return {}
        minute = int(rec["scheduledAt"] // 60_000_000_000)
        buckets.setdefault(minute, [0] * n_cases)[f.case_index] += 1
    return {str(m): buckets[m] for m in sorted(buckets)}
