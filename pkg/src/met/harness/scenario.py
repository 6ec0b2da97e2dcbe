"""Workload scenarios and the deterministic event schedule."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Tuple

MODES = ("deterministic", "stochastic", "closed")

INCIDENT_RULE = "OR(AND(5:packetLoss,1:temperature),1:powerConsumption)"
SMART_HOME_RULE = "OR(AND(6:temperature,6:wind),AND(1:temperature,1:motion))"


@dataclass
class EventStream:
    event_type: str
    rate_per_minute: float = 0.0
    payload_bytes: int = 0
    virtual_users: int = 1

    def __post_init__(self):
        if self.rate_per_minute < 0:
            raise ValueError(f"negative rate for {self.event_type}")
        if self.payload_bytes < 0:
            raise ValueError(f"negative payload size for {self.event_type}")
        if self.virtual_users < 1:
            raise ValueError(f"stream {self.event_type} needs at least one virtual user")


@dataclass
class TriggerSpec:
    rule: str
    partitions: int = 1
    copies: int = 1
    function_url: Optional[str] = None


@dataclass
class Topology:
    dispatchers: int = 1
    invokers: int = 1


@dataclass
class Scenario:
    name: str
    event_streams: List[EventStream]
    duration_seconds: float
    triggers: List[TriggerSpec] = field(default_factory=list)
    topology: Topology = field(default_factory=Topology)
    mode: str = "deterministic"
    time_compression: float = 1.0
    seed: int = 0
    max_events: Optional[int] = None

    def __post_init__(self):
        if self.duration_seconds <= 0:
            raise ValueError("duration must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.time_compression <= 0:
            raise ValueError("time compression must be positive")

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        return cls(
            name=data["name"],
            event_streams=[
                EventStream(
                    event_type=s["eventType"],
                    rate_per_minute=s.get("ratePerMinute", 0.0),
                    payload_bytes=s.get("payloadBytes", 0),
                    virtual_users=s.get("virtualUsers", 1),
                )
                for s in data["eventStreams"]
            ],
            duration_seconds=data["durationSeconds"],
            triggers=[
                TriggerSpec(
                    rule=t["rule"],
                    partitions=t.get("partitions", 1),
                    copies=t.get("copies", 1),
                    function_url=t.get("functionUrl"),
                )
                for t in data.get("triggers", [])
            ],
            topology=Topology(**data.get("topology", {})),
            mode=data.get("mode", "deterministic"),
            time_compression=data.get("timeCompression", 1.0),
            seed=data.get("seed", 0),
            max_events=data.get("maxEvents"),
        )

    @classmethod
    def load(cls, path: str) -> "Scenario":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "eventStreams": [
                {
                    "eventType": s.event_type,
                    "ratePerMinute": s.rate_per_minute,
                    "payloadBytes": s.payload_bytes,
                    "virtualUsers": s.virtual_users,
                }
                for s in self.event_streams
            ],
            "durationSeconds": self.duration_seconds,
            "triggers": [
                {k: v for k, v in {
                    "rule": t.rule, "partitions": t.partitions, "copies": t.copies,
                    "functionUrl": t.function_url,
                }.items() if v is not None}
                for t in self.triggers
            ],
            "topology": {"dispatchers": self.topology.dispatchers, "invokers": self.topology.invokers},
            "mode": self.mode,
            "timeCompression": self.time_compression,
            "seed": self.seed,
        }
        if self.max_events is not None:
            out["maxEvents"] = self.max_events
        return out


def deterministic_schedule(scenario: Scenario) -> List[Tuple[int, int, str]]:
    """(offset_ns, stream_index, event_type) for every event, ordered by time.

    Event ``i`` of a stream with rate ``r`` per minute is due at
    ``floor(i * 60 s / r)``; simultaneous events keep stream order.
    """
    duration_ns = int(Fraction(str(scenario.duration_seconds)) * 1_000_000_000)
    schedule = []
    for index, stream in enumerate(scenario.event_streams):
        rate = Fraction(str(stream.rate_per_minute))
        if rate == 0:
            continue
        i = 0
        while True:
            offset = int(i * 60_000_000_000 / rate)
            if offset >= duration_ns:
                break
            schedule.append((offset, index, stream.event_type))
            i += 1
    schedule.sort(key=lambda e: (e[0], e[1]))
    if scenario.max_events is not None:
        schedule = schedule[: scenario.max_events]
    return schedule


def incident_detection(duration_seconds: float = 600, time_compression: float = 1.0) -> Scenario:
    """Data-center incident detection: three sensor types feeding one trigger."""
    return Scenario(
        name="incident-detection",
        event_streams=[
            EventStream("packetLoss", 180, payload_bytes=8, virtual_users=20),
            EventStream("temperature", 36, payload_bytes=200, virtual_users=10),
            EventStream("powerConsumption", 18, payload_bytes=8, virtual_users=10),
        ],
        duration_seconds=duration_seconds,
        triggers=[TriggerSpec(INCIDENT_RULE)],
        topology=Topology(dispatchers=3, invokers=1),
        mode="deterministic",
        time_compression=time_compression,
    )


def concurrent_requests(clients: int, nodes: int = 1, duration_seconds: float = 60) -> Scenario:
    """Closed-loop load on one count trigger spread over every node."""
    return Scenario(
        name=f"concurrent-requests-{nodes}n-{clients}c",
        event_streams=[EventStream("a", 0, payload_bytes=1024, virtual_users=clients)],
        duration_seconds=duration_seconds,
        triggers=[TriggerSpec("3:a", partitions=nodes)],
        topology=Topology(dispatchers=nodes, invokers=nodes),
        mode="closed",
    )


def concurrent_triggers(copies: int, duration_seconds: float = 60, virtual_users: int = 128) -> Scenario:
    """Closed-loop load on ``copies`` identical AND triggers hosted by one invoker."""
    half = max(1, virtual_users // 2)
    return Scenario(
        name=f"concurrent-triggers-{copies}",
        event_streams=[
            EventStream("a", 0, payload_bytes=1024, virtual_users=half),
            EventStream("b", 0, payload_bytes=1024, virtual_users=half),
        ],
        duration_seconds=duration_seconds,
        triggers=[TriggerSpec("AND(2:a,2:b)", copies=copies)],
        topology=Topology(dispatchers=1, invokers=1),
        mode="closed",
    )
