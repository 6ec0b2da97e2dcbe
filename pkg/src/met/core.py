"""Trigger handlers: per-type trigger sets, fulfillment checks and consumption."""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, Iterator, List, Optional, Tuple

from .rules import NormalizedRule

DEFAULT_HIGH_WATER = 1_000_000


class TriggerError(Exception):
    """Base class for trigger-state errors."""


class DuplicateTriggerId(TriggerError):
    pass


class UnknownTrigger(TriggerError):
    pass


class UnknownEventType(TriggerError):
    """An event reached a handler whose rule does not mention its type."""


class Backpressure(TriggerError):
    """A trigger set reached its high-water mark; the event was not accepted."""

    def __init__(self, trigger_id: str, event_type: str, retry_after: float = 1.0):
        super().__init__(f"trigger {trigger_id}: trigger set {event_type!r} is full")
        self.trigger_id = trigger_id
        self.event_type = event_type
        self.retry_after = retry_after


@dataclass(frozen=True)
class Event:
    id: str
    event_type: str
    payload: bytes = b""
    created_at: int = 0
    arrival_seq: int = -1


@dataclass
class FiringRecord:
    trigger_id: str
    case_index: int
    consumed: Dict[str, List[Event]]
    fired_at: int
    fulfilling_event_id: str

    def signature(self) -> Tuple[int, Tuple[Tuple[str, Tuple[str, ...]], ...]]:
        """Comparable identity: case index plus consumed event ids per type."""
        return (
            self.case_index,
            tuple(sorted((t, tuple(e.id for e in evs)) for t, evs in self.consumed.items())),
        )


@dataclass
class HandlerStats:
    events_received: int = 0
    firings: List[int] = field(default_factory=list)

    @property
    def total_firings(self) -> int:
        return sum(self.firings)


@dataclass(frozen=True)
class HandlerSnapshot:
    trigger_id: str
    queue_lengths: Dict[str, int]
    events_received: int
    firings: Tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "triggerId": self.trigger_id,
            "queueLengths": self.queue_lengths,
            "eventsReceived": self.events_received,
            "firings": list(self.firings),
        }


class TriggerHandler:
    """State machine for one trigger.

    Ingests are serialized by an internal lock. After every completed ingest
    no case of the rule is satisfied by the trigger-set sizes.
    """

    def __init__(
        self,
        trigger_id: str,
        rule: NormalizedRule,
        function_url: str,
        high_water: int = DEFAULT_HIGH_WATER,
        clock: Callable[[], int] = time.time_ns,
    ):
        for case in rule.cases:
            for t, n in case.requirements.items():
                if n > high_water:
                    raise ValueError(
                        f"case {case.index} needs {n} events of {t!r}, above the "
                        f"high-water mark {high_water}"
                    )
        self.trigger_id = trigger_id
        self.rule = rule
        self.function_url = function_url
        self.high_water = high_water
        self.trigger_sets: Dict[str, Deque[Event]] = {t: deque() for t in rule.event_types}
        self.stats = HandlerStats(firings=[0] * len(rule.cases))
        self._clock = clock
        self._seq = 0
        self._lock = threading.Lock()
        # Only cases mentioning the arriving type can become satisfied.
        self._cases_by_type: Dict[str, List[Tuple[int, Tuple[Tuple[str, int], ...]]]] = {
            t: [
                (c.index, tuple(c.requirements.items()))
                for c in rule.cases
                if t in c.requirements
            ]
            for t in rule.event_types
        }
        self._all_cases = [tuple(c.requirements.items()) for c in rule.cases]

    def ingest(self, event: Event) -> Optional[FiringRecord]:
        with self._lock:
            queue = self.trigger_sets.get(event.event_type)
            if queue is None:
                raise UnknownEventType(
                    f"trigger {self.trigger_id} has no trigger set for {event.event_type!r}"
                )
            if len(queue) >= self.high_water:
                raise Backpressure(self.trigger_id, event.event_type)
            # Direct construction: dataclasses.replace is slow on this hot path.
            queue.append(Event(event.id, event.event_type, event.payload, event.created_at, self._seq))
            self._seq += 1
            self.stats.events_received += 1

            sets = self.trigger_sets
            for index, reqs in self._cases_by_type[event.event_type]:
                if all(len(sets[t]) >= n for t, n in reqs):
                    break
            else:
                return None
            consumed = {t: [sets[t].popleft() for _ in range(n)] for t, n in reqs}
            # No case held before this arrival, so one firing restores quiescence.
            assert self.is_quiescent(), f"trigger {self.trigger_id} still satisfied after firing"
            self.stats.firings[index] += 1
            return FiringRecord(
                trigger_id=self.trigger_id,
                case_index=index,
                consumed=consumed,
                fired_at=self._clock(),
                fulfilling_event_id=event.id,
            )

    def queue_lengths(self) -> Dict[str, int]:
        return {t: len(q) for t, q in self.trigger_sets.items()}

    def is_quiescent(self) -> bool:
        sets = self.trigger_sets
        return not any(all(len(sets[t]) >= n for t, n in reqs) for reqs in self._all_cases)

    def queued_events(self) -> int:
        return sum(len(q) for q in self.trigger_sets.values())

    def snapshot(self) -> HandlerSnapshot:
        with self._lock:
            return HandlerSnapshot(
                trigger_id=self.trigger_id,
                queue_lengths=self.queue_lengths(),
                events_received=self.stats.events_received,
                firings=tuple(self.stats.firings),
            )


class HandlerRegistry:
    """Trigger handlers keyed by trigger id."""

    def __init__(self, high_water: int = DEFAULT_HIGH_WATER):
        self.high_water = high_water
        self._handlers: Dict[str, TriggerHandler] = {}
        self._lock = threading.Lock()

    def create_handler(self, trigger_id: str, rule: NormalizedRule, function_url: str) -> TriggerHandler:
        with self._lock:
            if trigger_id in self._handlers:
                raise DuplicateTriggerId(trigger_id)
            handler = TriggerHandler(trigger_id, rule, function_url, high_water=self.high_water)
            self._handlers[trigger_id] = handler
            return handler

    def get(self, trigger_id: str) -> TriggerHandler:
        try:
            return self._handlers[trigger_id]
        except KeyError:
            raise UnknownTrigger(trigger_id) from None

    def remove(self, trigger_id: str) -> TriggerHandler:
        with self._lock:
            try:
                return self._handlers.pop(trigger_id)
            except KeyError:
                raise UnknownTrigger(trigger_id) from None

    def __contains__(self, trigger_id: str) -> bool:
        return trigger_id in self._handlers

    def __iter__(self) -> Iterator[TriggerHandler]:
        return iter(list(self._handlers.values()))

    def __len__(self) -> int:
        return len(self._handlers)
