"""Load generator: sends scenario events to dispatchers and logs every send."""

from __future__ import annotations

import asyncio
import base64
import json
import logging
import random
import string
import time
from dataclasses import dataclass
from typing import IO, List, Optional, Sequence

import aiohttp

from .scenario import Scenario, deterministic_schedule

log = logging.getLogger(__name__)

PAYLOAD_POOL = 32
_ALPHABET = string.ascii_letters + string.digits


class GeneratorAborted(RuntimeError):
    """The system under test became unreachable; the event log is partial."""


@dataclass
class GenerateResult:
    sent: int
    acked: int
    errors: int
    duration_seconds: float
    aborted: bool = False

    @property
    def throughput(self) -> float:
        return self.acked / self.duration_seconds if self.duration_seconds > 0 else 0.0

    def to_json(self) -> dict:
        return {
            "sent": self.sent,
            "acked": self.acked,
            "errors": self.errors,
            "durationSeconds": self.duration_seconds,
            "throughput": self.throughput,
            "aborted": self.aborted,
        }


def payload_pool(size: int, rng: random.Random, count: int = PAYLOAD_POOL) -> List[str]:
    """Base64 bodies of ``size`` random characters."""
    return [
        base64.b64encode("".join(rng.choices(_ALPHABET, k=size)).encode("ascii")).decode("ascii")
        for _ in range(count)
    ]


class _Sender:
    def __init__(self, session: aiohttp.ClientSession, dispatchers: Sequence[str], out: Optional[IO[str]],
                 max_consecutive_failures: int):
        self.session = session
        self.urls = [f"{d.rstrip('/')}/events" for d in dispatchers]
        self.out = out
        self.sent = self.acked = self.errors = 0
        self.consecutive_failures = 0
        self.max_consecutive_failures = max_consecutive_failures
        self.aborted: Optional[str] = None

    async def send(self, event_type: str, payload: str, dispatcher_index: int, **extra) -> None:
        created_at = time.time_ns()
        body = {"type": event_type, "payload": payload, "createdAt": created_at}
        url = self.urls[dispatcher_index % len(self.urls)]
        self.sent += 1
        rec = {"type": event_type, "createdAt": created_at, "sentAt": created_at, **extra}
        try:
            async with self.session.post(url, json=body) as resp:
                data = await resp.json(content_type=None)
                rec["status"] = resp.status
                if resp.status == 200:
                    rec["eventId"] = data["eventId"]
                    rec["deliveredTo"] = data["deliveredTo"]
                    rec["dropped"] = data.get("dropped", 0)
        except (aiohttp.ClientError, asyncio.TimeoutError, ValueError) as exc:
            rec["status"] = 0
            rec["error"] = repr(exc)
        rec["ackAt"] = time.time_ns()
        if rec["status"] == 200:
            self.acked += 1
            self.consecutive_failures = 0
        else:
            self.errors += 1
            if rec["status"] == 0:
                self.consecutive_failures += 1
                if self.consecutive_failures >= self.max_consecutive_failures and self.aborted is None:
                    self.aborted = rec.get("error", "unreachable")
        if self.out is not None:
            self.out.write(json.dumps(rec, separators=(",", ":")) + "\n")


async def generate(
    scenario: Scenario,
    dispatchers: Sequence[str],
    event_log: Optional[str] = None,
    max_consecutive_failures: int = 50,
    request_timeout: float = 120.0,
) -> GenerateResult:
    """Drive a scenario against the given dispatcher base URLs.

    ``deterministic`` sends the fixed schedule one event at a time, in order,
    with the schedule compressed by the scenario's time-compression factor.
    ``stochastic`` runs independent virtual users with exponential gaps at the
    configured rates. ``closed`` has every virtual user send back to back.
    """
    if not dispatchers:
        raise ValueError("need at least one dispatcher URL")
    rng = random.Random(scenario.seed)
    pools = [payload_pool(s.payload_bytes, rng) for s in scenario.event_streams]
    out = open(event_log, "w", encoding="utf-8") if event_log else None
    total_users = sum(s.virtual_users for s in scenario.event_streams)
    session = aiohttp.ClientSession(
        connector=aiohttp.TCPConnector(limit=max(total_users, 1)),
        timeout=aiohttp.ClientTimeout(total=request_timeout),
    )
    sender = _Sender(session, dispatchers, out, max_consecutive_failures)
    start = time.perf_counter()
    try:
        if scenario.mode == "deterministic":
            await _deterministic(scenario, sender, pools)
        else:
            await _virtual_users(scenario, sender, pools, rng)
    finally:
        elapsed = time.perf_counter() - start
        await session.close()
        if out is not None:
            if sender.aborted:
                out.write(json.dumps({"aborted": True, "reason": sender.aborted}) + "\n")
            out.close()
    result = GenerateResult(sender.sent, sender.acked, sender.errors, elapsed, aborted=sender.aborted is not None)
    if sender.aborted:
        raise GeneratorAborted(f"system under test unreachable: {sender.aborted} ({result.to_json()})")
    return result


async def _deterministic(scenario: Scenario, sender: _Sender, pools) -> None:
    schedule = deterministic_schedule(scenario)
    t0 = time.perf_counter()
    for n, (offset, stream, event_type) in enumerate(schedule):
        due = t0 + offset / 1e9 / scenario.time_compression
        delay = due - time.perf_counter()
        if delay > 0:
            await asyncio.sleep(delay)
        pool = pools[stream]
        await sender.send(event_type, pool[n % len(pool)], n, scheduledAt=offset, seq=n)
        if sender.aborted:
            return


async def _virtual_users(scenario: Scenario, sender: _Sender, pools, rng: random.Random) -> None:
    deadline = time.perf_counter() + scenario.duration_seconds / scenario.time_compression
    budget = [scenario.max_events if scenario.max_events is not None else -1]
    closed = scenario.mode == "closed"

    async def user(stream_index: int, user_index: int, seed: int) -> None:
        stream = scenario.event_streams[stream_index]
        if not closed and stream.rate_per_minute == 0:
            return
        local = random.Random(seed)
        pool = pools[stream_index]
        rate = stream.rate_per_minute / 60.0 / stream.virtual_users * scenario.time_compression
        next_due = time.perf_counter() + (local.expovariate(rate) if not closed else 0.0)
        n = 0
        while not sender.aborted:
            if not closed:
                delay = next_due - time.perf_counter()
                if delay > 0:
                    await asyncio.sleep(delay)
            if time.perf_counter() >= deadline:
                return
            if budget[0] == 0:
                return
            if budget[0] > 0:
                budget[0] -= 1
            await sender.send(stream.event_type, pool[n % len(pool)], user_index + n, vu=user_index)
            n += 1
            if not closed:
                next_due += local.expovariate(rate)

    tasks = []
    uid = 0
    for si, stream in enumerate(scenario.event_streams):
        for _ in range(stream.virtual_users):
            tasks.append(user(si, uid, rng.randrange(2**32)))
            uid += 1
    await asyncio.gather(*tasks)
