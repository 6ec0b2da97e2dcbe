"""Mock function endpoint: timestamps and logs every invocation it receives."""

from __future__ import annotations

import asyncio
import json
import random
import time
from typing import List, Optional

from aiohttp import web


class Sink:
    """Receives invocation payloads.

    Each POST is timestamped on receipt (the moment function logic would
    start) and logged before any artificial delay or failure is applied.
    """

    def __init__(self, log_path: Optional[str] = None, delay_ms: float = 0.0,
                 failure_rate: float = 0.0, seed: int = 0):
        if not 0.0 <= failure_rate <= 1.0:
            raise ValueError("failure rate must be within [0, 1]")
        self.delay = delay_ms / 1000.0
        self.failure_rate = failure_rate
        self.received = 0
        self.failed = 0
        self.records: List[dict] = []
        self._rng = random.Random(seed)
        self._fh = open(log_path, "a", encoding="utf-8") if log_path else None

    def record(self, body: dict, received_at: int, status: int) -> dict:
        fulfilling = body.get("fulfillingEventId")
        created = None
        for evs in body.get("events", {}).values():
            for e in evs:
                e.pop("payload", None)
                if e.get("id") == fulfilling:
                    created = e.get("createdAt")
        rec = dict(body, receivedAt=received_at, status=status)
        if created is not None:
            rec["latencyNs"] = received_at - int(created)
        return rec

    async def handle(self, request: web.Request) -> web.Response:
        received_at = time.time_ns()
        try:
            body = json.loads(await request.read())
        except ValueError:
            return web.json_response({"error": "invalid JSON"}, status=400)
        self.received += 1
        fail = self.failure_rate > 0 and self._rng.random() < self.failure_rate
        status = 500 if fail else 200
        rec = self.record(body, received_at, status)
        if self._fh is not None:
            self._fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        else:
            self.records.append(rec)
        if self.delay:
            await asyncio.sleep(self.delay)
        if fail:
            self.failed += 1
            return web.json_response({"error": "injected failure"}, status=500)
        return web.json_response({"ok": True})

    async def health(self, request: web.Request) -> web.Response:
        return web.json_response({"status": "ok"})

    async def stats(self, request: web.Request) -> web.Response:
        self.flush()
        return web.json_response({"received": self.received, "failed": self.failed})

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def app(self) -> web.Application:
        app = web.Application()
        app.router.add_get("/health", self.health)
        app.router.add_get("/stats", self.stats)
        app.router.add_post("/{tail:.*}", self.handle)
        return app


async def serve_sink(sink: Sink, host: str, port: int) -> web.AppRunner:
    runner = web.AppRunner(sink.app(), access_log=None)
    await runner.setup()
    await web.TCPSite(runner, host, port).start()
    return runner
