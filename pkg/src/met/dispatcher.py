"""Dispatcher: routes producer events to the invokers subscribed to their type.

Each subscribed trigger receives every event of its types on exactly one of
its replicas, chosen round-robin per (event type, trigger) on this
dispatcher. Apart from those cursors the dispatcher keeps no event state.
"""

from __future__ import annotations

import asyncio
import base64
import binascii
import json
import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Sequence, Tuple

from aiohttp import web

from . import wire
from .config import split_hostport

log = logging.getLogger(__name__)

EVENT_TYPE_RE = re.compile(r"[a-zA-Z]+")


class Route:
    __slots__ = ("trigger_id", "endpoints", "cursor")

    def __init__(self, trigger_id: str, endpoints: Sequence[str]):
        self.trigger_id = trigger_id
        self.endpoints = tuple(endpoints)
        self.cursor = 0

    def next_endpoint(self) -> str:
        endpoint = self.endpoints[self.cursor]
        self.cursor = (self.cursor + 1) % len(self.endpoints)
        return endpoint


@dataclass(frozen=True)
class Subscription:
    trigger_id: str
    event_types: Tuple[str, ...]
    endpoints: Tuple[str, ...]


class SubscriptionTable:
    """Event type -> routes. Updates publish a fresh snapshot atomically."""

    def __init__(self) -> None:
        self._subs: Dict[str, Subscription] = {}
        self._routes: Dict[str, Tuple[Route, ...]] = {}
        self._lock = threading.Lock()

    def subscribe(self, trigger_id: str, event_types: Sequence[str], endpoints: Sequence[str]) -> None:
        if not isinstance(trigger_id, str) or not trigger_id:
            raise ValueError("triggerId must be a non-empty string")
        if isinstance(event_types, str) or not event_types:
            raise ValueError("eventTypes must be a non-empty list")
        for t in event_types:
            if not isinstance(t, str) or not EVENT_TYPE_RE.fullmatch(t):
                raise ValueError(f"invalid event type {t!r}")
        if isinstance(endpoints, str) or not endpoints:
            raise ValueError("replicaEndpoints must be a non-empty list")
        for e in endpoints:
            split_hostport(e)
        with self._lock:
            self._subs[trigger_id] = Subscription(
                trigger_id, tuple(dict.fromkeys(event_types)), tuple(endpoints)
            )
            self._rebuild()

    def unsubscribe(self, trigger_id: str) -> bool:
        with self._lock:
            if self._subs.pop(trigger_id, None) is None:
                return False
            self._rebuild()
            return True

    def _rebuild(self) -> None:
        old = self._routes
        routes: Dict[str, List[Route]] = {}
        for sub in self._subs.values():
            for t in sub.event_types:
                # Keep the cursor of unchanged routes across rebuilds.
                prev = next((r for r in old.get(t, ()) if r.trigger_id == sub.trigger_id), None)
                if prev is not None and prev.endpoints == sub.endpoints:
                    route = prev
                else:
                    route = Route(sub.trigger_id, sub.endpoints)
                routes.setdefault(t, []).append(route)
        self._routes = {t: tuple(rs) for t, rs in routes.items()}

    def routes(self, event_type: str) -> Tuple[Route, ...]:
        return self._routes.get(event_type, ())

    def subscriptions(self) -> List[Subscription]:
        return list(self._subs.values())


class EventIds:
    """Sortable unique ids: millisecond clock, per-process node tag, counter."""

    def __init__(self, node: Optional[str] = None):
        self.node = node or os.urandom(4).hex()
        self._counter = 0

    def next(self) -> str:
        self._counter += 1
        return f"{time.time_ns() // 1_000_000:012x}{self.node}{self._counter:010x}"


def _expire(fut: asyncio.Future) -> None:
    if not fut.done():
        fut.set_exception(asyncio.TimeoutError())


class InvokerLink(asyncio.Protocol):
    """Persistent client connection to one invoker's intake, with pipelined replies."""

    def __init__(self, endpoint: str):
        self.endpoint = endpoint
        self.host, self.port = split_hostport(endpoint)
        self.transport: Optional[asyncio.Transport] = None
        self._decoder = wire.FrameDecoder()
        self._pending: Deque[asyncio.Future] = deque()
        self._connecting: Optional[asyncio.Future] = None

    async def _ensure_connected(self) -> None:
        if self.transport is not None and not self.transport.is_closing():
            return
        if self._connecting is None:
            loop = asyncio.get_running_loop()
            self._connecting = loop.create_task(
                loop.create_connection(lambda: self, self.host, self.port)
            )
        try:
            await asyncio.shield(self._connecting)
        finally:
            if self._connecting is not None and self._connecting.done():
                self._connecting = None

    async def request(self, frame: dict, timeout: Optional[float] = None) -> dict:
        await self._ensure_connected()
        loop = asyncio.get_running_loop()
        fut = loop.create_future()
        self._pending.append(fut)
        self.transport.write(wire.encode_frame(frame))
        if timeout is None:
            return await fut
        timer = loop.call_later(timeout, _expire, fut)
        try:
            return await fut
        finally:
            timer.cancel()

    def connection_made(self, transport) -> None:
        self.transport = transport
        self._decoder = wire.FrameDecoder()

    def data_received(self, data: bytes) -> None:
        try:
            replies = self._decoder.feed(data)
        except (wire.FrameError, ValueError) as exc:
            log.warning("bad reply stream from %s: %s", self.endpoint, exc)
            self.transport.close()
            return
        for reply in replies:
            fut = self._pending.popleft()
            if not fut.done():
                fut.set_result(reply)

    def connection_lost(self, exc) -> None:
        self.transport = None
        while self._pending:
            fut = self._pending.popleft()
            if not fut.done():
                fut.set_exception(ConnectionError(f"connection to {self.endpoint} lost"))

    def close(self) -> None:
        if self.transport is not None:
            self.transport.close()


class Dispatcher:
    def __init__(self, delivery_log: Optional[str] = None, forward_timeout: float = 120.0):
        self.table = SubscriptionTable()
        self.ids = EventIds()
        self.forward_timeout = forward_timeout
        self._links: Dict[str, InvokerLink] = {}
        self._log_fh = open(delivery_log, "a", encoding="utf-8") if delivery_log else None
        self.metrics = {"eventsReceived": 0, "forwarded": 0, "dropped": 0}

    def link(self, endpoint: str) -> InvokerLink:
        link = self._links.get(endpoint)
        if link is None:
            link = self._links[endpoint] = InvokerLink(endpoint)
        return link

    async def ingest(self, event_type: str, payload: bytes, created_at: Optional[int] = None) -> dict:
        """Forward one producer event to one replica of every subscribed trigger."""
        if not EVENT_TYPE_RE.fullmatch(event_type):
            raise ValueError(f"invalid event type {event_type!r}")
        event_id = self.ids.next()
        self.metrics["eventsReceived"] += 1
        routes = self.table.routes(event_type)
        if not routes:
            return {"eventId": event_id, "deliveredTo": 0, "dropped": 0}
        base = {
            "id": event_id,
            "type": event_type,
            "createdAt": time.time_ns() if created_at is None else int(created_at),
            "payload": wire.b64(payload),
        }
        targets = [(route.trigger_id, route.next_endpoint()) for route in routes]
        if len(targets) == 1:
            base["triggerId"] = targets[0][0]
            results = [await self._forward(base, targets[0][1])]
        else:
            results = await asyncio.gather(
                *(self._forward(dict(base, triggerId=tid), endpoint) for tid, endpoint in targets)
            )
        dropped = 0
        for (tid, endpoint), reply in zip(targets, results):
            if reply.get("ok"):
                if self._log_fh is not None:
                    self._log_fh.write(
                        json.dumps({"eventId": event_id, "triggerId": tid, "replica": endpoint},
                                   separators=(",", ":")) + "\n"
                    )
            else:
                dropped += 1
        self.metrics["forwarded"] += len(targets) - dropped
        self.metrics["dropped"] += dropped
        return {"eventId": event_id, "deliveredTo": len(routes), "dropped": dropped}

    async def _forward(self, frame: dict, endpoint: str) -> dict:
        try:
            return await self.link(endpoint).request(frame, self.forward_timeout)
        except (OSError, ConnectionError, asyncio.TimeoutError) as exc:
            log.warning("dropping event %s for %s at %s: %r", frame["id"], frame["triggerId"], endpoint, exc)
            return {"ok": False, "error": "ConnectionFailed"}

    def flush(self) -> None:
        if self._log_fh is not None:
            self._log_fh.flush()

    async def close(self) -> None:
        for link in self._links.values():
            link.close()
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None


def dispatcher_app(dispatcher: Dispatcher) -> web.Application:
    routes = web.RouteTableDef()

    @routes.get("/health")
    async def health(request):
        return web.json_response({"status": "ok"})

    @routes.post("/events")
    async def post_event(request):
        try:
            body = await request.json()
            event_type = body["type"]
            payload = base64.b64decode(body.get("payload") or "", validate=True)
            created_at = body.get("createdAt")
            ack = await dispatcher.ingest(event_type, payload, created_at)
        except (ValueError, KeyError, TypeError, binascii.Error) as exc:
            return web.json_response({"error": "BadRequest", "message": str(exc)}, status=400)
        return web.json_response(ack)

    @routes.post("/subscriptions")
    async def subscribe(request):
        try:
            body = await request.json()
            dispatcher.table.subscribe(body["triggerId"], body["eventTypes"], body["replicaEndpoints"])
        except (ValueError, KeyError, TypeError) as exc:
            return web.json_response({"error": "BadAnnouncement", "message": str(exc)}, status=400)
        return web.json_response({"triggerId": body["triggerId"]})

    @routes.delete("/subscriptions/{trigger_id}")
    async def unsubscribe(request):
        trigger_id = request.match_info["trigger_id"]
        if not dispatcher.table.unsubscribe(trigger_id):
            return web.json_response({"error": "UnknownTrigger", "triggerId": trigger_id}, status=404)
        return web.json_response({"triggerId": trigger_id})

    @routes.get("/subscriptions")
    async def list_subscriptions(request):
        return web.json_response({"subscriptions": [
            {"triggerId": s.trigger_id, "eventTypes": list(s.event_types), "replicaEndpoints": list(s.endpoints)}
            for s in dispatcher.table.subscriptions()
        ]})

    @routes.get("/metrics")
    async def metrics(request):
        dispatcher.flush()
        return web.json_response(dispatcher.metrics)

    app = web.Application()
    app.add_routes(routes)
    return app


async def serve_dispatcher(dispatcher: Dispatcher, host: str, port: int) -> web.AppRunner:
    runner = web.AppRunner(dispatcher_app(dispatcher), access_log=None)
    await runner.setup()
    await web.TCPSite(runner, host, port).start()
    return runner
