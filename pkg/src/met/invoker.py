"""Invoker: hosts trigger handlers and invokes functions when they fire.

Events arrive from dispatchers as length-prefixed frames on a persistent TCP
connection; every frame gets exactly one reply frame, in order. Registration
and inspection use a small HTTP/JSON admin API.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import aiohttp
from aiohttp import web

from . import wire
from .config import Deployment, InvokerEndpoint, is_http_url
from .core import (
    DEFAULT_HIGH_WATER,
    Backpressure,
    DuplicateTriggerId,
    Event,
    FiringRecord,
    HandlerRegistry,
    UnknownEventType,
    UnknownTrigger,
)
from .rules import CaseExplosion, RuleSyntaxError, compile_rule

log = logging.getLogger(__name__)


class RegistrationError(ValueError):
    """Registration request rejected before any state changed."""


class PropagationError(RuntimeError):
    """A peer invoker or dispatcher could not be reached during (de)registration."""


@dataclass
class TriggerRegistration:
    rule_text: str
    function_url: str
    partitions: int = 1
    trigger_id: str = ""
    replicas: List[str] = field(default_factory=list)
    origin: bool = True

    def to_json(self) -> dict:
        return {
            "triggerId": self.trigger_id,
            "rule": self.rule_text,
            "functionUrl": self.function_url,
            "partitions": self.partitions,
            "replicas": list(self.replicas),
            "origin": self.origin,
        }


@dataclass
class DeliveryStats:
    invocations: int = 0
    delivery_failures: int = 0


def new_trigger_id() -> str:
    return "t" + uuid.uuid4().hex[:15]


class Invoker:
    """Trigger state plus function invocation for one invoker replica."""

    def __init__(
        self,
        events_endpoint: str,
        deployment: Optional[Deployment] = None,
        high_water: int = DEFAULT_HIGH_WATER,
        arrival_log: Optional[str] = None,
        http_timeout: float = 30.0,
        max_connections: int = 1000,
    ):
        self.events_endpoint = events_endpoint
        self.deployment = deployment or Deployment()
        self.registry = HandlerRegistry(high_water=high_water)
        self.registrations: Dict[str, TriggerRegistration] = {}
        self.deliveries: Dict[str, DeliveryStats] = {}
        self._admin_lock = asyncio.Lock()
        self._tasks: set = set()
        self._session: Optional[aiohttp.ClientSession] = None
        self._http_timeout = http_timeout
        self._max_connections = max_connections
        self._arrival_fh = open(arrival_log, "a", encoding="utf-8") if arrival_log else None

    # -- lifecycle

    async def start(self) -> None:
        self._session = aiohttp.ClientSession(
            timeout=aiohttp.ClientTimeout(total=self._http_timeout),
            connector=aiohttp.TCPConnector(limit=self._max_connections),
        )

    async def close(self) -> None:
        if self._tasks:
            await asyncio.wait(list(self._tasks), timeout=5)
        if self._session is not None:
            await self._session.close()
        if self._arrival_fh is not None:
            self._arrival_fh.close()
            self._arrival_fh = None

    def flush(self) -> None:
        if self._arrival_fh is not None:
            self._arrival_fh.flush()

    # -- replicas

    def _peer_order(self) -> List[InvokerEndpoint]:
        """Configured invokers starting with this one, in config order."""
        invokers = self.deployment.invokers
        for i, inv in enumerate(invokers):
            if inv.events == self.events_endpoint:
                return invokers[i:] + invokers[:i]
        return [InvokerEndpoint(admin="", events=self.events_endpoint)]

    def _peers_of(self, reg: TriggerRegistration) -> List[InvokerEndpoint]:
        others = set(reg.replicas) - {self.events_endpoint}
        return [inv for inv in self.deployment.invokers if inv.events in others]

    @property
    def replica_count(self) -> int:
        return len(self._peer_order())

    # -- registration

    async def register(self, rule_text: str, function_url: str, partitions: int = 1) -> TriggerRegistration:
        rule = compile_rule(rule_text)
        if not is_http_url(function_url):
            raise RegistrationError(f"functionUrl must be an absolute http(s) URL: {function_url!r}")
        if not isinstance(partitions, int) or isinstance(partitions, bool):
            raise RegistrationError("partitions must be an integer")
        replicas = self._peer_order()
        if not 1 <= partitions <= len(replicas):
            raise RegistrationError(
                f"invalid partitions {partitions}: must be between 1 and {len(replicas)}"
            )
        async with self._admin_lock:
            trigger_id = new_trigger_id()
            chosen = replicas[:partitions]
            reg = TriggerRegistration(
                rule_text=rule_text,
                function_url=function_url,
                partitions=partitions,
                trigger_id=trigger_id,
                replicas=[r.events for r in chosen],
            )
            self._install(reg, rule)
            installed: List[InvokerEndpoint] = []
            announced: List[str] = []
            try:
                for peer in chosen[1:]:
                    await self._admin_call(
                        "PUT",
                        f"{peer.admin}/replicas/{trigger_id}",
                        {"rule": rule_text, "functionUrl": function_url, "partitions": partitions,
                         "replicas": reg.replicas},
                    )
                    installed.append(peer)
                for dispatcher in self.deployment.dispatchers:
                    await self._announce(dispatcher, reg, rule.event_types)
                    announced.append(dispatcher)
            except Exception as exc:
                self._uninstall(trigger_id)
                for peer in installed:
                    await self._admin_call("DELETE", f"{peer.admin}/replicas/{trigger_id}", None, strict=False)
                for dispatcher in announced:
                    await self._admin_call("DELETE", f"{dispatcher}/subscriptions/{trigger_id}", None, strict=False)
                raise PropagationError(f"registration of {trigger_id} failed: {exc}") from exc
            log.info("registered %s rule=%s partitions=%d", trigger_id, rule_text, partitions)
            return reg

    def install_replica(self, trigger_id: str, rule_text: str, function_url: str,
                        partitions: int = 1, replicas: Optional[List[str]] = None) -> TriggerRegistration:
        rule = compile_rule(rule_text)
        reg = TriggerRegistration(rule_text, function_url, partitions, trigger_id,
                                  list(replicas or [self.events_endpoint]), origin=False)
        self._install(reg, rule)
        return reg

    def _install(self, reg: TriggerRegistration, rule) -> None:
        self.registry.create_handler(reg.trigger_id, rule, reg.function_url)
        self.registrations[reg.trigger_id] = reg
        self.deliveries[reg.trigger_id] = DeliveryStats()

    def _uninstall(self, trigger_id: str) -> int:
        handler = self.registry.remove(trigger_id)
        self.registrations.pop(trigger_id, None)
        self.deliveries.pop(trigger_id, None)
        return handler.queued_events()

    async def deregister(self, trigger_id: str) -> int:
        """Remove a trigger everywhere; returns the number of queued events dropped here."""
        async with self._admin_lock:
            reg = self.registrations.get(trigger_id)
            if reg is None:
                raise UnknownTrigger(trigger_id)
            if reg.origin:
                for dispatcher in self.deployment.dispatchers:
                    await self._admin_call("DELETE", f"{dispatcher}/subscriptions/{trigger_id}", None, strict=False)
                for peer in self._peers_of(reg):
                    await self._admin_call("DELETE", f"{peer.admin}/replicas/{trigger_id}", None, strict=False)
            dropped = self._uninstall(trigger_id)
            log.info("deregistered %s, dropped %d queued events", trigger_id, dropped)
            return dropped

    def remove_replica(self, trigger_id: str) -> int:
        return self._uninstall(trigger_id)

    async def resubscribe(self) -> int:
        """Re-announce every trigger registered here to all dispatchers."""
        async with self._admin_lock:
            count = 0
            for reg in list(self.registrations.values()):
                if not reg.origin:
                    continue
                rule = self.registry.get(reg.trigger_id).rule
                for dispatcher in self.deployment.dispatchers:
                    await self._announce(dispatcher, reg, rule.event_types)
                count += 1
            return count

    async def _announce(self, dispatcher: str, reg: TriggerRegistration, event_types) -> None:
        await self._admin_call(
            "POST",
            f"{dispatcher}/subscriptions",
            {"triggerId": reg.trigger_id, "eventTypes": list(event_types), "replicaEndpoints": reg.replicas},
        )

    async def _admin_call(self, method: str, url: str, body, strict: bool = True) -> None:
        assert self._session is not None, "invoker not started"
        try:
            async with self._session.request(method, url, json=body) as resp:
                if resp.status >= 400 and strict:
                    raise PropagationError(f"{method} {url} -> {resp.status}: {await resp.text()}")
        except aiohttp.ClientError as exc:
            if strict:
                raise PropagationError(f"{method} {url} failed: {exc}") from exc
            log.warning("%s %s failed: %s", method, url, exc)

    # -- event intake

    def receive_event(self, trigger_id: str, event: Event) -> Optional[FiringRecord]:
        handler = self.registry.get(trigger_id)
        record = handler.ingest(event)
        if self._arrival_fh is not None:
            self._arrival_fh.write(json.dumps({
                "triggerId": trigger_id,
                "replica": self.events_endpoint,
                "eventId": event.id,
                "type": event.event_type,
                "createdAt": event.created_at,
                "arrivalSeq": handler.stats.events_received - 1,
            }, separators=(",", ":")) + "\n")
        if record is not None:
            self._schedule_invocation(record, handler.function_url)
        return record

    def handle_frame(self, frame: dict) -> dict:
        try:
            trigger_id = frame["triggerId"]
            event = wire.event_from_frame(frame)
        except (KeyError, TypeError, ValueError) as exc:
            return {"ok": False, "error": "BadFrame", "message": str(exc)}
        try:
            record = self.receive_event(trigger_id, event)
        except UnknownTrigger:
            return {"ok": False, "error": "UnknownTrigger", "triggerId": trigger_id}
        except UnknownEventType as exc:
            return {"ok": False, "error": "UnknownEventType", "message": str(exc)}
        except Backpressure as exc:
            return {"ok": False, "error": "Backpressure", "status": 503, "retryAfter": exc.retry_after}
        return {"ok": True, "fired": record is not None}

    # -- invocation

    def _schedule_invocation(self, record: FiringRecord, url: str) -> None:
        try:
            loop = asyncio.get_running_loop()
        except RuntimeError:
            return
        task = loop.create_task(self.invoke_function(record, url))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    async def invoke_function(self, record: FiringRecord, url: str) -> bool:
        """POST one firing to its function, once. Returns whether the sink accepted it."""
        ok = False
        try:
            record.fired_at = time.time_ns()
            body = json.dumps(wire.invocation_payload(record), separators=(",", ":"))
            assert self._session is not None, "invoker not started"
            async with self._session.post(
                url, data=body, headers={"Content-Type": "application/json"}
            ) as resp:
                await resp.read()
                ok = resp.status < 400
                if not ok:
                    log.warning("trigger %s: function %s returned %d", record.trigger_id, url, resp.status)
        except (aiohttp.ClientError, asyncio.TimeoutError) as exc:
            log.warning("trigger %s: delivery to %s failed: %r", record.trigger_id, url, exc)
        stats = self.deliveries.get(record.trigger_id)
        if stats is not None:
            stats.invocations += 1
            stats.delivery_failures += not ok
        return ok

    # -- inspection

    def list_triggers(self) -> List[dict]:
        out = []
        for trigger_id, reg in list(self.registrations.items()):
            entry = reg.to_json()
            entry.update(self.registry.get(trigger_id).snapshot().to_json())
            d = self.deliveries.get(trigger_id, DeliveryStats())
            entry["invocations"] = d.invocations
            entry["deliveryFailures"] = d.delivery_failures
            out.append(entry)
        return out

    def stats(self) -> dict:
        handlers = list(self.registry)
        return {
            "triggers": len(handlers),
            "eventsReceived": sum(h.stats.events_received for h in handlers),
            "firings": sum(h.stats.total_firings for h in handlers),
            "invocations": sum(d.invocations for d in self.deliveries.values()),
            "deliveryFailures": sum(d.delivery_failures for d in self.deliveries.values()),
            "inflight": len(self._tasks),
        }


class IntakeProtocol(asyncio.Protocol):
    """Server side of the dispatcher connection: one reply frame per event frame."""

    def __init__(self, invoker: Invoker):
        self.invoker = invoker
        self.decoder = wire.FrameDecoder()
        self.transport: Optional[asyncio.Transport] = None

    def connection_made(self, transport) -> None:
        self.transport = transport

    def data_received(self, data: bytes) -> None:
        try:
            frames = self.decoder.feed(data)
        except (wire.FrameError, ValueError) as exc:
            log.warning("closing intake connection: %s", exc)
            self.transport.close()
            return
        if frames:
            out = bytearray()
            for frame in frames:
                out += wire.encode_frame(self.invoker.handle_frame(frame))
            self.transport.write(bytes(out))


def _error(status: int, error: str, **extra) -> web.Response:
    return web.json_response({"error": error, **extra}, status=status)


def admin_app(invoker: Invoker) -> web.Application:
    routes = web.RouteTableDef()

    @routes.get("/health")
    async def health(request):
        return web.json_response({"status": "ok", "events": invoker.events_endpoint})

    @routes.post("/triggers")
    async def create_trigger(request):
        try:
            body = await request.json()
            rule_text = body["rule"]
            function_url = body["functionUrl"]
            partitions = body.get("partitions", 1)
        except (ValueError, KeyError, TypeError) as exc:
            return _error(400, "BadRequest", message=f"expected {{rule, functionUrl, partitions}}: {exc}")
        try:
            reg = await invoker.register(rule_text, function_url, partitions)
        except RuleSyntaxError as exc:
            return _error(400, "SyntaxError", message=str(exc), position=exc.position, expected=exc.expected)
        except CaseExplosion as exc:
            return _error(400, "CaseExplosion", message=str(exc))
        except (RegistrationError, ValueError) as exc:
            return _error(400, "InvalidRegistration", message=str(exc))
        except PropagationError as exc:
            return _error(502, "PropagationFailed", message=str(exc))
        return web.json_response({"triggerId": reg.trigger_id, "replicas": reg.replicas}, status=201)

    @routes.get("/triggers")
    async def list_triggers(request):
        return web.json_response({"triggers": invoker.list_triggers()})

    @routes.delete("/triggers/{trigger_id}")
    async def delete_trigger(request):
        trigger_id = request.match_info["trigger_id"]
        try:
            dropped = await invoker.deregister(trigger_id)
        except UnknownTrigger:
            return _error(404, "UnknownTrigger", triggerId=trigger_id)
        return web.json_response({"triggerId": trigger_id, "droppedEvents": dropped})

    @routes.put("/replicas/{trigger_id}")
    async def put_replica(request):
        trigger_id = request.match_info["trigger_id"]
        try:
            body = await request.json()
            invoker.install_replica(
                trigger_id, body["rule"], body["functionUrl"],
                int(body.get("partitions", 1)), body.get("replicas"),
            )
        except DuplicateTriggerId:
            return _error(409, "DuplicateTriggerId", triggerId=trigger_id)
        except (ValueError, KeyError, TypeError) as exc:
            return _error(400, "InvalidRegistration", message=str(exc))
        return web.json_response({"triggerId": trigger_id}, status=201)

    @routes.delete("/replicas/{trigger_id}")
    async def delete_replica(request):
        trigger_id = request.match_info["trigger_id"]
        try:
            dropped = invoker.remove_replica(trigger_id)
        except UnknownTrigger:
            return _error(404, "UnknownTrigger", triggerId=trigger_id)
        return web.json_response({"triggerId": trigger_id, "droppedEvents": dropped})

    @routes.post("/resubscribe")
    async def resubscribe(request):
        try:
            count = await invoker.resubscribe()
        except PropagationError as exc:
            return _error(502, "PropagationFailed", message=str(exc))
        return web.json_response({"announced": count})

    @routes.get("/stats")
    async def stats(request):
        invoker.flush()
        return web.json_response(invoker.stats())

    app = web.Application()
    app.add_routes(routes)
    return app


async def serve_invoker(
    invoker: Invoker, host: str, admin_port: int, events_port: int
) -> "tuple[web.AppRunner, asyncio.AbstractServer]":
    """Start the admin API and event intake; returns handles for shutdown."""
    await invoker.start()
    runner = web.AppRunner(admin_app(invoker), access_log=None)
    await runner.setup()
    await web.TCPSite(runner, host, admin_port).start()
    loop = asyncio.get_running_loop()
    server = await loop.create_server(lambda: IntakeProtocol(invoker), host, events_port)
    return runner, server
