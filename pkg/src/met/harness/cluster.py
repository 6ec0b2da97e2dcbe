"""Local deployment of sink, invokers and dispatchers as separate processes."""

from __future__ import annotations

import asyncio
import json
import logging
import os
import signal
import socket
import subprocess
import sys
import time
from typing import Dict, List, Optional, Sequence

import aiohttp

from ..config import Deployment, InvokerEndpoint
from ..oracle import read_jsonl
from .scenario import Topology, TriggerSpec

log = logging.getLogger(__name__)


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


class ClusterError(RuntimeError):
    pass


class Cluster:
    """One sink plus the topology's invokers and dispatchers, all on this host.

    Every component runs as its own ``python -m met.cli`` process and writes
    its logs under ``workdir``.
    """

    def __init__(
        self,
        topology: Topology,
        workdir: str,
        sink_delay_ms: float = 0.0,
        sink_failure_rate: float = 0.0,
        arrival_logs: bool = True,
        delivery_logs: bool = True,
        sink_log: bool = True,
        host: str = "127.0.0.1",
        high_water: Optional[int] = None,
    ):
        self.topology = topology
        self.workdir = os.path.abspath(workdir)
        self.host = host
        self.sink_delay_ms = sink_delay_ms
        self.sink_failure_rate = sink_failure_rate
        self.arrival_logs = arrival_logs
        self.delivery_logs = delivery_logs
        self.sink_log = sink_log
        self.high_water = high_water
        self.deployment = Deployment()
        self.sink_port = 0
        self._procs: List[subprocess.Popen] = []
        self._health: List[str] = []
        self._log_files = []

    @property
    def sink_url(self) -> str:
        return f"http://{self.host}:{self.sink_port}/invoke"

    @property
    def sink_admin(self) -> str:
        return f"http://{self.host}:{self.sink_port}"

    @property
    def dispatcher_urls(self) -> List[str]:
        return list(self.deployment.dispatchers)

    def path(self, name: str) -> str:
        return os.path.join(self.workdir, name)

    def _spawn(self, name: str, args: Sequence[str]) -> None:
        out = open(self.path(f"{name}.log"), "w")
        self._log_files.append(out)
        env = dict(os.environ, PYTHONUNBUFFERED="1")
        proc = subprocess.Popen(
            [sys.executable, "-m", "met.cli", *args], stdout=out, stderr=subprocess.STDOUT, env=env
        )
        self._procs.append(proc)

    async def start(self, timeout: float = 30.0) -> "Cluster":
        os.makedirs(self.workdir, exist_ok=True)
        h = self.host
        self.sink_port = free_port(h)
        invokers = [
            InvokerEndpoint(admin=f"http://{h}:{free_port(h)}", events=f"{h}:{free_port(h)}")
            for _ in range(self.topology.invokers)
        ]
        dispatchers = [f"http://{h}:{free_port(h)}" for _ in range(self.topology.dispatchers)]
        self.deployment = Deployment(dispatchers=dispatchers, invokers=invokers)
        config = self.path("deployment.json")
        self.deployment.dump(config)

        sink_args = ["sink", "--host", h, "--port", str(self.sink_port),
                     "--delay-ms", str(self.sink_delay_ms), "--failure-rate", str(self.sink_failure_rate)]
        if self.sink_log:
            sink_args += ["--log", self.path("sink.jsonl")]
        self._spawn("sink", sink_args)
        self._health.append(self.sink_admin)
        for i, d in enumerate(dispatchers):
            args = ["dispatcher", "--host", h, "--port", d.rsplit(":", 1)[1]]
            if self.delivery_logs:
                args += ["--delivery-log", self.path(f"deliveries-{i}.jsonl")]
            self._spawn(f"dispatcher-{i}", args)
            self._health.append(d)
        for i, inv in enumerate(invokers):
            args = ["invoker", "--host", h, "--config", config, "--index", str(i)]
            if self.arrival_logs:
                args += ["--arrival-log", self.path(f"arrivals-{i}.jsonl")]
            if self.high_water is not None:
                args += ["--high-water", str(self.high_water)]
            self._spawn(f"invoker-{i}", args)
            self._health.append(inv.admin)
        await self._wait_healthy(timeout)
        return self

    async def _wait_healthy(self, timeout: float) -> None:
        deadline = time.monotonic() + timeout
        async with aiohttp.ClientSession(timeout=aiohttp.ClientTimeout(total=2)) as session:
            for url in self._health:
                while True:
                    for proc in self._procs:
                        if proc.poll() is not None:
                            raise ClusterError(f"process {proc.args} exited with {proc.returncode}")
                    try:
                        async with session.get(f"{url}/health") as resp:
                            if resp.status == 200:
                                break
                    except (aiohttp.ClientError, asyncio.TimeoutError):
                        pass
                    if time.monotonic() > deadline:
                        raise ClusterError(f"{url} not healthy after {timeout}s")
                    await asyncio.sleep(0.05)

    async def register(self, specs: Sequence[TriggerSpec]) -> Dict[str, str]:
        """Register every trigger copy; returns trigger id -> rule text."""
        triggers: Dict[str, str] = {}
        invokers = self.deployment.invokers
        n = 0
        async with aiohttp.ClientSession() as session:
            for spec in specs:
                for _ in range(spec.copies):
                    origin = invokers[0] if spec.partitions > 1 else invokers[n % len(invokers)]
                    n += 1
                    body = {"rule": spec.rule, "functionUrl": spec.function_url or self.sink_url,
                            "partitions": spec.partitions}
                    async with session.post(f"{origin.admin}/triggers", json=body) as resp:
                        data = await resp.json()
                        if resp.status != 201:
                            raise ClusterError(f"registration of {spec.rule} failed: {data}")
                    triggers[data["triggerId"]] = spec.rule
        with open(self.path("triggers.json"), "w") as fh:
            json.dump(triggers, fh, indent=2)
        return triggers

    async def invoker_stats(self, session: aiohttp.ClientSession) -> List[dict]:
        out = []
        for inv in self.deployment.invokers:
            async with session.get(f"{inv.admin}/stats") as resp:
                out.append(await resp.json())
        return out

    async def drain(self, timeout: float = 120.0, poll: float = 0.1) -> None:
        """Wait until every firing has been delivered to (or rejected by) the sink."""
        deadline = time.monotonic() + timeout
        async with aiohttp.ClientSession() as session:
            while True:
                stats = await self.invoker_stats(session)
                firings = sum(s["firings"] for s in stats)
                done = sum(s["invocations"] for s in stats)
                inflight = sum(s["inflight"] for s in stats)
                if inflight == 0 and done == firings:
                    for d in self.deployment.dispatchers:
                        async with session.get(f"{d}/metrics") as resp:
                            await resp.read()
                    async with session.get(f"{self.sink_admin}/stats") as resp:
                        await resp.read()
                    return
                if time.monotonic() > deadline:
                    raise ClusterError(f"invocations still in flight after {timeout}s: {stats}")
                await asyncio.sleep(poll)

    def stop(self, timeout: float = 15.0) -> None:
        for proc in self._procs:
            if proc.poll() is None:
                proc.send_signal(signal.SIGTERM)
        for proc in self._procs:
            try:
                proc.wait(timeout=timeout)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        for fh in self._log_files:
            fh.close()
        self._procs.clear()
        self._log_files.clear()
        self._health.clear()

    async def __aenter__(self) -> "Cluster":
        try:
            return await self.start()
        except BaseException:
            self.stop()
            raise

    async def __aexit__(self, *exc) -> None:
        self.stop()

    # -- logs written by the component processes (complete after stop())

    def _read_many(self, prefix: str, count: int) -> List[dict]:
        records: List[dict] = []
        for i in range(count):
            p = self.path(f"{prefix}-{i}.jsonl")
            if os.path.exists(p):
                records.extend(read_jsonl(p))
        return records

    def arrival_records(self) -> List[dict]:
        return self._read_many("arrivals", self.topology.invokers)

    def delivery_records(self) -> List[dict]:
        return self._read_many("deliveries", self.topology.dispatchers)

    def sink_records(self) -> List[dict]:
        p = self.path("sink.jsonl")
        return read_jsonl(p) if os.path.exists(p) else []
