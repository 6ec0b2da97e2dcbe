"""Throughput experiments at desk scale and the shape checks applied to them."""

from __future__ import annotations

import asyncio
import logging
import os
import time
from typing import List, Optional, Sequence

from .cluster import Cluster
from .generate import generate
from .run import run_scenario
from .scenario import (
    EventStream,
    Scenario,
    Topology,
    TriggerSpec,
    concurrent_requests,
    concurrent_triggers,
)

log = logging.getLogger(__name__)

DEFAULT_CLIENTS = [1, 2, 4, 8, 16, 32, 64]
DEFAULT_COPIES = [1, 8, 16, 1024]


def plateau_shape(throughputs: Sequence[float], noise: float = 0.10) -> dict:
    """Check a throughput-vs-clients curve rises (within noise) to its peak, then stays there.

    Before the peak each step may fall at most ``noise`` below its
    predecessor; after the peak every step must stay within ``noise`` of it.
    """
    if not throughputs:
        raise ValueError("no measurements")
    peak = max(range(len(throughputs)), key=lambda i: throughputs[i])
    rising = all(throughputs[i + 1] >= (1 - noise) * throughputs[i] for i in range(peak))
    plateau = all(t >= (1 - noise) * throughputs[peak] for t in throughputs[peak + 1:])
    return {"peakIndex": peak, "rising": rising, "plateau": plateau, "ok": rising and plateau}


def non_increasing(values: Sequence[float]) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


async def _measure_steps(topology: Topology, triggers: List[TriggerSpec], scenarios: Sequence[Scenario],
                         workdir: str, cooldown: float) -> List[dict]:
    results = []
    async with Cluster(topology, workdir, arrival_logs=False, delivery_logs=False, sink_log=False) as cluster:
        await cluster.register(triggers)
        for i, scenario in enumerate(scenarios):
            if i and cooldown:
                await asyncio.sleep(cooldown)
            res = await generate(scenario, cluster.dispatcher_urls, None)
            await cluster.drain(timeout=600)
            log.info("%s: %.1f events/s", scenario.name, res.throughput)
            results.append(res.to_json())
    return results


def concurrency_sweep(clients: Sequence[int], step_seconds: float, workdir: str,
                      nodes: int = 1, cooldown: float = 10.0) -> List[dict]:
    """Closed-loop throughput of one ``3:a`` trigger for each client count, same cluster."""
    scenarios = [concurrent_requests(c, nodes=nodes, duration_seconds=step_seconds) for c in clients]
    results = asyncio.run(_measure_steps(scenarios[0].topology, scenarios[0].triggers, scenarios,
                                         os.path.join(workdir, f"requests-{nodes}n"), cooldown))
    return [dict(r, clients=c) for c, r in zip(clients, results)]


def partition_scaling(workdir: str, step_seconds: float, clients: int = 64, cooldown: float = 10.0) -> dict:
    """Saturated throughput with the trigger on one node versus partitioned over two."""
    out = {}
    for nodes in (1, 2):
        if nodes > 1 and cooldown:
            time.sleep(cooldown)
        scenario = concurrent_requests(clients, nodes=nodes, duration_seconds=step_seconds)
        (res,) = asyncio.run(_measure_steps(scenario.topology, scenario.triggers, [scenario],
                                            os.path.join(workdir, f"partitions-{nodes}n"), 0))
        out[f"{nodes}n"] = dict(res, clients=clients, nodes=nodes)
    single = out["1n"]["throughput"]
    out["speedup"] = out["2n"]["throughput"] / single if single else None
    return out


def trigger_scaling(copies: Sequence[int], step_seconds: float, workdir: str,
                    cooldown: float = 10.0, virtual_users: int = 128) -> List[dict]:
    """Throughput of one invoker hosting ``n`` copies of ``AND(2:a,2:b)``, fresh cluster per step."""
    results = []
    for i, n in enumerate(copies):
        if i and cooldown:
            time.sleep(cooldown)
        scenario = concurrent_triggers(n, duration_seconds=step_seconds, virtual_users=virtual_users)
        (res,) = asyncio.run(_measure_steps(scenario.topology, scenario.triggers, [scenario],
                                            os.path.join(workdir, f"triggers-{n}"), 0))
        results.append(dict(res, copies=n))
    return results


def decoupling_scenario(rate: float, duration: float, virtual_users: int = 100, seed: int = 7) -> Scenario:
    return Scenario(
        name=f"decoupling-{int(rate)}",
        event_streams=[EventStream("a", rate * 60.0, payload_bytes=64, virtual_users=virtual_users)],
        duration_seconds=duration,
        triggers=[TriggerSpec("3:a")],
        topology=Topology(1, 1),
        mode="stochastic",
        seed=seed,
    )


def ack_decoupling(workdir: str, rate: float = 1000.0, delay_ms: float = 500.0, duration: float = 30.0,
                   virtual_users: int = 100) -> dict:
    """Producer ack latency with an instant sink versus a slow one, same open-loop load."""
    out = {}
    for label, delay in (("instant", 0.0), ("delayed", delay_ms)):
        scenario = decoupling_scenario(rate, duration, virtual_users)
        result = asyncio.run(run_scenario(scenario, os.path.join(workdir, f"decoupling-{label}"),
                                          sink_delay_ms=delay, check_oracle=False, record_events=True))
        ack = result.report["ackLatencyMs"]
        out[label] = {"sinkDelayMs": delay, "ackLatencyMs": ack,
                      "sentPerSecond": result.report["sentPerSecond"], "firings": result.report["firings"]}
    base = out["instant"]["ackLatencyMs"]["p99"]
    out["p99Change"] = abs(out["delayed"]["ackLatencyMs"]["p99"] - base) / base if base else None
    return out
