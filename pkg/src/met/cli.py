"""Command line entry point: ``met <command>``."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import signal
import sys

from .config import Deployment, split_hostport


async def _until_signal() -> None:
    stop = asyncio.Event()
    running = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        running.add_signal_handler(sig, stop.set)
    await stop.wait()


async def _serve_invoker(args) -> None:
    from .invoker import Invoker, serve_invoker

    if args.config:
        deployment = Deployment.load(args.config)
        me = deployment.invokers[args.index]
        admin_host, admin_port = split_hostport(me.admin.split("://", 1)[1])
        events_host, events_port = me.events_address
        events_endpoint = me.events
    else:
        deployment = Deployment(dispatchers=args.dispatcher or [])
        admin_port, events_port = args.admin_port, args.events_port
        events_endpoint = f"{args.advertise or args.host}:{events_port}"
    kwargs = {"arrival_log": args.arrival_log}
    if args.high_water:
        kwargs["high_water"] = args.high_water
    invoker = Invoker(events_endpoint, deployment, **kwargs)
    runner, server = await serve_invoker(invoker, args.host, admin_port, events_port)
    logging.getLogger("met").info("invoker ready: admin %d events %s", admin_port, events_endpoint)
    try:
        await _until_signal()
    finally:
        server.close()
        await runner.cleanup()
        await invoker.close()


async def _serve_dispatcher(args) -> None:
    from .dispatcher import Dispatcher, serve_dispatcher

    dispatcher = Dispatcher(delivery_log=args.delivery_log)
    runner = await serve_dispatcher(dispatcher, args.host, args.port)
    try:
        await _until_signal()
    finally:
        await runner.cleanup()
        await dispatcher.close()


async def _serve_sink(args) -> None:
    from .harness.sink import Sink, serve_sink

    sink = Sink(args.log, delay_ms=args.delay_ms, failure_rate=args.failure_rate, seed=args.seed)
    runner = await serve_sink(sink, args.host, args.port)
    try:
        await _until_signal()
    finally:
        await runner.cleanup()
        sink.close()


def _load_scenario(args):
    from .harness.scenario import Scenario

    scenario = Scenario.load(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    if args.mode:
        scenario.mode = args.mode
    if args.time_compression:
        scenario.time_compression = args.time_compression
    if args.duration:
        scenario.duration_seconds = args.duration
    return scenario


def _cmd_generate(args) -> int:
    from .harness.generate import generate

    result = asyncio.run(generate(_load_scenario(args), args.dispatcher, args.out))
    print(json.dumps(result.to_json(), indent=2))
    return 0


def _cmd_report(args) -> int:
    from .harness.report import ReportError, build_report
    from .oracle import read_jsonl

    with open(args.triggers) as fh:
        triggers = json.load(fh)
    arrivals = None
    if args.arrivals:
        arrivals = [r for p in args.arrivals for r in read_jsonl(p)]
    try:
        report = build_report(read_jsonl(args.events), read_jsonl(args.firings), triggers,
                              arrival_records=arrivals, check_oracle=not args.no_oracle)
    except ReportError as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return 2
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text)
    return 0


def _cmd_run(args) -> int:
    from .harness.report import ReportError
    from .harness.run import run_scenario

    try:
        result = asyncio.run(run_scenario(
            _load_scenario(args), args.workdir,
            sink_delay_ms=args.sink_delay_ms, sink_failure_rate=args.sink_failure_rate,
            check_oracle=not args.no_oracle,
        ))
    except ReportError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    summary = {k: result.report[k] for k in
               ("events", "throughput", "firings", "invocationRatio", "latencyMs", "ackLatencyMs", "oracle")}
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_bench(args) -> int:
    from .harness import bench

    steps = args.step_seconds
    if args.experiment == "requests":
        out = bench.concurrency_sweep(args.clients or bench.DEFAULT_CLIENTS, steps, args.workdir,
                                      nodes=args.nodes, cooldown=args.cooldown)
    elif args.experiment == "partitions":
        out = bench.partition_scaling(args.workdir, steps, clients=(args.clients or [64])[0],
                                      cooldown=args.cooldown)
    elif args.experiment == "triggers":
        out = bench.trigger_scaling(args.copies or bench.DEFAULT_COPIES, steps, args.workdir,
                                    cooldown=args.cooldown)
    else:
        out = bench.ack_decoupling(args.workdir, rate=args.rate, delay_ms=args.delay_ms, duration=steps)
    print(json.dumps(out, indent=2))
    return 0


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=["deterministic", "stochastic", "closed"])
    p.add_argument("--time-compression", type=float)
    p.add_argument("--duration", type=float, help="override durationSeconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="met", description="Multi-event trigger engine")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("invoker", help="run an invoker")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config", help="deployment JSON; the invoker uses entry --index")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--admin-port", type=int, default=9000)
    p.add_argument("--events-port", type=int, default=9100)
    p.add_argument("--advertise", help="host dispatchers should use for this invoker")
    p.add_argument("--dispatcher", action="append", help="dispatcher base URL (without --config)")
    p.add_argument("--arrival-log")
    p.add_argument("--high-water", type=int)

    p = sub.add_parser("dispatcher", help="run a dispatcher")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--delivery-log")

    p = sub.add_parser("sink", help="run the mock function sink")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8500)
    p.add_argument("--log")
    p.add_argument("--delay-ms", type=float, default=0.0)
    p.add_argument("--failure-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("generate", help="send a scenario's events to running dispatchers")
    _scenario_flags(p)
    p.add_argument("--dispatcher", action="append", required=True, help="dispatcher base URL")
    p.add_argument("--out", default="events.jsonl")

    p = sub.add_parser("report", help="compute metrics from run logs")
    p.add_argument("--events", required=True)
    p.add_argument("--firings", required=True, help="sink log")
    p.add_argument("--triggers", required=True, help="JSON object trigger id -> rule")
    p.add_argument("--arrivals", action="append", help="invoker arrival log(s)")
    p.add_argument("--no-oracle", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("run", help="start a local cluster, run a scenario and report")
    _scenario_flags(p)
    p.add_argument("--workdir", default="met-run")
    p.add_argument("--sink-delay-ms", type=float, default=0.0)
    p.add_argument("--sink-failure-rate", type=float, default=0.0)
    p.add_argument("--no-oracle", action="store_true")

    p = sub.add_parser("bench", help="throughput experiments")
    p.add_argument("experiment", choices=["requests", "partitions", "triggers", "decoupling"])
    p.add_argument("--workdir", default="met-bench")
    p.add_argument("--step-seconds", type=float, default=60.0)
    p.add_argument("--cooldown", type=float, default=10.0)
    p.add_argument("--clients", type=int, nargs="+")
    p.add_argument("--copies", type=int, nargs="+")
    p.add_argument("--nodes", type=int, default=1)
    p.add_argument("--rate", type=float, default=1000.0, help="events per second (decoupling)")
    p.add_argument("--delay-ms", type=float, default=500.0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "invoker":
        asyncio.run(_serve_invoker(args))
        return 0
    if args.command == "dispatcher":
        asyncio.run(_serve_dispatcher(args))
        return 0
    if args.command == "sink":
        asyncio.run(_serve_sink(args))
        return 0
    return {
        "generate": _cmd_generate,
        "report": _cmd_report,
        "run": _cmd_run,
        "bench": _cmd_bench,
    }[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
