"""``hybridedge`` command line."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
import uuid
from pathlib import Path
from typing import Any
from urllib.error import HTTPError, URLError
from urllib.parse import quote, urlencode
from urllib.request import Request, urlopen

import yaml

from . import protocol as p
from .agent import Agent, AgentConfig, run_agent
from .api import start_api
from .backends import SimulatedBackend, default_out_dir
from .calibration import load_registry
from .classifier import load_rules
from .clock import Clock
from .config import Settings, load_settings, settings_from_dict
from .errors import HybridEdgeError
from .manager import Manager
from .reports import MetricsLog, compare, parse_selector, select, summarize
from .scenarios import builtin_names, load_scenario, parse_scenario, run_scenario
from .service import ManagerService

DEFAULT_COMPARE_SCENARIO = "paper-datasci-hybrid"


class CliError(Exception):
    """Printed to stderr; the command exits with status 1."""


# ------------------------------------------------------------------ helpers

def _manager_url(args, settings: Settings) -> str:
    return (args.manager or f"http://127.0.0.1:{settings.api_port}").rstrip("/")


def _http(method: str, url: str, body: Any = None) -> tuple[int, Any]:
    data = json.dumps(body).encode() if body is not None else None
    req = Request(url, data=data, method=method, headers={"Content-Type": "application/json"})
    try:
        with urlopen(req, timeout=30) as resp:
            return resp.status, json.loads(resp.read() or b"null")
    except HTTPError as exc:
        try:
            return exc.code, json.loads(exc.read() or b"null")
        except json.JSONDecodeError:
            return exc.code, {"error": exc.reason}
    except URLError as exc:
        raise CliError(f"cannot reach manager at {url}: {exc.reason}") from None


def _print_json(doc: Any) -> None:
    print(json.dumps(doc, sort_keys=True, indent=2))


def _api(method: str, url: str, body: Any = None) -> Any:
    status, doc = _http(method, url, body)
    if status >= 400:
        raise CliError(f"HTTP {status}: {json.dumps(doc, sort_keys=True)}")
    return doc


# ----------------------------------------------------------------- commands

async def _cluster_up(settings: Settings, args) -> None:
    loop = asyncio.get_running_loop()
    time_scale = args.time_scale or settings.cluster.time_scale
    clock = Clock(time_scale)
    manager = Manager(settings.cluster, settings.rules, settings.registry,
                      metrics_log=MetricsLog(settings.metrics_log))
    service = ManagerService(manager, clock)
    service.start()
    host, port = args.host or settings.host, args.port or settings.port
    api_port = args.api_port or settings.api_port
    await service.serve_tcp(host, port)
    api = start_api(manager, loop, host, api_port)
    out_dir = Path(args.out_dir) if args.out_dir else default_out_dir()
    agents = []
    for k in range(args.workers):
        config = AgentConfig(node_id=f"w{k + 1}", manager_host=host, manager_port=port,
                             heartbeat_interval_ms=settings.cluster.heartbeat_interval_ms, time_scale=time_scale)
        backend = SimulatedBackend(settings.registry, clock, out_dir / config.node_id)
        agent = Agent(config, backend, clock, lambda: p.open_tcp(host, port))
        agents.append(asyncio.ensure_future(agent.run()))
    print(f"manager: agents on {host}:{port}, API on http://{host}:{api_port}, "
          f"{args.workers} simulated worker(s); Ctrl-C to stop", flush=True)
    try:
        await asyncio.Event().wait()
    finally:
        api.shutdown()
        service.stop()
        for task in agents:
            task.cancel()


def cmd_cluster(args, settings: Settings) -> int:
    if args.action == "up":
        if not args.simulated and args.workers:
            raise CliError("in-process workers are simulated; pass --simulated or --workers 0 "
                           "and start real agents with 'node join'")
        try:
            asyncio.run(_cluster_up(settings, args))
        except KeyboardInterrupt:
            pass
        return 0
    url = _manager_url(args, settings)
    health = _api("GET", f"{url}/v1/healthz")
    nodes = _api("GET", f"{url}/v1/nodes")
    if args.json:
        _print_json({"healthz": health, **nodes})
        return 0
    print(f"manager {url}: {health['status']}")
    print(f"{'node':<12}{'role':<9}{'health':<11}{'mem MB':>16}{'cpu %':>14}{'instances':>11}")
    for n in nodes["nodes"]:
        print(f"{n['node_id']:<12}{n['role']:<9}{n['health']:<11}"
              f"{n['mem_allocated_mb']:>7.0f}/{n['mem_capacity_mb']:<8.0f}"
              f"{n['cpu_allocated_pct']:>6.0f}/{n['cpu_cores'] * 100:<7}{len(n['running_instances']):>11}")
    print(f"queued workloads: {len(nodes['queue'])}")
    return 0


def cmd_node(args, settings: Settings) -> int:
    config = AgentConfig(
        node_id=args.node_id,
        manager_host=args.manager_host or settings.host,
        manager_port=args.manager_port or settings.port,
        mem_capacity_mb=args.mem_capacity_mb,
        cpu_cores=args.cpu_cores,
        max_concurrent_slots=args.slots,
        backend=args.backend,
        command_template=args.command,
        process_timeout_s=args.timeout_s,
        calibration_path=args.calibration,
        out_dir=args.out_dir,
        heartbeat_interval_ms=settings.cluster.heartbeat_interval_ms,
        time_scale=args.time_scale or settings.cluster.time_scale,
    )
    try:
        asyncio.run(run_agent(config))
    except KeyboardInterrupt:
        pass
    return 0


def cmd_submit(args, settings: Settings) -> int:
    if args.file and args.ref:
        raise CliError("give either --file or --ref, not both")
    ref = args.ref or ""
    if args.file:
        path = Path(args.file).resolve()
        if not path.is_file():
            raise CliError(f"no such file: {args.file}")
        ref = f"file://{path}"
    body = {"id": args.id or f"{args.kind}-{uuid.uuid4().hex[:8]}", "payload_kind": args.kind,
            "payload_ref": ref, "instances": args.instances, "priority": args.priority}
    for key in ("app_class", "est_mem_mb", "est_cpu_pct"):
        if getattr(args, key) is not None:
            body[key] = getattr(args, key)
    doc = _api("POST", f"{_manager_url(args, settings)}/v1/workloads", body)
    if args.json:
        _print_json(doc)
    elif doc["status"] == "placed":
        d = doc["decision"]
        print(f"{d['workload_id']}: placed ({d['reason']})")
        for a in d["assignments"]:
            print(f"  {a['instance_id']} -> {a['node_id']} [{a['runtime_class']}]")
    else:
        print(f"{body['id']}: queued ({doc['reason']}), position {doc['position']}")
    return 0


def cmd_workloads(args, settings: Settings) -> int:
    url = _manager_url(args, settings)
    if args.workload_id:
        _print_json(_api("GET", f"{url}/v1/workloads/{quote(args.workload_id)}"))
        return 0
    views = _api("GET", f"{url}/v1/workloads")
    if args.json:
        _print_json(views)
        return 0
    for view in views:
        states: dict[str, int] = {}
        for inst in view["instances"]:
            states[inst["status"]] = states.get(inst["status"], 0) + 1
        queued = "" if view["queue_position"] is None else f" queued at {view['queue_position']}"
        print(f"{view['workload']['id']:<24}{view['workload']['payload_kind']:<8}"
              f"{json.dumps(states, sort_keys=True)}{queued}")
    return 0


def _local_records(args) -> list:
    if args.log:
        return MetricsLog.replay(args.log).records
    name = args.scenario or DEFAULT_COMPARE_SCENARIO
    report = run_scenario(name, args.seed)
    return MetricsLog.loads(report.metrics_log).records


def _render_summary(doc: dict[str, Any]) -> str:
    lines = [f"records: {doc['count']} (success {doc['success_count']}, failure {doc['failure_count']})"]
    for name, stats in doc["stats"].items():
        lines.append(f"  {name:<14} mean {stats['mean']:>12.4f}  min {stats['min']:>12.4f}  max {stats['max']:>12.4f}")
    return "\n".join(lines)


def cmd_metrics(args, settings: Settings) -> int:
    if args.log or args.scenario:
        doc = summarize(_local_records(args), parse_selector(args.filter)).to_dict()
    else:
        query = f"?{urlencode({'filter': args.filter})}" if args.filter else ""
        doc = _api("GET", f"{_manager_url(args, settings)}/v1/metrics{query}")
    print(json.dumps(doc, sort_keys=True, indent=2) if args.json else _render_summary(doc))
    return 0


def cmd_report(args, settings: Settings) -> int:
    if args.manager:
        doc = _api("GET", f"{_manager_url(args, settings)}/v1/reports/compare?{urlencode({'a': args.a, 'b': args.b})}")
        if args.json:
            _print_json(doc)
        else:
            print(f"A: {doc['label_a']}  B: {doc['label_b']}")
            print(f"memory saving (B vs A): {doc['mem_saving_pct']:.2f} %")
            print(f"processing time delta (B - A): {doc['proc_time_delta_ms']:+.3f} ms")
            print(f"verdict: {doc['verdict']}")
        return 0
    records = _local_records(args)
    report = compare(select(records, args.a), select(records, args.b), args.a, args.b)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2) if args.json else report.render())
    return 0


def cmd_rebalance(args, settings: Settings) -> int:
    doc = _api("POST", f"{_manager_url(args, settings)}/v1/rebalance")
    if args.json:
        _print_json(doc)
    else:
        print(f"{len(doc['migrations'])} migration(s)")
        for m in doc["migrations"]:
            print(f"  {m['instance_id']}: {m['from_node']} -> {m['to_node']}")
    return 0


def cmd_scenario(args, settings: Settings) -> int:
    if args.action == "list":
        for name in builtin_names():
            doc = load_scenario(name)
            print(f"{name:<24}{doc.description.split('. ')[0]}")
        return 0
    report = run_scenario(args.name, args.seed, args.artifacts)
    if args.out:
        Path(args.out).write_text(report.to_json())
    print(report.to_json() if args.json else report.render(), end="\n" if not args.json else "")
    return 0 if report.passed else 1


def _validate_document(path: Path, settings: Settings) -> str:
    doc = yaml.safe_load(path.read_text())
    if isinstance(doc, list) or (isinstance(doc, dict) and set(doc) == {"rules"}):
        rules = load_rules(path.read_text(), settings.registry.flavor_kinds)
        return f"rule table with {len(rules)} rule(s)"
    if isinstance(doc, dict) and "nodes" in doc and "name" in doc:
        scenario = parse_scenario(doc)
        return f"scenario {scenario.name!r}: {len(scenario.nodes)} node(s), {len(scenario.assertions)} assertion(s)"
    if isinstance(doc, dict) and set(doc) & {"cluster", "manager", "calibration", "metrics_log", "rules"}:
        settings_from_dict(doc, path.parent)
        return "manager config"
    registry = load_registry(path)
    return f"calibration document; {len(registry.profiles)} profile(s) after merge"


def cmd_profiles(args, settings: Settings) -> int:
    if args.action == "validate":
        failed = 0
        for name in args.files:
            try:
                print(f"{name}: ok ({_validate_document(Path(name), settings)})")
            except (HybridEdgeError, OSError, ValueError, yaml.YAMLError) as exc:
                failed += 1
                print(f"{name}: invalid: {exc}", file=sys.stderr)
        return 1 if failed else 0
    registry = load_registry(args.calibration, settings.registry) if args.calibration else settings.registry
    if args.json:
        _print_json(registry.to_document())
        return 0
    print(f"{'flavor':<13}{'kind':<11}{'app_class':<17}{'cpu %':>15}{'mem MB':>15}{'time ms':>17}{'boot':>7}  note")
    for (flavor, app), prof in sorted(registry.profiles.items()):
        if args.flavor and flavor != args.flavor:
            continue
        note = "" if registry.is_calibrated(flavor, app) else "uncalibrated: " + ",".join(
            f.removesuffix("_mean") for f in registry.uncalibrated[(flavor, app)])
        print(f"{flavor:<13}{registry.kind_of(flavor).value:<11}{app:<17}"
              f"{_pm(prof.cpu_pct_mean, prof.cpu_pct_spread):>15}{_pm(prof.mem_mb_mean, prof.mem_mb_spread):>15}"
              f"{_pm(prof.proc_time_ms_mean, prof.proc_time_ms_spread):>17}{prof.boot_ms:>7g}  {note}")
    return 0


def _pm(mean: float, spread: float) -> str:
    return f"{mean:g}" if not spread else f"{mean:g}±{spread:g}"


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridedge", description="Hybrid container/unikernel edge orchestrator.")
    parser.add_argument("--config", help="manager config file (overrides $HYBRIDEDGE_CONFIG)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def remote(p_: argparse.ArgumentParser) -> None:
        p_.add_argument("--manager", help="manager API URL (default http://127.0.0.1:<api_port>)")
        p_.add_argument("--json", action="store_true", help="print raw JSON")

    cluster = sub.add_parser("cluster", help="run or inspect a manager")
    cluster_sub = cluster.add_subparsers(dest="action", required=True)
    up = cluster_sub.add_parser("up", help="start a manager, optionally with simulated workers")
    up.add_argument("--workers", type=int, default=0)
    up.add_argument("--simulated", action="store_true", help="run the workers in-process on the simulated backend")
    up.add_argument("--host")
    up.add_argument("--port", type=int, help="agent protocol port (default 8471)")
    up.add_argument("--api-port", type=int, help="HTTP API port (default 8470)")
    up.add_argument("--time-scale", type=float, help="simulated ms per real ms")
    up.add_argument("--out-dir", help="where simulated workers write artifacts")
    remote(cluster_sub.add_parser("status", help="show nodes and the admission queue"))

    node = sub.add_parser("node", help="run an agent")
    node_sub = node.add_subparsers(dest="action", required=True)
    join = node_sub.add_parser("join", help="join a manager as a worker")
    join.add_argument("--node-id", required=True)
    join.add_argument("--manager-host")
    join.add_argument("--manager-port", type=int)
    join.add_argument("--mem-capacity-mb", type=float, default=4096.0)
    join.add_argument("--cpu-cores", type=int, default=4)
    join.add_argument("--slots", type=int, default=16)
    join.add_argument("--backend", choices=("simulated", "process"), default="simulated")
    join.add_argument("--command", help="process backend command template, e.g. 'docker run --rm img {payload_ref}'")
    join.add_argument("--timeout-s", type=float)
    join.add_argument("--calibration", help="calibration profile file for the simulated backend")
    join.add_argument("--out-dir")
    join.add_argument("--time-scale", type=float)

    submit = sub.add_parser("submit", help="submit a workload")
    submit.add_argument("--kind", required=True, help="payload kind: image, stream, or a custom name")
    submit.add_argument("--file", help="payload file, sent as a file:// reference")
    submit.add_argument("--ref", help="payload reference (builtin:NAME or file://PATH)")
    submit.add_argument("--id")
    submit.add_argument("--app-class")
    submit.add_argument("--instances", type=int, default=1)
    submit.add_argument("--priority", type=int, default=0)
    submit.add_argument("--est-mem-mb", type=float)
    submit.add_argument("--est-cpu-pct", type=float)
    remote(submit)

    workloads = sub.add_parser("workloads", help="list workloads or show one")
    workloads.add_argument("workload_id", nargs="?")
    remote(workloads)

    def local_source(p_: argparse.ArgumentParser) -> None:
        p_.add_argument("--log", help="metrics log file to read instead of a manager")
        p_.add_argument("--scenario", help="run this scenario and read its metrics")
        p_.add_argument("--seed", type=int)

    metrics = sub.add_parser("metrics", help="summarize metrics")
    metrics.add_argument("--filter", help="e.g. 'flavor:unikraft,app_class:StreamAggregate'")
    remote(metrics)
    local_source(metrics)

    report = sub.add_parser("report", help="comparison reports")
    report_sub = report.add_subparsers(dest="action", required=True)
    comp = report_sub.add_parser("compare", help="compare two record selections (B relative to A)")
    comp.add_argument("--a", required=True, help="selector or preset, e.g. container-datasci")
    comp.add_argument("--b", required=True, help="selector or preset, e.g. hybrid-datasci")
    remote(comp)
    local_source(comp)

    remote(sub.add_parser("rebalance", help="trigger a rebalance"))

    scenario = sub.add_parser("scenario", help="run scenarios on a virtual clock")
    scenario_sub = scenario.add_subparsers(dest="action", required=True)
    scenario_sub.add_parser("list", help="list built-in scenarios")
    run = scenario_sub.add_parser("run", help="run a built-in scenario or a scenario file")
    run.add_argument("name")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="write the JSON report here")
    run.add_argument("--artifacts", help="keep kernel outputs in this directory")
    run.add_argument("--json", action="store_true")

    profiles = sub.add_parser("profiles", help="calibration profiles")
    profiles_sub = profiles.add_subparsers(dest="action", required=True)
    plist = profiles_sub.add_parser("list", help="show the calibration table")
    plist.add_argument("--calibration", help="profile file merged over the configured registry")
    plist.add_argument("--flavor")
    plist.add_argument("--json", action="store_true")
    pval = profiles_sub.add_parser("validate", help="check calibration, rule, config or scenario files")
    pval.add_argument("files", nargs="+")
    return parser


COMMANDS = {
    "cluster": cmd_cluster,
    "node": cmd_node,
    "submit": cmd_submit,
    "workloads": cmd_workloads,
    "metrics": cmd_metrics,
    "report": cmd_report,
    "rebalance": cmd_rebalance,
    "scenario": cmd_scenario,
    "profiles": cmd_profiles,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        settings = load_settings(args.config)
        return COMMANDS[args.command](args, settings)
    except (CliError, HybridEdgeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
