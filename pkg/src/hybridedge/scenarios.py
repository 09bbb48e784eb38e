"""Scenario harness: an in-process cluster on a virtual clock.

A scenario document describes worker nodes, a timed submission trace, fault
injections and assertions. :func:`run_scenario` boots a real
:class:`~hybridedge.service.ManagerService` plus one real
:class:`~hybridedge.agent.Agent` per node, all talking over in-memory pipes on
a :class:`~hybridedge.clock.VirtualTimeLoop`, replays the trace, and evaluates
the assertions. The same seed gives a byte-identical report.

Document layout (YAML)::

    name: overload-rebalance
    duration_ms: 1000
    cluster: {heartbeat_interval_ms: 1000}        # ClusterConfig overrides
    rules: default                                 # preset or rule list
    calibration: {docker: {CarDetect: {proc_time_ms_mean: 60000}}}
    nodes:
      - {names: [w1]}
      - {names: [w2, w3, w4], join_at_ms: 100}
      - {count: 4, prefix: w, mem_capacity_mb: 4096, cpu_cores: 4, slots: 16}
    trace:
      - {at_ms: 0, submit: {id: car8, payload_kind: image, app_class: CarDetect, instances: 8}}
      - {at_ms: 500, rebalance: true}
      - {at_ms: 900, set_rules: container-only}
    faults:
      - {kill_agent: w4, at_ms: 500, restart_at_ms: 2000}
      - {drop_heartbeats: w4, from_ms: 500, to_ms: 8000}
    assertions:
      - {type: spread-exact, expected: {w1: 2, w2: 2}, at_ms: 600}
      - {type: migrations-count, expected: 6}
      - {type: queue-length, expected: 0}
      - {type: orphans-count, expected: 2}
      - {type: saving-pct-within, a: container-datasci, b: hybrid-datasci, target: 36.62,
         tolerance: 0.05, proc_time_delta: {target: 0.35, tolerance: 0.01}, verdict: "B lighter, A faster"}
      - {type: metrics-within, selector: "app_class:CarDetect", metric: mem_peak_mb,
         stat: mean, target: 93, tolerance: 3}

Assertions without ``at_ms`` are checked once ``duration_ms`` has elapsed.
"""

from __future__ import annotations

import asyncio
import json
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from . import protocol as p
from .agent import Agent, AgentConfig
from .backends import SimulatedBackend
from .calibration import CalibrationRegistry
from .classifier import resolve_rules
from .clock import Clock, run_virtual
from .errors import EmptySet, HybridEdgeError, InvalidScenario, UnknownFilterField
from .manager import Manager
from .model import DEFAULT_CPU_CORES, DEFAULT_MEM_CAPACITY_MB, ClusterConfig, WorkloadSpec
from .reports import METRIC_FIELDS, parse_selector
from .service import ManagerService

ASSERTION_TYPES = (
    "spread-exact", "saving-pct-within", "queue-length", "migrations-count", "metrics-within", "orphans-count",
)
TRACE_ACTIONS = ("submit", "set_rules", "rebalance")
DEFAULT_SLOTS = 16
# Bound on event-loop turns spent waiting for joining agents to register.
_REGISTER_TURNS = 10_000


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    mem_capacity_mb: float = DEFAULT_MEM_CAPACITY_MB
    cpu_cores: int = DEFAULT_CPU_CORES
    slots: int = DEFAULT_SLOTS
    join_at_ms: float = 0.0


@dataclass(frozen=True)
class TraceEvent:
    at_ms: float
    action: str
    value: Any


@dataclass(frozen=True)
class Fault:
    kind: str  # "kill-agent" or "drop-heartbeats"
    node_id: str
    start_ms: float
    end_ms: float | None = None  # restart time for kill-agent, window end for drop-heartbeats


@dataclass(frozen=True)
class ScenarioDoc:
    name: str
    nodes: tuple[NodeSpec, ...]
    trace: tuple[TraceEvent, ...] = ()
    faults: tuple[Fault, ...] = ()
    assertions: tuple[Mapping[str, Any], ...] = ()
    cluster: Mapping[str, Any] = field(default_factory=dict)
    rules: Any = None
    calibration: Mapping[str, Any] = field(default_factory=dict)
    duration_ms: float = 1000.0
    seed: int = 0
    description: str = ""


def _num(doc: Mapping[str, Any], key: str, where: str, default=None) -> float:
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidScenario(f"{where}: '{key}' must be a number")
    if value < 0:
        raise InvalidScenario(f"{where}: '{key}' must be >= 0")
    return float(value)


def _nodes(items: Any) -> tuple[NodeSpec, ...]:
    if not isinstance(items, list) or not items:
        raise InvalidScenario("'nodes' must be a non-empty list of node groups")
    nodes: list[NodeSpec] = []
    for index, group in enumerate(items):
        where = f"nodes[{index}]"
        if not isinstance(group, Mapping):
            raise InvalidScenario(f"{where} must be a mapping")
        unknown = set(group) - {"names", "count", "prefix", "mem_capacity_mb", "cpu_cores", "slots", "join_at_ms"}
        if unknown:
            raise InvalidScenario(f"{where}: unknown keys {sorted(unknown)}")
        if "names" in group:
            names = [str(n) for n in group["names"]]
        else:
            count = int(_num(group, "count", where))
            start = len(nodes) + 1
            names = [f"{group.get('prefix', 'w')}{start + k}" for k in range(count)]
        mem = _num(group, "mem_capacity_mb", where, DEFAULT_MEM_CAPACITY_MB)
        cores = int(_num(group, "cpu_cores", where, DEFAULT_CPU_CORES))
        slots = int(_num(group, "slots", where, DEFAULT_SLOTS))
        if mem <= 0 or cores <= 0 or slots <= 0:
            raise InvalidScenario(f"{where}: capacities and slots must be > 0")
        join = _num(group, "join_at_ms", where, 0)
        nodes.extend(NodeSpec(n, mem, cores, slots, join) for n in names)
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids) or "manager" in ids:
        raise InvalidScenario(f"node ids must be unique and not 'manager': {ids}")
    return tuple(nodes)


def _trace(items: Any) -> tuple[TraceEvent, ...]:
    events = []
    last = 0.0
    for index, item in enumerate(items or []):
        where = f"trace[{index}]"
        if not isinstance(item, Mapping):
            raise InvalidScenario(f"{where} must be a mapping")
        at = _num(item, "at_ms", where, 0)
        if at < last:
            raise InvalidScenario(f"{where}: trace timestamps must be non-decreasing")
        last = at
        actions = [a for a in TRACE_ACTIONS if a in item]
        if len(actions) != 1 or set(item) - {"at_ms", *TRACE_ACTIONS}:
            raise InvalidScenario(f"{where}: needs exactly one of {list(TRACE_ACTIONS)}")
        action = actions[0]
        value = item[action]
        if action == "submit":
            if not isinstance(value, Mapping):
                raise InvalidScenario(f"{where}: submit needs a workload mapping")
            try:
                value = WorkloadSpec.from_dict(value)
            except (TypeError, ValueError) as exc:
                raise InvalidScenario(f"{where}: {exc}") from None
        events.append(TraceEvent(at, action, value))
    return tuple(events)


def _faults(items: Any, node_ids: set[str]) -> tuple[Fault, ...]:
    faults = []
    for index, item in enumerate(items or []):
        where = f"faults[{index}]"
        if not isinstance(item, Mapping):
            raise InvalidScenario(f"{where} must be a mapping")
        if "kill_agent" in item:
            node = str(item["kill_agent"])
            start = _num(item, "at_ms", where)
            end = _num(item, "restart_at_ms", where) if "restart_at_ms" in item else None
            kind = "kill-agent"
        elif "drop_heartbeats" in item:
            node = str(item["drop_heartbeats"])
            start = _num(item, "from_ms", where)
            end = _num(item, "to_ms", where)
            kind = "drop-heartbeats"
        else:
            raise InvalidScenario(f"{where}: needs 'kill_agent' or 'drop_heartbeats'")
        if node not in node_ids:
            raise InvalidScenario(f"{where}: unknown node {node!r}")
        if end is not None and end <= start:
            raise InvalidScenario(f"{where}: the window must end after it starts")
        faults.append(Fault(kind, node, start, end))
    return tuple(faults)


def _assertions(items: Any) -> tuple[Mapping[str, Any], ...]:
    out = []
    for index, item in enumerate(items or []):
        where = f"assertions[{index}]"
        if not isinstance(item, Mapping) or item.get("type") not in ASSERTION_TYPES:
            raise InvalidScenario(f"{where}: 'type' must be one of {list(ASSERTION_TYPES)}")
        kind = item["type"]
        if "at_ms" in item:
            _num(item, "at_ms", where)
        try:
            if kind == "spread-exact":
                if not isinstance(item.get("expected"), Mapping):
                    raise InvalidScenario(f"{where}: expected must map node ids to counts")
            elif kind in ("queue-length", "migrations-count", "orphans-count"):
                _num(item, "expected", where)
            elif kind == "saving-pct-within":
                parse_selector(item["a"])
                parse_selector(item["b"])
                _num(item, "target", where)
                _num(item, "tolerance", where)
            elif kind == "metrics-within":
                parse_selector(item.get("selector"))
                if item.get("metric") not in METRIC_FIELDS:
                    raise InvalidScenario(f"{where}: metric must be one of {list(METRIC_FIELDS)}")
                if item.get("stat", "mean") not in ("mean", "min", "max"):
                    raise InvalidScenario(f"{where}: stat must be mean, min or max")
                _num(item, "target", where)
                _num(item, "tolerance", where)
        except KeyError as exc:
            raise InvalidScenario(f"{where}: missing {exc}") from None
        except UnknownFilterField as exc:
            raise InvalidScenario(f"{where}: {exc}") from None
        out.append(dict(item))
    return tuple(out)


def parse_scenario(doc: Any) -> ScenarioDoc:
    """Validate a parsed document; raises :class:`InvalidScenario`."""
    if not isinstance(doc, Mapping):
        raise InvalidScenario("scenario must be a mapping")
    known = {"name", "description", "seed", "duration_ms", "cluster", "rules", "calibration",
             "nodes", "trace", "faults", "assertions"}
    unknown = set(doc) - known
    if unknown:
        raise InvalidScenario(f"unknown scenario keys {sorted(unknown)}")
    if not doc.get("name"):
        raise InvalidScenario("scenario needs a name")
    nodes = _nodes(doc.get("nodes"))
    scenario = ScenarioDoc(
        name=str(doc["name"]),
        description=str(doc.get("description", "")).strip(),
        nodes=nodes,
        trace=_trace(doc.get("trace")),
        faults=_faults(doc.get("faults"), {n.node_id for n in nodes}),
        assertions=_assertions(doc.get("assertions")),
        cluster=dict(doc.get("cluster") or {}),
        rules=doc.get("rules"),
        calibration=dict(doc.get("calibration") or {}),
        duration_ms=_num(doc, "duration_ms", "scenario", 1000.0),
        seed=int(doc.get("seed", 0)),
    )
    # Fail early on bad cluster, rules or calibration sections.
    try:
        _cluster_config(scenario, scenario.seed)
        registry = CalibrationRegistry.default().with_overrides(scenario.calibration)
        resolve_rules(scenario.rules, registry.flavor_kinds)
        for event in scenario.trace:
            if event.action == "set_rules":
                resolve_rules(event.value, registry.flavor_kinds)
    except (HybridEdgeError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidScenario):
            raise
        raise InvalidScenario(str(exc)) from None
    return scenario


def _cluster_config(doc: ScenarioDoc, seed: int) -> ClusterConfig:
    return ClusterConfig.from_dict({**doc.cluster, "rng_seed": seed})


# ------------------------------------------------------------------ built-ins

def builtin_names() -> list[str]:
    folder = resources.files("hybridedge") / "scenarios"
    return sorted(f.name[:-5] for f in folder.iterdir() if f.name.endswith(".yaml"))


def load_scenario(name_or_path: str) -> ScenarioDoc:
    """Load a built-in scenario by name, or a scenario file by path."""
    path = Path(name_or_path)
    if path.is_file():
        text = path.read_text()
    elif name_or_path in builtin_names():
        text = (resources.files("hybridedge") / "scenarios" / f"{name_or_path}.yaml").read_text()
    else:
        raise InvalidScenario(f"no scenario file or built-in named {name_or_path!r}; "
                              f"built-ins: {builtin_names()}")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidScenario(f"{name_or_path}: invalid YAML: {exc}") from None
    return parse_scenario(doc)


# --------------------------------------------------------------------- report

@dataclass
class ScenarioReport:
    name: str
    seed: int
    assertions: list[dict[str, Any]]
    final_counts: dict[str, int]
    queue: list[dict[str, Any]]
    migrations: list[dict[str, str]]
    orphans: list[dict[str, Any]]
    comparisons: list[dict[str, Any]]
    summary: dict[str, Any]
    nodes: list[dict[str, Any]]
    diagnostics: dict[str, int]
    placement_log: str
    metrics_log: str
    ended_at_ms: float

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "passed": self.passed,
            "assertions": self.assertions,
            "final_counts": self.final_counts,
            "queue": self.queue,
            "migrations": self.migrations,
            "orphans": self.orphans,
            "comparisons": self.comparisons,
            "summary": self.summary,
            "nodes": self.nodes,
            "diagnostics": self.diagnostics,
            "ended_at_ms": self.ended_at_ms,
            "placement_log": self.placement_log.splitlines(),
            "metrics_log": self.metrics_log.splitlines(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def render(self) -> str:
        lines = [f"scenario {self.name} (seed {self.seed}): {'PASS' if self.passed else 'FAIL'}"]
        for a in self.assertions:
            when = f" @ {a['at_ms']:g} ms" if a.get("at_ms") is not None else ""
            lines.append(f"  [{'pass' if a['passed'] else 'FAIL'}] {a['type']}{when}: {a['detail']}")
        lines.append(f"  final instances per worker: {self.final_counts}")
        lines.append(f"  migrations: {len(self.migrations)}  orphans: {len(self.orphans)}  "
                     f"queued: {len(self.queue)}  metrics records: {self.summary['count']}")
        for c in self.comparisons:
            if "error" in c:
                lines.append(f"  compare {c['label_a']} vs {c['label_b']}: {c['error']}")
            else:
                lines.append(f"  compare {c['label_a']} vs {c['label_b']}: saving {c['mem_saving_pct']:.2f} %, "
                             f"delta {c['proc_time_delta_ms']:+.3f} ms, {c['verdict']}")
        return "\n".join(lines)


# ----------------------------------------------------------------- assertions

def _within(observed: float, target: float, tolerance: float) -> bool:
    return abs(observed - target) <= tolerance + 1e-12


def _comparison(manager: Manager, a: str, b: str) -> dict[str, Any]:
    try:
        return manager.compare(a, b).to_dict()
    except EmptySet as exc:
        return {"label_a": a, "label_b": b, "error": f"EmptySet({exc})"}


def evaluate(assertion: Mapping[str, Any], manager: Manager) -> dict[str, Any]:
    kind = assertion["type"]
    result: dict[str, Any] = {"type": kind, "at_ms": assertion.get("at_ms")}
    if kind == "spread-exact":
        expected = {str(k): int(v) for k, v in assertion["expected"].items()}
        counts = manager.active_counts()
        observed = {k: counts.get(k, 0) for k in sorted(set(counts) | set(expected))}
        full = {k: expected.get(k, 0) for k in observed}
        passed = observed == full
        result.update(expected=full, observed=observed, passed=passed,
                      detail=f"observed {observed}" + ("" if passed else f", expected {full}"))
    elif kind in ("queue-length", "migrations-count", "orphans-count"):
        if kind == "queue-length":
            observed_n = len(manager.queue)
        elif kind == "migrations-count":
            observed_n = len(manager.migrations)
        else:
            events = manager.orphan_events
            if "node" in assertion:
                events = [e for e in events if e["node_id"] == assertion["node"]]
            observed_n = len(events)
        expected_n = int(assertion["expected"])
        result.update(expected=expected_n, observed=observed_n, passed=observed_n == expected_n,
                      detail=f"observed {observed_n}, expected {expected_n}")
    elif kind == "saving-pct-within":
        report = _comparison(manager, assertion["a"], assertion["b"])
        if "error" in report:
            result.update(observed=None, passed=False, detail=report["error"])
            return result
        checks = [_within(report["mem_saving_pct"], assertion["target"], assertion["tolerance"])]
        detail = [f"saving {report['mem_saving_pct']:.4f} % (target {assertion['target']} ± {assertion['tolerance']})"]
        delta = assertion.get("proc_time_delta")
        if delta:
            checks.append(_within(report["proc_time_delta_ms"], delta["target"], delta["tolerance"]))
            detail.append(f"delta {report['proc_time_delta_ms']:+.4f} ms (target {delta['target']} ± {delta['tolerance']})")
        if "verdict" in assertion:
            checks.append(report["verdict"] == assertion["verdict"])
            detail.append(f"verdict {report['verdict']!r}")
        result.update(observed=report, passed=all(checks), detail="; ".join(detail))
    elif kind == "metrics-within":
        summary = manager.summarize(assertion.get("selector"))
        stat = assertion.get("stat", "mean")
        stats = summary.stats.get(assertion["metric"])
        if stats is None:
            result.update(observed=None, passed=False, detail="no successful records match")
            return result
        value = stats[stat]
        passed = _within(value, assertion["target"], assertion["tolerance"])
        result.update(observed=value, passed=passed,
                      detail=f"{stat} {assertion['metric']} = {value:.4f} "
                             f"(target {assertion['target']} ± {assertion['tolerance']}, n={summary.success_count})")
    return result


# ------------------------------------------------------------------- harness

class _FaultyConnection(p.Connection):
    """Agent-side connection wrapper that drops heartbeats inside given windows."""

    def __init__(self, inner: p.Connection, windows: list[tuple[float, float]], clock: Clock):
        self.inner = inner
        self.windows = windows
        self.clock = clock
        self.dropped = 0

    async def send(self, msg: p.Message) -> None:
        if msg.type == p.HEARTBEAT and any(lo <= self.clock.now() < hi for lo, hi in self.windows):
            self.dropped += 1
            return
        await self.inner.send(msg)

    async def recv(self) -> p.Message | None:
        return await self.inner.recv()

    def close(self) -> None:
        self.inner.close()


class _Cluster:
    def __init__(self, doc: ScenarioDoc, seed: int, out_dir: Path):
        self.doc = doc
        self.clock = Clock()
        self.config = _cluster_config(doc, seed)
        self.registry = CalibrationRegistry.default().with_overrides(doc.calibration)
        rules = resolve_rules(doc.rules, self.registry.flavor_kinds)
        self.manager = Manager(self.config, rules, self.registry)
        self.service = ManagerService(self.manager, self.clock)
        self.out_dir = out_dir
        self.agents: dict[str, asyncio.Task] = {}
        self.nodes = {n.node_id: n for n in doc.nodes}
        self.drop_windows: dict[str, list[tuple[float, float]]] = {}
        for fault in doc.faults:
            if fault.kind == "drop-heartbeats":
                self.drop_windows.setdefault(fault.node_id, []).append((fault.start_ms, fault.end_ms))

    def start_agent(self, node_id: str) -> None:
        spec = self.nodes[node_id]
        config = AgentConfig(
            node_id=node_id, mem_capacity_mb=spec.mem_capacity_mb, cpu_cores=spec.cpu_cores,
            max_concurrent_slots=spec.slots, heartbeat_interval_ms=self.config.heartbeat_interval_ms,
        )
        windows = self.drop_windows.get(node_id)

        async def connect():
            conn = self.service.connect_memory()
            return _FaultyConnection(conn, windows, self.clock) if windows else conn

        backend = SimulatedBackend(self.registry, self.clock, self.out_dir / node_id)
        agent = Agent(config, backend, self.clock, connect)
        self.agents[node_id] = asyncio.ensure_future(agent.run())

    def kill_agent(self, node_id: str) -> None:
        task = self.agents.pop(node_id, None)
        if task is not None:
            task.cancel()

    async def wait_registered(self, node_ids: list[str]) -> None:
        for _ in range(_REGISTER_TURNS):
            if all(n in self.service.outboxes and n in self.manager.nodes for n in node_ids):
                return
            await asyncio.sleep(0)
        raise InvalidScenario(f"agents {node_ids} did not register")

    def apply(self, event: TraceEvent) -> None:
        if event.action == "submit":
            try:
                self.manager.submit(event.value)
            except HybridEdgeError as exc:
                self.manager.diagnostics[f"submit_rejected_{type(exc).__name__}"] += 1
        elif event.action == "set_rules":
            self.manager.rules = resolve_rules(event.value, self.registry.flavor_kinds)
            self.manager.log_event("set_rules", rules=[r.to_dict() for r in self.manager.rules])
        elif event.action == "rebalance":
            self.manager.rebalance()

    def stop(self) -> None:
        for node_id in sorted(self.agents):
            self.kill_agent(node_id)
        self.service.stop()


# Order of simultaneous events: joins, faults, trace, then assertion checks.
_JOIN, _FAULT, _TRACE, _CHECK = range(4)


async def _run(doc: ScenarioDoc, seed: int, out_dir: Path) -> ScenarioReport:
    cluster = _Cluster(doc, seed, out_dir)
    cluster.clock.now()
    cluster.service.start()
    results: dict[int, dict[str, Any]] = {}
    timeline: list[tuple[float, int, int, Callable]] = []

    joins: dict[float, list[str]] = {}
    for node in doc.nodes:
        joins.setdefault(node.join_at_ms, []).append(node.node_id)
    for index, (at, ids) in enumerate(sorted(joins.items())):
        timeline.append((at, _JOIN, index, ("join", ids)))
    for index, fault in enumerate(doc.faults):
        if fault.kind == "kill-agent":
            timeline.append((fault.start_ms, _FAULT, index, ("kill", fault.node_id)))
            if fault.end_ms is not None:
                timeline.append((fault.end_ms, _FAULT, index, ("restart", fault.node_id)))
    for index, event in enumerate(doc.trace):
        timeline.append((event.at_ms, _TRACE, index, ("trace", event)))
    for index, assertion in enumerate(doc.assertions):
        at = float(assertion.get("at_ms", doc.duration_ms))
        timeline.append((at, _CHECK, index, ("check", index)))
    timeline.sort(key=lambda item: item[:3])

    try:
        for at, _, _, (action, arg) in timeline:
            await cluster.clock.sleep_until(at)
            if action == "join":
                for node_id in arg:
                    cluster.start_agent(node_id)
                await cluster.wait_registered(arg)
            elif action == "kill":
                cluster.kill_agent(arg)
            elif action == "restart":
                cluster.start_agent(arg)
            elif action == "trace":
                cluster.apply(arg)
            elif action == "check":
                results[arg] = evaluate(doc.assertions[arg], cluster.manager)
        await cluster.clock.sleep_until(doc.duration_ms)
        manager = cluster.manager
        comparisons = []
        for assertion in doc.assertions:
            if assertion["type"] == "saving-pct-within":
                comparisons.append(_comparison(manager, assertion["a"], assertion["b"]))
        return ScenarioReport(
            name=doc.name,
            seed=seed,
            assertions=[{"index": i, **results[i]} for i in sorted(results)],
            final_counts=manager.active_counts(),
            queue=[e.to_dict() for e in manager.queue_order()],
            migrations=[m.to_dict() for m in manager.migrations],
            orphans=list(manager.orphan_events),
            comparisons=comparisons,
            summary=manager.summarize().to_dict(),
            nodes=manager.nodes_view(),
            diagnostics=dict(sorted(manager.diagnostics.items())),
            placement_log=manager.dump_placement_log(),
            metrics_log=manager.metrics.dumps(),
            ended_at_ms=cluster.clock.now(),
        )
    finally:
        cluster.stop()


def run_scenario(doc: ScenarioDoc | str, seed: int | None = None,
                 artifacts_dir: str | Path | None = None) -> ScenarioReport:
    """Run a scenario (document, built-in name or file path) on a virtual clock."""
    if isinstance(doc, str):
        doc = load_scenario(doc)
    seed = doc.seed if seed is None else seed
    if artifacts_dir is not None:
        out = Path(artifacts_dir)
        out.mkdir(parents=True, exist_ok=True)
        return run_virtual(_run(doc, seed, out))
    with tempfile.TemporaryDirectory(prefix="hybridedge-scenario-") as tmp:
        return run_virtual(_run(doc, seed, Path(tmp)))
