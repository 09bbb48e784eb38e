"""The configuration manager: cluster state and the submit pipeline.

:class:`Manager` is synchronous and owns every piece of cluster state. Exactly
one caller may drive it at a time; :mod:`hybridedge.service` guarantees that by
calling it only from the event loop thread. Outbound protocol messages go
through the ``send(node_id, message)`` callback handed to the constructor.

Instance lifecycle::

    queued -> dispatched -> running -> completed | failed
                  \\-> migrating -> dispatched (on another node)
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from . import protocol as p
from .backends import LaunchRequest
from .calibration import CalibrationRegistry
from .classifier import DEFAULT_RULES, ClassificationRule, check_rules, classify
from .errors import DuplicateWorkloadId, NoCapacity, StaleSnapshot
from .model import (
    ClusterConfig,
    Health,
    NodeState,
    PlacementDecision,
    PlacementReason,
    Role,
    RuntimeClass,
    ValidatedSpec,
    WorkloadSpec,
    instance_ids,
    validate_workload,
)
from .monitor import HeartbeatSnapshot, apply_heartbeat, sweep_health
from .reports import ComparisonReport, MetricsLog, Summary, compare, select, summarize
from .scheduler import Admit, Migration, Orphan, Queued, admit, place, rebalance, requeue_orphans

log = logging.getLogger(__name__)

MANAGER_NODE_ID = "manager"


class InstanceStatus(str, enum.Enum):
    QUEUED = "queued"
    DISPATCHED = "dispatched"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    MIGRATING = "migrating"


ACTIVE = (InstanceStatus.DISPATCHED, InstanceStatus.RUNNING)


@dataclass
class Placement:
    instance_id: str
    workload_id: str
    node_id: str | None
    runtime_class: RuntimeClass
    status: InstanceStatus
    attempt: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "workload_id": self.workload_id,
            "node_id": self.node_id,
            "runtime_class": str(self.runtime_class),
            "status": self.status.value,
            "attempt": self.attempt,
        }


@dataclass
class QueueEntry:
    spec: ValidatedSpec
    seq: int
    # Set for instances that lost their node: they keep their ids and runtime class.
    runtime_class: RuntimeClass | None = None
    instance_ids: list[str] = field(default_factory=list)

    @property
    def is_requeue(self) -> bool:
        return bool(self.instance_ids)

    def to_dict(self) -> dict[str, Any]:
        return {
            "workload_id": self.spec.id,
            "priority": self.spec.priority,
            "instances": len(self.instance_ids) or self.spec.instances,
            "requeue": self.is_requeue,
        }


def derive_seed(rng_seed: int, instance_id: str, attempt: int) -> int:
    digest = hashlib.sha256(f"{rng_seed}:{instance_id}:{attempt}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class Manager:
    def __init__(self, config: ClusterConfig | None = None,
                 rules: Sequence[ClassificationRule] = DEFAULT_RULES,
                 registry: CalibrationRegistry | None = None, *,
                 now: Callable[[], float] = lambda: 0.0,
                 send: Callable[[str, p.Message], None] | None = None,
                 metrics_log: MetricsLog | None = None):
        self.config = config or ClusterConfig()
        self.registry = registry or CalibrationRegistry.default()
        self.rules = check_rules(rules, self.registry.flavor_kinds)
        self.now = now
        self.send = send or (lambda node_id, msg: None)
        self.metrics = metrics_log if metrics_log is not None else MetricsLog()
        self.nodes: dict[str, NodeState] = {}
        self.placements: dict[str, Placement] = {}
        self.specs: dict[str, ValidatedSpec] = {}
        self.queue: list[QueueEntry] = []
        self.placement_log: list[dict[str, Any]] = []
        self.migrations: list[Migration] = []
        self.orphan_events: list[dict[str, Any]] = []
        self.diagnostics: Counter[str] = Counter()
        self.profile_overrides: dict[str, Any] = {}
        self._seq = 0
        # The manager's own node; it only takes work when configured to.
        self.nodes[MANAGER_NODE_ID] = NodeState(
            MANAGER_NODE_ID, role=Role.MANAGER, schedulable=self.config.manager_schedulable,
        )

    # ------------------------------------------------------------------ nodes

    def register_node(self, node_id: str, mem_capacity_mb: float, cpu_cores: int,
                      running: Sequence[str] = (), slots: int | None = None) -> NodeState:
        """Add or re-admit a worker. Reported instances are reconciled with our placements."""
        now = self.now()
        role = Role.MANAGER if node_id == MANAGER_NODE_ID else Role.WORKER
        node = NodeState(
            node_id, role=role, cpu_cores=int(cpu_cores), mem_capacity_mb=float(mem_capacity_mb),
            last_heartbeat=now, health=Health.HEALTHY,
            schedulable=role is Role.WORKER or self.config.manager_schedulable,
        )
        reported = set(running)
        lost = []
        for iid in sorted(self._active_on(node_id)):
            pl = self.placements[iid]
            if iid in reported:
                spec = self.specs[pl.workload_id]
                node = node.allocate(iid, spec.est_mem_mb, spec.est_cpu_pct)
                pl.status = InstanceStatus.RUNNING
            else:
                # Never reached the agent, or died with its previous session.
                lost.append(iid)
        for iid in sorted(reported - node.running_instances):
            self.send(node_id, p.terminate(iid))
        self.nodes[node_id] = node
        self.log_event("register", node_id=node_id, mem_capacity_mb=node.mem_capacity_mb, cpu_cores=node.cpu_cores)
        if lost:
            self._handle_orphans(lost, node_id)
        self.retry_queue()
        return node

    def heartbeat(self, snap: HeartbeatSnapshot) -> NodeState | None:
        node = self.nodes.get(snap.node_id)
        if node is None:
            self.diagnostics["heartbeat_unknown_node"] += 1
            return None
        was_unhealthy = node.health is Health.UNHEALTHY
        try:
            node = apply_heartbeat(node, snap, self.now())
        except StaleSnapshot:
            self.diagnostics["stale_snapshot"] += 1
            return None
        node = self._reconcile(node, snap)
        self.nodes[node.node_id] = node
        if was_unhealthy:
            self.log_event("recovered", node_id=node.node_id)
            self.retry_queue()
        return node

    def _reconcile(self, node: NodeState, snap: HeartbeatSnapshot) -> NodeState:
        """Adjust the agent's figures for launches and stops it has not seen yet.

        The snapshot is authoritative for anything we do not track. Instances we
        dispatched but the agent does not list yet are added; instances it still
        lists but we have moved or finished are subtracted and terminated.
        """
        ours = self._active_on(node.node_id)
        mem, cpu = node.mem_allocated_mb, node.cpu_allocated_pct
        running = set(snap.running_instances)
        for iid in sorted(ours - running):
            spec = self.specs[self.placements[iid].workload_id]
            mem += spec.est_mem_mb
            cpu += spec.est_cpu_pct
            running.add(iid)
        for iid in sorted(running - ours):
            pl = self.placements.get(iid)
            if pl is None:
                continue
            spec = self.specs[pl.workload_id]
            mem -= spec.est_mem_mb
            cpu -= spec.est_cpu_pct
            running.discard(iid)
            self.send(node.node_id, p.terminate(iid))
        for iid in sorted(ours & snap.running_instances):
            if self.placements[iid].status is InstanceStatus.DISPATCHED:
                self.placements[iid].status = InstanceStatus.RUNNING
        return NodeState(
            node.node_id, role=node.role, cpu_cores=node.cpu_cores, mem_capacity_mb=node.mem_capacity_mb,
            mem_allocated_mb=min(max(mem, 0.0), node.mem_capacity_mb),
            cpu_allocated_pct=max(cpu, 0.0), running_instances=frozenset(running),
            last_heartbeat=node.last_heartbeat, health=node.health,
            last_snapshot_at=node.last_snapshot_at, schedulable=node.schedulable,
        )

    def sweep(self) -> list[str]:
        """Update node health; re-place instances of nodes that just went Unhealthy."""
        ordered = self._ordered_nodes()
        before = {n.node_id: n for n in ordered}
        updated, _ = sweep_health(ordered, self.now(), self.config)
        lost = []
        for node in updated:
            self.nodes[node.node_id] = node
            previous = before[node.node_id].health
            if node.health is previous:
                continue
            self.log_event("health", node_id=node.node_id, health=node.health.value)
            if node.health is Health.UNHEALTHY:
                # Our placements, not the last snapshot, say what was lost.
                ids = sorted(self._active_on(node.node_id))
                lost.extend(ids)
                if ids:
                    self._handle_orphans(ids, node.node_id)
        if self.config.auto_rebalance:
            self.rebalance()
        return lost

    def _handle_orphans(self, ids: Sequence[str], node_id: str) -> None:
        now = self.now()
        orphans = []
        for iid in ids:
            pl = self.placements[iid]
            pl.status = InstanceStatus.QUEUED
            pl.node_id = None
            self.orphan_events.append({"instance_id": iid, "node_id": node_id, "at": now})
            self.log_event("orphaned", instance_id=iid, node_id=node_id)
            orphans.append(Orphan(iid, pl.workload_id, pl.runtime_class))
        decisions, leftover = requeue_orphans(orphans, self._ordered_nodes(), self.config, self.specs, now=now)
        for decision in decisions:
            self._dispatch(decision, self.specs[decision.workload_id])
        for orphan in leftover:
            self._enqueue_instances(self.specs[orphan.workload_id], orphan.runtime_class, [orphan.instance_id])

    # ------------------------------------------------------------- workloads

    def submit(self, spec: WorkloadSpec) -> PlacementDecision | Queued:
        """validate -> classify -> admit -> place -> dispatch.

        Raises ``ValidationError`` or :class:`DuplicateWorkloadId`.
        """
        vspec = validate_workload(spec, self.config)
        if vspec.id in self.specs and not self._workload_finished(vspec.id):
            raise DuplicateWorkloadId(f"workload {vspec.id!r} is still active")
        self.specs[vspec.id] = vspec
        rc = classify(vspec, self.rules)
        self.log_event("submit", workload_id=vspec.id, runtime_class=str(rc), instances=vspec.instances)
        outcome = admit(vspec, self._ordered_nodes(), self.config)
        if isinstance(outcome, Admit):
            try:
                decision = place(vspec, rc, self._ordered_nodes(), self.config, now=self.now())
            except NoCapacity:
                outcome = Queued()
            else:
                self._dispatch(decision, vspec)
                return decision
        return self._enqueue_fresh(vspec, rc)

    def _enqueue_fresh(self, spec: ValidatedSpec, rc: RuntimeClass) -> Queued:
        self._seq += 1
        self.queue.append(QueueEntry(spec, self._seq, rc))
        self.log_event("queued", workload_id=spec.id, reason="InsufficientCapacity")
        return Queued(position=self.queue_position(spec.id))

    def _enqueue_instances(self, spec: ValidatedSpec, rc: RuntimeClass, ids: list[str]) -> None:
        for entry in self.queue:
            if entry.spec.id == spec.id and entry.is_requeue:
                entry.instance_ids.extend(i for i in ids if i not in entry.instance_ids)
                break
        else:
            self._seq += 1
            self.queue.append(QueueEntry(spec, self._seq, rc, list(ids)))
        self.log_event("queued", workload_id=spec.id, instance_ids=list(ids), reason="NoHealthyCapacity")

    def queue_order(self) -> list[QueueEntry]:
        return sorted(self.queue, key=lambda e: (-e.spec.priority, e.seq))

    def queue_position(self, workload_id: str) -> int | None:
        for index, entry in enumerate(self.queue_order()):
            if entry.spec.id == workload_id:
                return index
        return None

    def retry_queue(self) -> list[PlacementDecision]:
        """Place every queued entry that now fits, in priority-then-FIFO order."""
        decisions = []
        room = self._headroom()
        for entry in self.queue_order():
            spec = entry.spec
            count = len(entry.instance_ids) or spec.instances
            if not _may_fit(spec, count, room):
                continue
            if entry.is_requeue:
                ids = entry.instance_ids
                one = ValidatedSpec(**{**_spec_fields(spec), "instances": len(ids)})
                reason = PlacementReason.REQUEUE_AFTER_FAILURE
            else:
                ids = instance_ids(spec.id, spec.instances)
                one = spec
                reason = PlacementReason.DEQUEUED
            try:
                # Placing with the real ids; a requeued instance may have running siblings.
                decision = place(one, entry.runtime_class, self._ordered_nodes(), self.config,
                                 now=self.now(), reason=reason, ids=ids)
            except NoCapacity:
                continue
            self.queue.remove(entry)
            self._dispatch(decision, spec)
            decisions.append(decision)
            room = self._headroom()
        return decisions

    def _headroom(self) -> tuple[float, float, float, float]:
        """Largest and total free memory and CPU over eligible nodes."""
        free = [(n.free_mem_mb, n.free_cpu_pct) for n in self.nodes.values() if n.eligible]
        if not free:
            return (-1.0, -1.0, -1.0, -1.0)
        return (max(m for m, _ in free), max(c for _, c in free),
                sum(m for m, _ in free), sum(c for _, c in free))

    def _dispatch(self, decision: PlacementDecision, spec: ValidatedSpec) -> None:
        self.log_event("placement", **decision.to_dict())
        for a in decision.assignments:
            previous = self.placements.get(a.instance_id)
            attempt = previous.attempt + 1 if previous is not None else 0
            self.placements[a.instance_id] = Placement(
                a.instance_id, spec.id, a.node_id, a.runtime_class, InstanceStatus.DISPATCHED, attempt,
            )
            self.nodes[a.node_id] = self.nodes[a.node_id].allocate(a.instance_id, spec.est_mem_mb, spec.est_cpu_pct)
            self.send(a.node_id, p.launch(self._launch_request(a.instance_id, spec, a.runtime_class, attempt)))

    def _launch_request(self, iid: str, spec: ValidatedSpec, rc: RuntimeClass, attempt: int) -> LaunchRequest:
        return LaunchRequest(
            instance_id=iid,
            workload_id=spec.id,
            runtime_class=rc,
            app_class=spec.app_class,
            payload_ref=spec.payload_ref,
            seed=derive_seed(self.config.rng_seed, iid, attempt),
            attempt=attempt,
            est_mem_mb=spec.est_mem_mb,
            est_cpu_pct=spec.est_cpu_pct,
        )

    def _release(self, pl: Placement) -> None:
        if pl.node_id is None or pl.node_id not in self.nodes:
            return
        spec = self.specs[pl.workload_id]
        self.nodes[pl.node_id] = self.nodes[pl.node_id].release(pl.instance_id, spec.est_mem_mb, spec.est_cpu_pct)

    # --------------------------------------------------------------- metrics

    def record(self, metrics, attempt: int) -> bool:
        """Store a metrics report once per ``(instance_id, attempt)``.

        Returns False for duplicates. A report for the current attempt finishes
        the instance, frees its capacity, and retries the admission queue.
        """
        if not self.metrics.append(metrics, attempt):
            self.diagnostics["duplicate_metrics"] += 1
            return False
        pl = self.placements.get(metrics.instance_id)
        if pl is None or pl.attempt != attempt or pl.status not in ACTIVE:
            self.diagnostics["stale_metrics"] += 1
            return True
        self._release(pl)
        pl.status = InstanceStatus.COMPLETED if metrics.ok else InstanceStatus.FAILED
        self.retry_queue()
        return True

    def on_launch_ack(self, node_id: str, instance_id: str) -> None:
        pl = self.placements.get(instance_id)
        if pl is not None and pl.node_id == node_id and pl.status is InstanceStatus.DISPATCHED:
            pl.status = InstanceStatus.RUNNING

    def on_launch_rejected(self, node_id: str, instance_id: str, code: str) -> None:
        """The agent refused a launch (e.g. no free slot): put the instance back in the queue."""
        pl = self.placements.get(instance_id)
        if pl is None or pl.node_id != node_id or pl.status not in ACTIVE:
            return
        self.diagnostics[f"launch_rejected_{code}"] += 1
        self._release(pl)
        pl.status = InstanceStatus.QUEUED
        pl.node_id = None
        self._enqueue_instances(self.specs[pl.workload_id], pl.runtime_class, [instance_id])

    # ------------------------------------------------------------- rebalance

    def rebalance(self) -> list[Migration]:
        """Move instances from the busiest to the idlest nodes (terminate and relaunch)."""
        demands = {
            iid: (self.specs[pl.workload_id].est_mem_mb, self.specs[pl.workload_id].est_cpu_pct)
            for iid, pl in self.placements.items()
        }
        migrations = rebalance(self._ordered_nodes(), self.config, demands)
        now = self.now()
        for m in migrations:
            pl = self.placements[m.instance_id]
            spec = self.specs[pl.workload_id]
            pl.status = InstanceStatus.MIGRATING
            self._release(pl)
            self.send(m.from_node, p.terminate(m.instance_id))
            self.log_event("migration", **m.to_dict())
            decision = PlacementDecision(
                pl.workload_id,
                (_assignment(m.instance_id, m.to_node, pl.runtime_class),),
                now,
                PlacementReason.REBALANCE,
            )
            self._dispatch(decision, spec)
        self.migrations.extend(migrations)
        return migrations

    # --------------------------------------------------------------- queries

    def _ordered_nodes(self) -> list[NodeState]:
        return [self.nodes[k] for k in sorted(self.nodes)]

    def _active_on(self, node_id: str) -> set[str]:
        return {iid for iid, pl in self.placements.items() if pl.node_id == node_id and pl.status in ACTIVE}

    def _workload_finished(self, workload_id: str) -> bool:
        if any(e.spec.id == workload_id for e in self.queue):
            return False
        return not any(pl.workload_id == workload_id and pl.status not in
                       (InstanceStatus.COMPLETED, InstanceStatus.FAILED)
                       for pl in self.placements.values())

    def instance_states(self) -> dict[str, str]:
        """Every known instance id mapped to exactly one lifecycle state."""
        states = {iid: pl.status.value for iid, pl in self.placements.items()}
        for entry in self.queue:
            ids = entry.instance_ids or instance_ids(entry.spec.id, entry.spec.instances)
            for iid in ids:
                states[iid] = InstanceStatus.QUEUED.value
        return states

    def active_counts(self) -> dict[str, int]:
        """Dispatched or running instances per worker node."""
        counts = {n.node_id: 0 for n in self.nodes.values() if n.role is Role.WORKER}
        for pl in self.placements.values():
            if pl.status in ACTIVE and pl.node_id is not None:
                counts[pl.node_id] = counts.get(pl.node_id, 0) + 1
        return dict(sorted(counts.items()))

    def workload_view(self, workload_id: str) -> dict[str, Any] | None:
        spec = self.specs.get(workload_id)
        if spec is None:
            return None
        instances = [self.placements[k].to_dict() for k in sorted(self.placements)
                     if self.placements[k].workload_id == workload_id]
        return {
            "workload": spec.to_dict(),
            "queue_position": self.queue_position(workload_id),
            "instances": instances,
        }

    def workloads_view(self) -> list[dict[str, Any]]:
        return [self.workload_view(w) for w in sorted(self.specs)]

    def nodes_view(self) -> list[dict[str, Any]]:
        return [self.nodes[k].to_dict() for k in sorted(self.nodes)]

    def summarize(self, selector=None) -> Summary:
        return summarize(self.metrics.records, selector)

    def compare(self, selector_a, selector_b) -> ComparisonReport:
        label_a = selector_a if isinstance(selector_a, str) else "A"
        label_b = selector_b if isinstance(selector_b, str) else "B"
        return compare(select(self.metrics.records, selector_a), select(self.metrics.records, selector_b),
                       label_a, label_b)

    def dump_placement_log(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.placement_log)

    def log_event(self, event: str, **fields: Any) -> None:
        self.placement_log.append({"event": event, "at": self.now(), **fields})


def _may_fit(spec: ValidatedSpec, count: int, room: tuple[float, float, float, float]) -> bool:
    # Necessary, not sufficient: the greedy placement has the final word.
    max_mem, max_cpu, total_mem, total_cpu = room
    return (spec.est_mem_mb <= max_mem and spec.est_cpu_pct <= max_cpu
            and count * spec.est_mem_mb <= total_mem + 1e-9 and count * spec.est_cpu_pct <= total_cpu + 1e-9)


def _spec_fields(spec: ValidatedSpec) -> Mapping[str, Any]:
    return spec.to_dict()


def _assignment(iid: str, node_id: str, rc: RuntimeClass):
    from .model import Assignment

    return Assignment(iid, node_id, rc)
