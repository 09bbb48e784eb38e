"""Admission, placement, rebalancing and orphan re-placement.

All functions here are pure: they take node snapshots and return decisions.
The manager applies the decisions to its own state.

Placement is greedy best-fit on residual capacity. Each instance goes to the
eligible node with the highest ``weight_mem * free_mem_fraction +
weight_cpu * free_cpu_fraction`` (ties to the smallest node id), and that node
is debited before the next instance is placed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import NoCapacity
from .model import (
    Assignment,
    ClusterConfig,
    NodeState,
    PlacementDecision,
    PlacementReason,
    RuntimeClass,
    ValidatedSpec,
    instance_ids,
)

INSUFFICIENT_CAPACITY = "InsufficientCapacity"


@dataclass(frozen=True)
class Admit:
    pass


@dataclass(frozen=True)
class Queued:
    reason: str = INSUFFICIENT_CAPACITY
    position: int | None = None


@dataclass(frozen=True)
class Migration:
    instance_id: str
    from_node: str
    to_node: str

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise ValueError("migration source and target must differ")

    def to_dict(self):
        return {"instance_id": self.instance_id, "from_node": self.from_node, "to_node": self.to_node}


@dataclass(frozen=True)
class Orphan:
    instance_id: str
    workload_id: str
    runtime_class: RuntimeClass


def _score(node: NodeState, config: ClusterConfig) -> float:
    free_mem = node.free_mem_mb / node.mem_capacity_mb
    free_cpu = node.free_cpu_pct / node.cpu_capacity_pct
    return config.weight_mem * free_mem + config.weight_cpu * free_cpu


def _pick(nodes: Mapping[str, NodeState], mem_mb: float, cpu_pct: float,
          config: ClusterConfig) -> str | None:
    best_id, best_score = None, None
    for node_id in sorted(nodes):
        node = nodes[node_id]
        if not node.eligible or not node.fits(mem_mb, cpu_pct):
            continue
        score = _score(node, config)
        if best_score is None or score > best_score:
            best_id, best_score = node_id, score
    return best_id


def _greedy(spec: ValidatedSpec, ids: Sequence[str], nodes: Iterable[NodeState],
            config: ClusterConfig) -> list[tuple[str, str]] | None:
    table = {n.node_id: n for n in nodes}
    chosen = []
    for iid in ids:
        node_id = _pick(table, spec.est_mem_mb, spec.est_cpu_pct, config)
        if node_id is None:
            return None
        table[node_id] = table[node_id].allocate(iid, spec.est_mem_mb, spec.est_cpu_pct)
        chosen.append((iid, node_id))
    return chosen


def admit(spec: ValidatedSpec, nodes: Iterable[NodeState],
          config: ClusterConfig | None = None) -> Admit | Queued:
    """Admit iff every instance fits somewhere, debiting hypothetically as we go.

    All instances share one footprint, so any greedy order that finds a fit for
    each of them succeeds exactly when placement will.
    """
    config = config or ClusterConfig()
    if _greedy(spec, instance_ids(spec.id, spec.instances), nodes, config) is None:
        return Queued(INSUFFICIENT_CAPACITY)
    return Admit()


def place(spec: ValidatedSpec, rc: RuntimeClass, nodes: Iterable[NodeState], config: ClusterConfig,
          *, now: float = 0.0, reason: PlacementReason = PlacementReason.FRESH,
          ids: Sequence[str] | None = None) -> PlacementDecision:
    ids = list(ids) if ids is not None else instance_ids(spec.id, spec.instances)
    chosen = _greedy(spec, ids, nodes, config)
    if chosen is None:
        raise NoCapacity(f"cannot place {spec.id}: cluster state changed since admission")
    return PlacementDecision(
        workload_id=spec.id,
        assignments=tuple(Assignment(iid, node_id, rc) for iid, node_id in chosen),
        decided_at=now,
        reason=reason,
    )


def rebalance(nodes: Iterable[NodeState], config: ClusterConfig,
              demands: Mapping[str, tuple[float, float]] | None = None) -> list[Migration]:
    """Even out instance counts across eligible nodes.

    While the busiest node holds more than ``rebalance_threshold`` instances
    above the idlest one, move its smallest instance id to the idlest node.
    Ties pick the smallest node id on both ends. When ``demands`` maps
    instance ids to ``(mem_mb, cpu_pct)``, a move must also fit on the target;
    if nothing fits the loop stops early.
    """
    table = {n.node_id: n for n in nodes if n.eligible}
    running = {node_id: sorted(n.running_instances) for node_id, n in table.items()}
    migrations: list[Migration] = []
    while len(running) > 1:
        src = min(running, key=lambda nid: (-len(running[nid]), nid))
        targets = sorted((nid for nid in running if nid != src), key=lambda nid: (len(running[nid]), nid))
        move = None
        for dst in targets:
            if len(running[src]) - len(running[dst]) <= config.rebalance_threshold:
                break
            for iid in running[src]:
                if demands is not None:
                    mem, cpu = demands.get(iid, (0.0, 0.0))
                    if not table[dst].fits(mem, cpu):
                        continue
                move = (iid, dst)
                break
            if move is not None:
                break
        if move is None:
            break
        iid, dst = move
        if demands is not None:
            mem, cpu = demands.get(iid, (0.0, 0.0))
            table[src] = table[src].release(iid, mem, cpu)
            table[dst] = table[dst].allocate(iid, mem, cpu)
        running[src].remove(iid)
        running[dst] = sorted(running[dst] + [iid])
        migrations.append(Migration(iid, src, dst))
    return migrations


def requeue_orphans(orphans: Sequence[Orphan], nodes: Iterable[NodeState], config: ClusterConfig,
                    specs: Mapping[str, ValidatedSpec], *,
                    now: float = 0.0) -> tuple[list[PlacementDecision], list[Orphan]]:
    """Re-place orphans one by one.

    Returns the decisions made and the orphans that did not fit anywhere; the
    caller puts the latter back on the admission queue.
    """
    table = {n.node_id: n for n in nodes}
    decisions: list[PlacementDecision] = []
    leftover: list[Orphan] = []
    for orphan in orphans:
        spec = specs[orphan.workload_id]
        node_id = _pick(table, spec.est_mem_mb, spec.est_cpu_pct, config)
        if node_id is None:
            leftover.append(orphan)
            continue
        table[node_id] = table[node_id].allocate(orphan.instance_id, spec.est_mem_mb, spec.est_cpu_pct)
        decisions.append(PlacementDecision(
            workload_id=orphan.workload_id,
            assignments=(Assignment(orphan.instance_id, node_id, orphan.runtime_class),),
            decided_at=now,
            reason=PlacementReason.REQUEUE_AFTER_FAILURE,
        ))
    return decisions, leftover


def apply_decision(nodes: Mapping[str, NodeState], decision: PlacementDecision,
                   spec: ValidatedSpec) -> dict[str, NodeState]:
    """Debit every assignment of ``decision`` on a copy of ``nodes``."""
    table = dict(nodes)
    for a in decision.assignments:
        table[a.node_id] = table[a.node_id].allocate(a.instance_id, spec.est_mem_mb, spec.est_cpu_pct)
    return table
