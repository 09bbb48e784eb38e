"""Heartbeat ingestion and health sweeps over the node table."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

from .errors import StaleSnapshot
from .model import ClusterConfig, Health, NodeState, Role


@dataclass(frozen=True)
class HeartbeatSnapshot:
    node_id: str
    mem_allocated_mb: float
    cpu_allocated_pct: float
    running_instances: frozenset[str]
    sent_at: float

    def __post_init__(self):
        object.__setattr__(self, "running_instances", frozenset(self.running_instances))
        if self.mem_allocated_mb < 0 or self.cpu_allocated_pct < 0:
            raise ValueError("snapshot allocations must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_id": self.node_id,
            "mem_allocated_mb": self.mem_allocated_mb,
            "cpu_allocated_pct": self.cpu_allocated_pct,
            "running_instances": sorted(self.running_instances),
            "sent_at": self.sent_at,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "HeartbeatSnapshot":
        return cls(
            node_id=str(doc["node_id"]),
            mem_allocated_mb=float(doc["mem_allocated_mb"]),
            cpu_allocated_pct=float(doc["cpu_allocated_pct"]),
            running_instances=frozenset(doc.get("running_instances", ())),
            sent_at=float(doc["sent_at"]),
        )


def apply_heartbeat(state: NodeState, snap: HeartbeatSnapshot, now: float) -> NodeState:
    """Replace the node's allocation figures with the agent's self-report.

    Raises :class:`StaleSnapshot` when ``snap`` was sent before the last applied
    one; the caller keeps the old state.
    """
    if snap.node_id != state.node_id:
        raise ValueError(f"snapshot for {snap.node_id} applied to {state.node_id}")
    if state.last_snapshot_at is not None and snap.sent_at < state.last_snapshot_at:
        raise StaleSnapshot(f"{snap.node_id}: sent_at {snap.sent_at} < {state.last_snapshot_at}")
    return dataclasses.replace(
        state,
        # An agent cannot really hold more than it advertised; clamp misreports.
        mem_allocated_mb=min(snap.mem_allocated_mb, state.mem_capacity_mb),
        cpu_allocated_pct=snap.cpu_allocated_pct,
        running_instances=snap.running_instances,
        last_heartbeat=now,
        last_snapshot_at=snap.sent_at,
        health=Health.HEALTHY,
    )


def health_for_gap(gap_ms: float, config: ClusterConfig) -> Health:
    interval = config.heartbeat_interval_ms
    if gap_ms < config.missed_heartbeats_suspect * interval:
        return Health.HEALTHY
    if gap_ms < config.missed_heartbeats_unhealthy * interval:
        return Health.SUSPECT
    return Health.UNHEALTHY


def sweep_health(nodes: Iterable[NodeState], now: float,
                 config: ClusterConfig) -> tuple[list[NodeState], list[str]]:
    """Recompute health from heartbeat age.

    Nodes crossing into Unhealthy hand back their running instances as orphans
    (sorted, once) and are emptied. The manager's own node is never swept.
    """
    updated = []
    orphans: list[str] = []
    for node in nodes:
        if node.role is Role.MANAGER:
            updated.append(node)
            continue
        health = health_for_gap(now - node.last_heartbeat, config)
        if health is Health.UNHEALTHY and node.health is not Health.UNHEALTHY:
            orphans.extend(sorted(node.running_instances))
            node = dataclasses.replace(
                node,
                health=health,
                running_instances=frozenset(),
                mem_allocated_mb=0.0,
                cpu_allocated_pct=0.0,
            )
        elif health is not node.health:
            node = dataclasses.replace(node, health=health)
        updated.append(node)
    return updated, orphans
