"""Domain types shared across the orchestrator, plus the small arithmetic helpers.

Everything here is an immutable value. State changes (allocating an instance on a
node, filling in workload defaults) return new objects.

Units used throughout:

* memory in megabytes
* CPU in percent of one core (a 4-core node has a budget of 400)
* timestamps and durations in milliseconds of whatever clock drives the run
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import NonPositiveBaseline, ValidationError, ZeroCapacity

IMAGE = "image"
STREAM = "stream"
BUILTIN_PAYLOAD_KINDS = (IMAGE, STREAM)

FACE_DETECT = "FaceDetect"
CAR_DETECT = "CarDetect"
BODY_DETECT = "BodyDetect"
OBJECT_DETECT = "ObjectDetect"
STREAM_AGGREGATE = "StreamAggregate"
OTHER = "Other"

DETECTION_CLASSES = (FACE_DETECT, CAR_DETECT, BODY_DETECT, OBJECT_DETECT)
APP_CLASSES = DETECTION_CLASSES + (STREAM_AGGREGATE,)

# Node defaults follow the Raspberry Pi 4 testbed: 4 cores, 4 GB RAM.
DEFAULT_CPU_CORES = 4
DEFAULT_MEM_CAPACITY_MB = 4096.0

DEFAULT_EST_MEM_MB = {
    FACE_DETECT: 93.0,
    CAR_DETECT: 93.0,
    BODY_DETECT: 82.0,
    OBJECT_DETECT: 200.0,
    STREAM_AGGREGATE: 71.0,
    OTHER: 128.0,
}
DEFAULT_EST_CPU_PCT = {
    FACE_DETECT: 26.0,
    CAR_DETECT: 26.0,
    BODY_DETECT: 26.0,
    OBJECT_DETECT: 90.0,
    STREAM_AGGREGATE: 0.29,
    OTHER: 10.0,
}


def default_app_class(payload_kind: str) -> str:
    if payload_kind == IMAGE:
        return OBJECT_DETECT
    if payload_kind == STREAM:
        return STREAM_AGGREGATE
    return payload_kind


class RuntimeKind(str, enum.Enum):
    CONTAINER = "container"
    UNIKERNEL = "unikernel"


@dataclass(frozen=True, order=True)
class RuntimeClass:
    kind: RuntimeKind
    flavor: str

    def __post_init__(self):
        object.__setattr__(self, "kind", RuntimeKind(self.kind))

    def __str__(self):
        return f"{self.kind.value}/{self.flavor}"

    @classmethod
    def parse(cls, text: str) -> "RuntimeClass":
        """Parse ``"container/docker"`` style strings."""
        kind, sep, flavor = text.partition("/")
        if not sep or not flavor:
            raise ValueError(f"expected '<kind>/<flavor>', got {text!r}")
        return cls(RuntimeKind(kind.strip().lower()), flavor.strip())


@dataclass(frozen=True)
class ResourceProfile:
    """Cost model of one (flavor, app_class) pair: a mean and a half-width per metric."""

    cpu_pct_mean: float
    cpu_pct_spread: float
    mem_mb_mean: float
    mem_mb_spread: float
    proc_time_ms_mean: float
    proc_time_ms_spread: float
    boot_ms: float = 0.0

    def __post_init__(self):
        for name in ("cpu_pct_spread", "mem_mb_spread", "proc_time_ms_spread", "boot_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.cpu_pct_mean < 0:
            raise ValueError("cpu_pct_mean must be >= 0")
        if self.mem_mb_mean <= 0 or self.proc_time_ms_mean <= 0:
            raise ValueError("mem_mb_mean and proc_time_ms_mean must be > 0")

    def to_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ResourceProfile":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown profile fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in doc.items()})


class Role(str, enum.Enum):
    MANAGER = "manager"
    WORKER = "worker"


class Health(str, enum.Enum):
    HEALTHY = "healthy"
    SUSPECT = "suspect"
    UNHEALTHY = "unhealthy"


class PlacementReason(str, enum.Enum):
    FRESH = "fresh"
    REBALANCE = "rebalance"
    REQUEUE_AFTER_FAILURE = "requeue_after_failure"
    DEQUEUED = "dequeued_from_admission_queue"


@dataclass(frozen=True)
class WorkloadSpec:
    """A submitted task.

    ``payload_kind`` is ``"image"``, ``"stream"`` or any other name for a custom
    kind. ``app_class`` is one of :data:`APP_CLASSES` or a free-form name; when
    omitted it is derived from the payload kind during validation.
    """

    id: str
    payload_kind: str
    payload_ref: str = ""
    app_class: str | None = None
    est_mem_mb: float | None = None
    est_cpu_pct: float | None = None
    instances: int = 1
    priority: int = 0

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "WorkloadSpec":
        names = {f.name for f in dataclasses.fields(WorkloadSpec)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown workload fields: {sorted(unknown)}")
        return cls(**dict(doc))


@dataclass(frozen=True)
class ValidatedSpec(WorkloadSpec):
    """A :class:`WorkloadSpec` whose invariants hold and whose defaults are filled."""

    app_class: str = OTHER
    est_mem_mb: float = 0.0
    est_cpu_pct: float = 0.0


@dataclass(frozen=True)
class Violation:
    code: str
    field: str
    detail: str = ""

    def __str__(self):
        return f"{self.code}({self.field})" + (f": {self.detail}" if self.detail else "")


@dataclass
class ClusterConfig:
    heartbeat_interval_ms: float = 1000.0
    missed_heartbeats_suspect: int = 2
    missed_heartbeats_unhealthy: int = 3
    rebalance_threshold: int = 1
    weight_mem: float = 0.7
    weight_cpu: float = 0.3
    rng_seed: int = 0
    # None means a fully virtual clock; otherwise simulated ms / time_scale = real ms.
    time_scale: float | None = None
    default_est_mem_mb: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_EST_MEM_MB))
    default_est_cpu_pct: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_EST_CPU_PCT))
    queue_retry_ms: float = 1000.0
    manager_schedulable: bool = False
    auto_rebalance: bool = False

    def __post_init__(self):
        if self.heartbeat_interval_ms <= 0:
            raise ValueError("heartbeat_interval_ms must be > 0")
        if self.missed_heartbeats_suspect < 1:
            raise ValueError("missed_heartbeats_suspect must be >= 1")
        if self.missed_heartbeats_unhealthy < self.missed_heartbeats_suspect:
            raise ValueError("missed_heartbeats_unhealthy must be >= missed_heartbeats_suspect")
        if self.rebalance_threshold < 1:
            raise ValueError("rebalance_threshold must be >= 1")
        if self.weight_mem < 0 or self.weight_cpu < 0 or self.weight_mem + self.weight_cpu <= 0:
            raise ValueError("scheduler weights must be non-negative and not both zero")
        if self.time_scale is not None and self.time_scale <= 0:
            raise ValueError("time_scale must be > 0")
        if self.queue_retry_ms <= 0:
            raise ValueError("queue_retry_ms must be > 0")
        # Partial overrides from config files keep the remaining defaults.
        self.default_est_mem_mb = {**DEFAULT_EST_MEM_MB, **self.default_est_mem_mb}
        self.default_est_cpu_pct = {**DEFAULT_EST_CPU_PCT, **self.default_est_cpu_pct}

    def est_mem_for(self, app_class: str) -> float:
        return self.default_est_mem_mb.get(app_class, self.default_est_mem_mb[OTHER])

    def est_cpu_for(self, app_class: str) -> float:
        return self.default_est_cpu_pct.get(app_class, self.default_est_cpu_pct[OTHER])

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any] | None) -> "ClusterConfig":
        doc = dict(doc or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown cluster config fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class NodeState:
    node_id: str
    role: Role = Role.WORKER
    cpu_cores: int = DEFAULT_CPU_CORES
    mem_capacity_mb: float = DEFAULT_MEM_CAPACITY_MB
    mem_allocated_mb: float = 0.0
    cpu_allocated_pct: float = 0.0
    running_instances: frozenset[str] = frozenset()
    last_heartbeat: float = 0.0
    health: Health = Health.HEALTHY
    # sent_at of the last applied heartbeat, used to discard reordered snapshots
    last_snapshot_at: float | None = None
    schedulable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "running_instances", frozenset(self.running_instances))
        if self.mem_allocated_mb < 0 or self.mem_allocated_mb > self.mem_capacity_mb + 1e-9:
            raise ValueError(
                f"{self.node_id}: mem_allocated_mb {self.mem_allocated_mb} outside "
                f"[0, {self.mem_capacity_mb}]"
            )

    @property
    def cpu_capacity_pct(self) -> float:
        return 100.0 * self.cpu_cores

    @property
    def free_mem_mb(self) -> float:
        return self.mem_capacity_mb - self.mem_allocated_mb

    @property
    def free_cpu_pct(self) -> float:
        return self.cpu_capacity_pct - self.cpu_allocated_pct

    @property
    def eligible(self) -> bool:
        """True when the scheduler may place new instances here."""
        return self.health is Health.HEALTHY and self.schedulable

    def fits(self, mem_mb: float, cpu_pct: float) -> bool:
        return self.free_mem_mb >= mem_mb and self.free_cpu_pct >= cpu_pct

    def allocate(self, instance_id: str, mem_mb: float, cpu_pct: float) -> "NodeState":
        if instance_id in self.running_instances:
            raise ValueError(f"{instance_id} already allocated on {self.node_id}")
        return dataclasses.replace(
            self,
            mem_allocated_mb=self.mem_allocated_mb + mem_mb,
            cpu_allocated_pct=self.cpu_allocated_pct + cpu_pct,
            running_instances=self.running_instances | {instance_id},
        )

    def release(self, instance_id: str, mem_mb: float, cpu_pct: float) -> "NodeState":
        if instance_id not in self.running_instances:
            return self
        return dataclasses.replace(
            self,
            mem_allocated_mb=max(0.0, self.mem_allocated_mb - mem_mb),
            cpu_allocated_pct=max(0.0, self.cpu_allocated_pct - cpu_pct),
            running_instances=self.running_instances - {instance_id},
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_id": self.node_id,
            "role": self.role.value,
            "cpu_cores": self.cpu_cores,
            "mem_capacity_mb": self.mem_capacity_mb,
            "mem_allocated_mb": self.mem_allocated_mb,
            "cpu_allocated_pct": self.cpu_allocated_pct,
            "running_instances": sorted(self.running_instances),
            "last_heartbeat": self.last_heartbeat,
            "health": self.health.value,
            "schedulable": self.schedulable,
        }


@dataclass(frozen=True)
class Assignment:
    instance_id: str
    node_id: str
    runtime_class: RuntimeClass

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "node_id": self.node_id,
            "runtime_class": str(self.runtime_class),
        }


@dataclass(frozen=True)
class PlacementDecision:
    workload_id: str
    assignments: tuple[Assignment, ...]
    decided_at: float
    reason: PlacementReason = PlacementReason.FRESH

    def __post_init__(self):
        object.__setattr__(self, "assignments", tuple(self.assignments))
        ids = [a.instance_id for a in self.assignments]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate instance ids in decision for {self.workload_id}")

    def counts_by_node(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for a in self.assignments:
            counts[a.node_id] = counts.get(a.node_id, 0) + 1
        return counts

    def to_dict(self) -> dict[str, Any]:
        return {
            "workload_id": self.workload_id,
            "assignments": [a.to_dict() for a in self.assignments],
            "decided_at": self.decided_at,
            "reason": self.reason.value,
        }


SUCCESS = "success"
FAILURE = "failure"


@dataclass(frozen=True)
class MetricsRecord:
    """Measured resource usage of one instance execution."""

    instance_id: str
    workload_id: str
    node_id: str
    runtime_class: RuntimeClass
    cpu_avg_pct: float
    mem_peak_mb: float
    proc_time_ms: float
    boot_ms: float
    started_at: float
    finished_at: float
    outcome: str = SUCCESS
    reason: str | None = None
    app_class: str = OTHER

    def __post_init__(self):
        if self.finished_at < self.started_at:
            raise ValueError("finished_at precedes started_at")
        for name in ("cpu_avg_pct", "mem_peak_mb", "proc_time_ms", "boot_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.outcome not in (SUCCESS, FAILURE):
            raise ValueError(f"outcome must be {SUCCESS!r} or {FAILURE!r}")

    @property
    def ok(self) -> bool:
        return self.outcome == SUCCESS

    def to_dict(self) -> dict[str, Any]:
        doc = dataclasses.asdict(self)
        doc["runtime_class"] = str(self.runtime_class)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "MetricsRecord":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in doc.items() if k in names}
        rc = kwargs["runtime_class"]
        if isinstance(rc, str):
            kwargs["runtime_class"] = RuntimeClass.parse(rc)
        elif isinstance(rc, Mapping):
            kwargs["runtime_class"] = RuntimeClass(rc["kind"], rc["flavor"])
        return cls(**kwargs)


def validate_workload(spec: WorkloadSpec, config: ClusterConfig) -> ValidatedSpec:
    """Check invariants and fill defaults.

    Raises :class:`ValidationError` listing every violation. Validating an
    already-validated spec returns it unchanged.
    """
    if isinstance(spec, ValidatedSpec):
        return spec
    violations = []
    if not spec.id:
        violations.append(Violation("EmptyId", "id"))
    if spec.instances < 1:
        violations.append(Violation("ZeroInstances", "instances", f"got {spec.instances}"))
    for name in ("est_mem_mb", "est_cpu_pct"):
        value = getattr(spec, name)
        if value is not None and value < 0:
            violations.append(Violation("NegativeEstimate", name, f"got {value}"))
    if not spec.payload_kind:
        violations.append(Violation("EmptyPayloadKind", "payload_kind"))
    if violations:
        raise ValidationError(violations)

    app_class = spec.app_class or default_app_class(spec.payload_kind)
    return ValidatedSpec(
        id=spec.id,
        payload_kind=spec.payload_kind,
        payload_ref=spec.payload_ref,
        app_class=app_class,
        est_mem_mb=float(spec.est_mem_mb if spec.est_mem_mb is not None else config.est_mem_for(app_class)),
        est_cpu_pct=float(
            spec.est_cpu_pct if spec.est_cpu_pct is not None else config.est_cpu_for(app_class)
        ),
        instances=spec.instances,
        priority=spec.priority,
    )


def mem_saving_pct(baseline_mb: float, alternative_mb: float) -> float:
    """Percent of ``baseline_mb`` saved by using ``alternative_mb`` instead.

    Negative when the alternative uses more memory.
    """
    if baseline_mb <= 0:
        raise NonPositiveBaseline(f"baseline must be > 0, got {baseline_mb}")
    return (baseline_mb - alternative_mb) / baseline_mb * 100.0


def node_utilization(node: NodeState) -> tuple[float, float]:
    """Return ``(cpu_fraction, mem_fraction)``, each clamped to [0, 1]."""
    if node.cpu_cores <= 0 or node.mem_capacity_mb <= 0:
        raise ZeroCapacity(f"{node.node_id} has zero capacity")
    cpu = node.cpu_allocated_pct / (100.0 * node.cpu_cores)
    mem = node.mem_allocated_mb / node.mem_capacity_mb
    return min(max(cpu, 0.0), 1.0), min(max(mem, 0.0), 1.0)


def instance_ids(workload_id: str, count: int) -> list[str]:
    return [f"{workload_id}-{k}" for k in range(count)]
