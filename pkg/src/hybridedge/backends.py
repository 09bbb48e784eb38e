"""Execution backends: calibrated simulation and external processes.

Both are coroutines so an agent can run several launches at once and cancel
them. The simulated backend sleeps on a :class:`~hybridedge.clock.Clock`; on a
virtual loop that costs no wall time.
"""

from __future__ import annotations

import asyncio
import logging
import os
import random
import shlex
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import psutil

from .calibration import CalibrationRegistry
from .clock import Clock
from .errors import KernelFailure
from .kernels import aggregate_file, image_tag, resolve_payload
from .model import (
    DETECTION_CLASSES,
    FAILURE,
    STREAM_AGGREGATE,
    SUCCESS,
    MetricsRecord,
    ResourceProfile,
    RuntimeClass,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LaunchRequest:
    instance_id: str
    workload_id: str
    runtime_class: RuntimeClass
    app_class: str
    payload_ref: str
    seed: int
    profile_override: ResourceProfile | None = None
    attempt: int = 0
    # Reserved demand, echoed back by the agent in its heartbeats.
    est_mem_mb: float = 0.0
    est_cpu_pct: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "workload_id": self.workload_id,
            "runtime_class": str(self.runtime_class),
            "app_class": self.app_class,
            "payload_ref": self.payload_ref,
            "seed": self.seed,
            "profile_override": self.profile_override.to_dict() if self.profile_override else None,
            "attempt": self.attempt,
            "est_mem_mb": self.est_mem_mb,
            "est_cpu_pct": self.est_cpu_pct,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "LaunchRequest":
        override = doc.get("profile_override")
        return cls(
            instance_id=str(doc["instance_id"]),
            workload_id=str(doc["workload_id"]),
            runtime_class=RuntimeClass.parse(doc["runtime_class"]),
            app_class=str(doc["app_class"]),
            payload_ref=str(doc.get("payload_ref", "")),
            seed=int(doc["seed"]),
            profile_override=ResourceProfile.from_dict(override) if override else None,
            attempt=int(doc.get("attempt", 0)),
            est_mem_mb=float(doc.get("est_mem_mb", 0.0)),
            est_cpu_pct=float(doc.get("est_cpu_pct", 0.0)),
        )


@dataclass(frozen=True)
class ExecutionResult:
    metrics: MetricsRecord
    artifacts: tuple[tuple[str, str], ...] = field(default_factory=tuple)


def _draw(rng: random.Random, mean: float, spread: float) -> float:
    return max(0.0, mean + rng.uniform(-1.0, 1.0) * spread)


def run_kernel(req: LaunchRequest, out_dir: Path) -> list[tuple[str, str]]:
    """Run the stub kernel for the request's app class; returns ``(name, path)`` artifacts."""
    if req.app_class == STREAM_AGGREGATE:
        path = aggregate_file(req.payload_ref, out_dir, req.instance_id)
    elif req.app_class in DETECTION_CLASSES:
        path = image_tag(req.payload_ref, req.app_class, req.instance_id, out_dir)
    else:
        return []
    return [(path.name, str(path))]


async def simulate_execution(req: LaunchRequest, registry: CalibrationRegistry, clock: Clock,
                             out_dir: Path, node_id: str = "") -> ExecutionResult:
    """Draw metrics from the calibrated profile and let boot + processing time elapse.

    Each metric is ``mean + u * spread`` with ``u`` uniform on [-1, 1] from a
    generator seeded by ``req.seed``. Raises ``UnknownProfile`` when the
    registry has no entry and no override was given.
    """
    profile = req.profile_override or registry.lookup(req.runtime_class.flavor, req.app_class)
    rng = random.Random(req.seed)
    cpu = _draw(rng, profile.cpu_pct_mean, profile.cpu_pct_spread)
    mem = _draw(rng, profile.mem_mb_mean, profile.mem_mb_spread)
    proc_time = _draw(rng, profile.proc_time_ms_mean, profile.proc_time_ms_spread)
    boot = profile.boot_ms

    started_at = clock.now()
    await clock.sleep(boot + proc_time)
    outcome, reason, artifacts = SUCCESS, None, []
    try:
        artifacts = run_kernel(req, out_dir)
    except KernelFailure as exc:
        outcome, reason = FAILURE, f"KernelFailure: {exc}"
    finished_at = max(clock.now(), started_at)
    record = MetricsRecord(
        instance_id=req.instance_id,
        workload_id=req.workload_id,
        node_id=node_id,
        runtime_class=req.runtime_class,
        app_class=req.app_class,
        cpu_avg_pct=cpu,
        mem_peak_mb=mem,
        proc_time_ms=proc_time,
        boot_ms=boot,
        started_at=started_at,
        finished_at=finished_at,
        outcome=outcome,
        reason=reason,
    )
    return ExecutionResult(record, tuple(artifacts))


def expand_command(template: str, req: LaunchRequest, out_dir: Path) -> list[str]:
    """Split ``template`` into argv and fill ``{placeholders}`` token by token.

    Available: instance_id, workload_id, payload_ref (resolved path), flavor,
    kind, app_class, seed, attempt, out_dir.
    """
    values = {
        "instance_id": req.instance_id,
        "workload_id": req.workload_id,
        "payload_ref": str(resolve_payload(req.payload_ref)) if req.payload_ref else "",
        "flavor": req.runtime_class.flavor,
        "kind": req.runtime_class.kind.value,
        "app_class": req.app_class,
        "seed": str(req.seed),
        "attempt": str(req.attempt),
        "out_dir": str(out_dir),
    }
    try:
        return [token.format_map(values) for token in shlex.split(template)]
    except (KeyError, ValueError, IndexError) as exc:
        raise ValueError(f"bad command template {template!r}: {exc}") from None


async def process_execution(req: LaunchRequest, command_template: str, *, out_dir: Path,
                            node_id: str = "", timeout_s: float | None = None,
                            clock: Clock | None = None, sample_interval_s: float = 0.02) -> ExecutionResult:
    """Run an external command for the launch and measure it.

    Success iff the command exits 0. Peak RSS and CPU time are sampled while the
    process runs, so very short commands may report zero for both.
    """
    instance_dir = out_dir / req.instance_id
    instance_dir.mkdir(parents=True, exist_ok=True)
    now = clock.now if clock is not None else (lambda: time.time() * 1000.0)
    started_at = now()
    t0 = time.perf_counter()
    peak_rss = 0
    cpu_s = 0.0
    reason = None
    argv: list[str] = []
    try:
        argv = expand_command(command_template, req, instance_dir)
        if not argv:
            raise ValueError("empty command")
        proc = await asyncio.create_subprocess_exec(
            *argv, stdout=asyncio.subprocess.DEVNULL, stderr=asyncio.subprocess.DEVNULL,
            cwd=str(instance_dir),
        )
    except (OSError, ValueError) as exc:
        reason = f"SpawnFailure({exc})"
        proc = None

    if proc is not None:
        try:
            sampler = psutil.Process(proc.pid)
        except psutil.Error:
            sampler = None
        try:
            while True:
                if sampler is not None:
                    try:
                        peak_rss = max(peak_rss, sampler.memory_info().rss)
                        times = sampler.cpu_times()
                        cpu_s = max(cpu_s, times.user + times.system)
                    except psutil.Error:
                        sampler = None
                try:
                    await asyncio.wait_for(proc.wait(), sample_interval_s)
                    break
                except asyncio.TimeoutError:
                    if timeout_s is not None and time.perf_counter() - t0 > timeout_s:
                        proc.kill()
                        await proc.wait()
                        reason = f"Timeout({timeout_s}s)"
                        break
        except asyncio.CancelledError:
            if proc.returncode is None:
                proc.kill()
                await proc.wait()
            raise
        if reason is None and proc.returncode != 0:
            reason = f"NonZeroExit({proc.returncode})"

    wall_ms = max((time.perf_counter() - t0) * 1000.0, 1e-6)
    artifacts = []
    if reason is None:
        artifacts = [(p.name, str(p)) for p in sorted(instance_dir.iterdir()) if p.is_file()]
    record = MetricsRecord(
        instance_id=req.instance_id,
        workload_id=req.workload_id,
        node_id=node_id,
        runtime_class=req.runtime_class,
        app_class=req.app_class,
        cpu_avg_pct=cpu_s / (wall_ms / 1000.0) * 100.0,
        mem_peak_mb=peak_rss / (1024 * 1024),
        proc_time_ms=wall_ms,
        boot_ms=0.0,
        started_at=started_at,
        finished_at=max(now(), started_at),
        outcome=SUCCESS if reason is None else FAILURE,
        reason=reason,
    )
    if reason is not None:
        log.info("launch %s failed: %s (argv %s)", req.instance_id, reason, argv)
    return ExecutionResult(record, tuple(artifacts))


class SimulatedBackend:
    def __init__(self, registry: CalibrationRegistry, clock: Clock, out_dir: Path | None = None):
        self.registry = registry
        self.clock = clock
        self.out_dir = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="hybridedge-"))

    async def execute(self, req: LaunchRequest, node_id: str) -> ExecutionResult:
        return await simulate_execution(req, self.registry, self.clock, self.out_dir, node_id)


class ProcessBackend:
    def __init__(self, command_template: str, out_dir: Path | None = None,
                 timeout_s: float | None = None, clock: Clock | None = None):
        self.command_template = command_template
        self.out_dir = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="hybridedge-"))
        self.timeout_s = timeout_s
        self.clock = clock

    async def execute(self, req: LaunchRequest, node_id: str) -> ExecutionResult:
        return await process_execution(req, self.command_template, out_dir=self.out_dir,
                                       node_id=node_id, timeout_s=self.timeout_s, clock=self.clock)


def default_out_dir() -> Path:
    return Path(os.environ.get("HYBRIDEDGE_ARTIFACTS", tempfile.gettempdir())) / "hybridedge-artifacts"
