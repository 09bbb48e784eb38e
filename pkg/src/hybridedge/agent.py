"""Per-node agent.

The protocol logic lives in :func:`handle_message`, a pure transition function
returning the new state, the replies, and the side effects to carry out. The
:class:`Agent` runtime owns one state value and is the only place that calls
it, so transitions are serialized by construction.
"""

from __future__ import annotations

import asyncio
import dataclasses
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Awaitable, Callable, Iterator, Mapping

from . import protocol as p
from .backends import ExecutionResult, LaunchRequest, ProcessBackend, SimulatedBackend
from .calibration import load_registry
from .clock import Clock
from .errors import ProtocolError
from .model import FAILURE, MetricsRecord
from .monitor import HeartbeatSnapshot

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentConfig:
    node_id: str
    manager_host: str = "127.0.0.1"
    manager_port: int = 8471
    mem_capacity_mb: float = 4096.0
    cpu_cores: int = 4
    max_concurrent_slots: int = 16
    backend: str = "simulated"
    command_template: str | None = None
    process_timeout_s: float | None = None
    calibration_path: str | None = None
    out_dir: str | None = None
    heartbeat_interval_ms: float = 1000.0
    backoff_initial_ms: float = 500.0
    backoff_multiplier: float = 2.0
    backoff_cap_ms: float = 30_000.0
    time_scale: float | None = None

    def __post_init__(self):
        if not self.node_id:
            raise ValueError("node_id must be non-empty")
        if self.max_concurrent_slots < 1:
            raise ValueError("max_concurrent_slots must be >= 1")
        if self.mem_capacity_mb <= 0 or self.cpu_cores <= 0:
            raise ValueError("advertised capacities must be > 0")
        if self.backend not in ("simulated", "process"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "process" and not self.command_template:
            raise ValueError("the process backend needs a command_template")
        if self.heartbeat_interval_ms <= 0:
            raise ValueError("heartbeat_interval_ms must be > 0")
        if self.backoff_initial_ms <= 0 or self.backoff_multiplier < 1 or self.backoff_cap_ms < self.backoff_initial_ms:
            raise ValueError("invalid reconnect backoff")


@dataclass(frozen=True)
class AgentState:
    node_id: str
    slots: int
    running: Mapping[str, LaunchRequest] = field(default_factory=dict)

    @property
    def free_slots(self) -> int:
        return self.slots - len(self.running)


@dataclass(frozen=True)
class StartExecution:
    request: LaunchRequest


@dataclass(frozen=True)
class CancelExecution:
    instance_id: str


@dataclass(frozen=True)
class CloseConnection:
    reason: str


Command = StartExecution | CancelExecution | CloseConnection


def handle_message(state: AgentState, msg: p.Message) -> tuple[AgentState, list[p.Message], list[Command]]:
    """Apply one inbound message. Never mutates ``state``."""
    if msg.v != p.PROTOCOL_VERSION:
        reply = p.error(p.ref(msg.type, ""), p.VERSION_MISMATCH, f"expected v{p.PROTOCOL_VERSION}, got v{msg.v}")
        return state, [reply], [CloseConnection(p.VERSION_MISMATCH)]

    if msg.type == p.LAUNCH:
        try:
            req = LaunchRequest.from_dict(msg.payload)
        except (KeyError, TypeError, ValueError) as exc:
            key = str(msg.payload.get("instance_id", ""))
            return state, [p.error(p.ref(p.LAUNCH, key), p.BAD_MESSAGE, str(exc))], []
        reference = p.ref(p.LAUNCH, req.instance_id)
        if req.instance_id in state.running:
            # Redelivered launch: already running, nothing new to start.
            return state, [p.ack(reference)], []
        if state.free_slots <= 0:
            return state, [p.error(reference, p.BUSY, f"{state.slots}/{state.slots} slots in use")], []
        running = {**state.running, req.instance_id: req}
        return dataclasses.replace(state, running=running), [p.ack(reference)], [StartExecution(req)]

    if msg.type == p.TERMINATE:
        iid = str(msg.payload.get("instance_id", ""))
        reference = p.ref(p.TERMINATE, iid)
        if iid not in state.running:
            return state, [p.error(reference, p.NOT_FOUND, f"{iid!r} is not running")], []
        running = {k: v for k, v in state.running.items() if k != iid}
        return dataclasses.replace(state, running=running), [p.ack(reference)], [CancelExecution(iid)]

    if msg.type in (p.ACK, p.ERROR):
        return state, [], []

    detail = "not accepted by agents" if msg.type in p.MESSAGE_TYPES else "unknown message type"
    return state, [p.error(p.ref(msg.type, ""), p.UNSUPPORTED_TYPE, detail)], []


def handle_completion(state: AgentState, result: ExecutionResult) -> tuple[AgentState, list[p.Message]]:
    """Record a finished execution. Terminated instances report nothing."""
    iid = result.metrics.instance_id
    req = state.running.get(iid)
    if req is None:
        return state, []
    running = {k: v for k, v in state.running.items() if k != iid}
    return dataclasses.replace(state, running=running), [p.metrics_report(result.metrics, req.attempt)]


def snapshot(state: AgentState, now: float) -> HeartbeatSnapshot:
    reqs = [state.running[k] for k in sorted(state.running)]
    return HeartbeatSnapshot(
        node_id=state.node_id,
        mem_allocated_mb=sum(r.est_mem_mb for r in reqs),
        cpu_allocated_pct=sum(r.est_cpu_pct for r in reqs),
        running_instances=frozenset(state.running),
        sent_at=now,
    )


def backoff_delays(initial_ms: float, multiplier: float, cap_ms: float) -> Iterator[float]:
    delay = initial_ms
    while True:
        yield delay
        delay = min(delay * multiplier, cap_ms)


Backend = SimulatedBackend | ProcessBackend
Connector = Callable[[], Awaitable[p.Connection]]


class Agent:
    """Service loop around :func:`handle_message`.

    ``connect`` opens a fresh connection to the manager; it is called again with
    exponential backoff whenever the connection drops or cannot be opened.
    """

    def __init__(self, config: AgentConfig, backend: Backend, clock: Clock, connect: Connector):
        self.config = config
        self.backend = backend
        self.clock = clock
        self.connect = connect
        self.state = AgentState(config.node_id, config.max_concurrent_slots)
        self.heartbeat_interval_ms = config.heartbeat_interval_ms
        self.connect_attempts: list[float] = []
        self._executions: dict[str, asyncio.Task] = {}
        self._events: asyncio.Queue = asyncio.Queue()
        self._unacked: dict[str, p.Message] = {}
        self._session_ids = itertools.count()
        self._conn: p.Connection | None = None

    async def run(self) -> None:
        delays = backoff_delays(self.config.backoff_initial_ms, self.config.backoff_multiplier,
                                self.config.backoff_cap_ms)
        try:
            while True:
                self.connect_attempts.append(self.clock.now())
                try:
                    conn = await self.connect()
                except OSError as exc:
                    delay = next(delays)
                    log.info("%s: manager unreachable (%s); retrying in %.0f ms", self.config.node_id, exc, delay)
                    await self.clock.sleep(delay)
                    continue
                delays = backoff_delays(self.config.backoff_initial_ms, self.config.backoff_multiplier,
                                        self.config.backoff_cap_ms)
                await self._session(conn)
                delay = next(delays)
                await self.clock.sleep(delay)
        finally:
            self.stop()

    def stop(self) -> None:
        for task in self._executions.values():
            task.cancel()
        self._executions.clear()
        if self._conn is not None:
            self._conn.close()

    async def _session(self, conn: p.Connection) -> None:
        session = next(self._session_ids)
        self._conn = conn
        helpers = []
        try:
            await conn.send(p.register(self.config.node_id, self.config.mem_capacity_mb, self.config.cpu_cores,
                                       self.state.running, self.config.max_concurrent_slots))
            for iid in sorted(self._unacked):
                await conn.send(self._unacked[iid])
            helpers = [
                asyncio.ensure_future(self._read(conn, session)),
                asyncio.ensure_future(self._heartbeat(conn)),
            ]
            while True:
                tag, kind, data = await self._events.get()
                if kind == "closed":
                    if tag == session:
                        break
                    continue
                if kind == "done":
                    self._executions.pop(data.metrics.instance_id, None)
                    self.state, outbound = handle_completion(self.state, data)
                    for msg in outbound:
                        self._unacked[data.metrics.instance_id] = msg
                    await self._send_all(conn, outbound)
                    continue
                if tag != session:
                    continue
                await self._on_message(conn, data)
        except ConnectionError:
            pass
        finally:
            for task in helpers:
                task.cancel()
            conn.close()
            self._conn = None

    async def _on_message(self, conn: p.Connection, msg: p.Message) -> None:
        if msg.type == p.ACK:
            reference = str(msg.payload.get("ref", ""))
            kind, _, key = reference.partition("/")
            if kind == p.METRICS_REPORT:
                self._unacked.pop(key, None)
            elif kind == p.REGISTER and "heartbeat_interval_ms" in msg.payload:
                self.heartbeat_interval_ms = float(msg.payload["heartbeat_interval_ms"])
        self.state, outbound, commands = handle_message(self.state, msg)
        await self._send_all(conn, outbound)
        for command in commands:
            if isinstance(command, StartExecution):
                self._start(command.request)
            elif isinstance(command, CancelExecution):
                task = self._executions.pop(command.instance_id, None)
                if task is not None:
                    task.cancel()
            elif isinstance(command, CloseConnection):
                raise ConnectionError(command.reason)

    async def _send_all(self, conn: p.Connection, messages) -> None:
        # A ConnectionError ends the session; unacked metrics are resent after reconnecting.
        for msg in messages:
            await conn.send(msg)

    def _start(self, req: LaunchRequest) -> None:
        async def execute():
            try:
                result = await self.backend.execute(req, self.config.node_id)
            except asyncio.CancelledError:
                raise
            except Exception as exc:
                log.warning("%s: launch %s crashed: %s", self.config.node_id, req.instance_id, exc)
                result = _crash_result(req, self.config.node_id, self.clock.now(), exc)
            self._events.put_nowait((None, "done", result))

        self._executions[req.instance_id] = asyncio.ensure_future(execute())

    async def _read(self, conn: p.Connection, session: int) -> None:
        try:
            while True:
                try:
                    msg = await conn.recv()
                except ProtocolError as exc:
                    log.warning("%s: dropping malformed message: %s", self.config.node_id, exc)
                    await conn.send(p.error("", p.BAD_MESSAGE, str(exc)))
                    continue
                if msg is None:
                    break
                self._events.put_nowait((session, "message", msg))
        except ConnectionError:
            pass
        finally:
            self._events.put_nowait((session, "closed", None))

    async def _heartbeat(self, conn: p.Connection) -> None:
        try:
            while True:
                await self.clock.sleep(self.heartbeat_interval_ms)
                await conn.send(p.heartbeat(snapshot(self.state, self.clock.now())))
        except ConnectionError:
            pass


def _crash_result(req: LaunchRequest, node_id: str, now: float, exc: Exception) -> ExecutionResult:
    record = MetricsRecord(
        instance_id=req.instance_id, workload_id=req.workload_id, node_id=node_id,
        runtime_class=req.runtime_class, app_class=req.app_class, cpu_avg_pct=0.0,
        mem_peak_mb=0.0, proc_time_ms=0.0, boot_ms=0.0, started_at=now, finished_at=now,
        outcome=FAILURE, reason=f"{type(exc).__name__}: {exc}",
    )
    return ExecutionResult(record)


def build_backend(config: AgentConfig, clock: Clock) -> Backend:
    out_dir = Path(config.out_dir) if config.out_dir else None
    if config.backend == "process":
        return ProcessBackend(config.command_template or "", out_dir, config.process_timeout_s, clock)
    return SimulatedBackend(load_registry(config.calibration_path), clock, out_dir)


async def run_agent(config: AgentConfig) -> None:
    """Connect to the manager over TCP and serve forever."""
    clock = Clock(config.time_scale)
    agent = Agent(config, build_backend(config, clock), clock,
                  lambda: p.open_tcp(config.manager_host, config.manager_port))
    await agent.run()
