"""Async shell around :class:`~hybridedge.manager.Manager`.

Every agent connection gets a reader (this coroutine) and a writer task fed by
an outbox queue. All Manager calls happen on the event loop thread, which is
what serializes cluster-state mutations.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Any

from . import protocol as p
from .errors import ProtocolError
from .manager import Manager
from .model import MetricsRecord
from .monitor import HeartbeatSnapshot

log = logging.getLogger(__name__)


class ManagerService:
    def __init__(self, manager: Manager, clock):
        self.manager = manager
        self.clock = clock
        self.outboxes: dict[str, asyncio.Queue] = {}
        self._tasks: list[asyncio.Task] = []
        self._server: asyncio.base_events.Server | None = None
        manager.send = self._send
        manager.now = clock.now

    def _send(self, node_id: str, msg: p.Message) -> None:
        box = self.outboxes.get(node_id)
        if box is None:
            self.manager.diagnostics["send_no_connection"] += 1
            return
        box.put_nowait(msg)

    # ------------------------------------------------------------ lifecycle

    def start(self) -> None:
        """Start the periodic health sweep and queue retry ticks."""
        cfg = self.manager.config
        self._tasks.append(asyncio.ensure_future(self._every(cfg.heartbeat_interval_ms / 2, self.manager.sweep)))
        self._tasks.append(asyncio.ensure_future(self._every(cfg.queue_retry_ms, self.manager.retry_queue)))

    async def _every(self, period_ms: float, fn) -> None:
        while True:
            await self.clock.sleep(period_ms)
            fn()

    async def serve_tcp(self, host: str, port: int) -> asyncio.base_events.Server:
        async def on_client(reader, writer):
            await self.handle_connection(p.StreamConnection(reader, writer))

        self._server = await asyncio.start_server(on_client, host, port, limit=p.MAX_LINE_BYTES)
        return self._server

    def connect_memory(self) -> p.MemoryConnection:
        """Open an in-process connection; returns the agent's end."""
        agent_end, manager_end = p.memory_pipe()
        self._tasks.append(asyncio.ensure_future(self.handle_connection(manager_end)))
        return agent_end

    async def connect_memory_async(self) -> p.MemoryConnection:
        return self.connect_memory()

    def stop(self) -> None:
        for task in self._tasks:
            task.cancel()
        self._tasks.clear()
        if self._server is not None:
            self._server.close()

    # ---------------------------------------------------------- connections

    async def handle_connection(self, conn: p.Connection) -> None:
        node_id = None
        writer = None
        box: asyncio.Queue = asyncio.Queue()
        try:
            first = await self._recv(conn)
            if first is None:
                return
            if first.type != p.REGISTER:
                await conn.send(p.error(p.ref(first.type, ""), p.UNEXPECTED, "first message must be Register"))
                return
            node_id = str(first.payload.get("node_id", ""))
            if not node_id:
                await conn.send(p.error(p.ref(p.REGISTER, ""), p.BAD_MESSAGE, "missing node_id"))
                return
            writer = asyncio.ensure_future(self._write(conn, box))
            self.outboxes[node_id] = box
            self._register(node_id, first)
            while True:
                msg = await self._recv(conn)
                if msg is None:
                    break
                reply = self._dispatch(node_id, msg)
                if reply is not None:
                    box.put_nowait(reply)
        except ConnectionError:
            pass
        finally:
            if node_id is not None and self.outboxes.get(node_id) is box:
                del self.outboxes[node_id]
            if writer is not None:
                writer.cancel()
            conn.close()

    async def _recv(self, conn: p.Connection) -> p.Message | None:
        while True:
            try:
                return await conn.recv()
            except ProtocolError as exc:
                await conn.send(p.error("", p.BAD_MESSAGE, str(exc)))

    async def _write(self, conn: p.Connection, box: asyncio.Queue) -> None:
        try:
            while True:
                await conn.send(await box.get())
        except ConnectionError:
            conn.close()

    def _register(self, node_id: str, msg: p.Message) -> None:
        payload = msg.payload
        reference = p.ref(p.REGISTER, node_id)
        try:
            mem = float(payload.get("mem_capacity_mb", 0))
            cores = int(payload.get("cpu_cores", 0))
            running = [str(i) for i in payload.get("running", [])]
            if mem <= 0 or cores <= 0:
                raise ValueError("capacities must be > 0")
        except (TypeError, ValueError) as exc:
            self.outboxes[node_id].put_nowait(p.error(reference, p.BAD_MESSAGE, str(exc)))
            return
        self.outboxes[node_id].put_nowait(
            p.ack(reference, heartbeat_interval_ms=self.manager.config.heartbeat_interval_ms))
        self.manager.register_node(node_id, mem, cores, running, payload.get("slots"))

    def _dispatch(self, node_id: str, msg: p.Message) -> p.Message | None:
        if msg.v != p.PROTOCOL_VERSION:
            return p.error(p.ref(msg.type, ""), p.VERSION_MISMATCH, f"expected v{p.PROTOCOL_VERSION}")
        if msg.type == p.REGISTER:
            self._register(node_id, msg)
            return None
        if msg.type == p.HEARTBEAT:
            try:
                snap = HeartbeatSnapshot.from_dict({**msg.payload, "node_id": node_id})
            except (KeyError, TypeError, ValueError) as exc:
                return p.error(p.ref(p.HEARTBEAT, node_id), p.BAD_MESSAGE, str(exc))
            self.manager.heartbeat(snap)
            return None
        if msg.type == p.METRICS_REPORT:
            try:
                record = MetricsRecord.from_dict(msg.payload["record"])
                attempt = int(msg.payload.get("attempt", 0))
            except (KeyError, TypeError, ValueError) as exc:
                return p.error(p.ref(p.METRICS_REPORT, ""), p.BAD_MESSAGE, str(exc))
            self.manager.record(record, attempt)
            return p.ack(p.ref(p.METRICS_REPORT, record.instance_id))
        if msg.type in (p.ACK, p.ERROR):
            kind, _, key = str(msg.payload.get("ref", "")).partition("/")
            if kind == p.LAUNCH:
                if msg.type == p.ACK:
                    self.manager.on_launch_ack(node_id, key)
                elif msg.payload.get("code") == p.BUSY:
                    self.manager.on_launch_rejected(node_id, key, p.BUSY)
            if msg.type == p.ERROR:
                log.info("%s reported %s for %s: %s", node_id, msg.payload.get("code"),
                         msg.payload.get("ref"), msg.payload.get("detail"))
            return None
        return p.error(p.ref(msg.type, ""), p.UNSUPPORTED_TYPE, "not accepted by the manager")

    def status(self) -> dict[str, Any]:
        return {
            "nodes": self.manager.nodes_view(),
            "queue": [e.to_dict() for e in self.manager.queue_order()],
            "connected": sorted(self.outboxes),
            "diagnostics": dict(sorted(self.manager.diagnostics.items())),
        }
