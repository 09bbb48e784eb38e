"""Manager <-> agent wire protocol.

One JSON object per line: ``{"v": 1, "type": ..., "payload": {...}}``. Unknown
fields are ignored so newer peers can add fields.

Agent to manager: ``Register`` (node_id, mem_capacity_mb, cpu_cores, running,
optional slots), ``Heartbeat`` (a HeartbeatSnapshot), ``MetricsReport``
(record, attempt). Manager to agent: ``Launch`` (a LaunchRequest),
``Terminate`` (instance_id). Either side: ``Ack`` (ref plus optional extras)
and ``Error`` (ref, code, detail).
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import ProtocolError

PROTOCOL_VERSION = 1

REGISTER = "Register"
HEARTBEAT = "Heartbeat"
LAUNCH = "Launch"
TERMINATE = "Terminate"
METRICS_REPORT = "MetricsReport"
ACK = "Ack"
ERROR = "Error"
MESSAGE_TYPES = (REGISTER, HEARTBEAT, LAUNCH, TERMINATE, METRICS_REPORT, ACK, ERROR)

# Error codes
BUSY = "Busy"
NOT_FOUND = "NotFound"
UNSUPPORTED_TYPE = "UnsupportedType"
VERSION_MISMATCH = "ProtocolVersionMismatch"
BAD_MESSAGE = "BadMessage"
UNEXPECTED = "UnexpectedMessage"

MAX_LINE_BYTES = 1 << 20


@dataclass(frozen=True)
class Message:
    type: str
    payload: Mapping[str, Any] = field(default_factory=dict)
    v: int = PROTOCOL_VERSION

    def to_dict(self) -> dict[str, Any]:
        return {"v": self.v, "type": self.type, "payload": dict(self.payload)}


def encode(msg: Message) -> bytes:
    return json.dumps(msg.to_dict(), sort_keys=True, separators=(",", ":")).encode() + b"\n"


def decode(line: bytes | str) -> Message:
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="replace")
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ProtocolError("message must be a JSON object")
    v, mtype, payload = doc.get("v"), doc.get("type"), doc.get("payload", {})
    if not isinstance(v, int) or isinstance(v, bool):
        raise ProtocolError("missing integer 'v'")
    if not isinstance(mtype, str):
        raise ProtocolError("missing string 'type'")
    if not isinstance(payload, dict):
        raise ProtocolError("'payload' must be an object")
    return Message(mtype, payload, v)


def ref(kind: str, key: str) -> str:
    """Reference string echoed in Ack/Error replies, e.g. ``Launch/job-0``."""
    return f"{kind}/{key}"


def ack(reference: str, **extra: Any) -> Message:
    return Message(ACK, {"ref": reference, **extra})


def error(reference: str, code: str, detail: str = "") -> Message:
    return Message(ERROR, {"ref": reference, "code": code, "detail": detail})


def register(node_id: str, mem_capacity_mb: float, cpu_cores: int, running, slots: int | None = None) -> Message:
    payload: dict[str, Any] = {
        "node_id": node_id,
        "mem_capacity_mb": mem_capacity_mb,
        "cpu_cores": cpu_cores,
        "running": sorted(running),
    }
    if slots is not None:
        payload["slots"] = slots
    return Message(REGISTER, payload)


def heartbeat(snapshot) -> Message:
    return Message(HEARTBEAT, snapshot.to_dict())


def launch(request) -> Message:
    return Message(LAUNCH, request.to_dict())


def terminate(instance_id: str) -> Message:
    return Message(TERMINATE, {"instance_id": instance_id})


def metrics_report(record, attempt: int) -> Message:
    return Message(METRICS_REPORT, {"record": record.to_dict(), "attempt": attempt})


class Connection:
    """Bidirectional message channel. ``recv`` returns ``None`` once closed."""

    async def send(self, msg: Message) -> None:
        raise NotImplementedError

    async def recv(self) -> Message | None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class StreamConnection(Connection):
    """Newline-delimited JSON over an asyncio stream (TCP in practice)."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self._reader = reader
        self._writer = writer
        self.closed = False

    async def send(self, msg: Message) -> None:
        if self.closed:
            raise ConnectionError("connection closed")
        self._writer.write(encode(msg))
        await self._writer.drain()

    async def recv(self) -> Message | None:
        while True:
            if self.closed:
                return None
            try:
                line = await self._reader.readline()
            except (ConnectionError, asyncio.LimitOverrunError, ValueError):
                self.close()
                return None
            if not line:
                self.close()
                return None
            if line.strip():
                return decode(line)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._writer.close()


async def open_tcp(host: str, port: int) -> StreamConnection:
    reader, writer = await asyncio.open_connection(host, port, limit=MAX_LINE_BYTES)
    return StreamConnection(reader, writer)


class MemoryConnection(Connection):
    """One end of an in-process pipe. Messages still go through encode/decode."""

    def __init__(self):
        self._inbox: asyncio.Queue[bytes | None] = asyncio.Queue()
        self.peer: MemoryConnection | None = None
        self.closed = False

    async def send(self, msg: Message) -> None:
        if self.closed or self.peer is None or self.peer.closed:
            raise ConnectionError("connection closed")
        self.peer._inbox.put_nowait(encode(msg))

    async def recv(self) -> Message | None:
        if self.closed:
            return None
        line = await self._inbox.get()
        if line is None:
            self.closed = True
            return None
        return decode(line)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._inbox.put_nowait(None)
        if self.peer is not None and not self.peer.closed:
            self.peer._inbox.put_nowait(None)


def memory_pipe() -> tuple[MemoryConnection, MemoryConnection]:
    a, b = MemoryConnection(), MemoryConnection()
    a.peer, b.peer = b, a
    return a, b
