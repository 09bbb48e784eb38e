"""HTTP control API.

Routing is a plain function, :func:`route`, run on the event loop that owns the
manager. The server is stdlib ``ThreadingHTTPServer``; each handler thread hands
its request to the loop with ``run_coroutine_threadsafe`` and waits.
"""

from __future__ import annotations

import asyncio
import json
import logging
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any
from urllib.parse import parse_qs, urlsplit

from .errors import DuplicateWorkloadId, EmptySet, UnknownFilterField, ValidationError
from .manager import Manager
from .model import PlacementDecision, WorkloadSpec
from .reports import parse_selector

log = logging.getLogger(__name__)

DEFAULT_API_PORT = 8470

_WORKLOAD = re.compile(r"^/v1/workloads/([^/]+)$")


def route(manager: Manager, method: str, path: str, query: dict[str, list[str]],
          body: Any) -> tuple[int, Any]:
    """Handle one request; returns ``(status, json document)``."""
    if method == "GET" and path == "/v1/healthz":
        return 200, {"status": "ok"}

    if path == "/v1/workloads":
        if method == "GET":
            return 200, manager.workloads_view()
        if method == "POST":
            if not isinstance(body, dict):
                return 400, {"error": "body must be a JSON object"}
            try:
                spec = WorkloadSpec.from_dict(body)
                outcome = manager.submit(spec)
            except ValidationError as exc:
                return 400, {"error": "ValidationFailed", "violations": [str(v) for v in exc.violations]}
            except DuplicateWorkloadId as exc:
                return 409, {"error": "DuplicateWorkloadId", "detail": str(exc)}
            except (TypeError, ValueError) as exc:
                return 400, {"error": "BadRequest", "detail": str(exc)}
            if isinstance(outcome, PlacementDecision):
                return 202, {"status": "placed", "decision": outcome.to_dict()}
            return 202, {"status": "queued", "reason": outcome.reason, "position": outcome.position}
        return 405, {"error": "method not allowed"}

    match = _WORKLOAD.match(path)
    if match and method == "GET":
        view = manager.workload_view(match.group(1))
        if view is None:
            return 404, {"error": "NotFound", "detail": match.group(1)}
        return 200, view

    if method == "GET" and path == "/v1/nodes":
        return 200, {"nodes": manager.nodes_view(),
                     "queue": [e.to_dict() for e in manager.queue_order()]}

    if method == "GET" and path == "/v1/metrics":
        text = ",".join(query.get("filter", []))
        try:
            selector = parse_selector(text or None)
            summary = manager.summarize(selector)
        except UnknownFilterField as exc:
            return 400, {"error": "UnknownFilterField", "detail": str(exc)}
        return 200, summary.to_dict()

    if method == "GET" and path == "/v1/reports/compare":
        a, b = query.get("a", [""])[0], query.get("b", [""])[0]
        if not a or not b:
            return 400, {"error": "BadRequest", "detail": "both a= and b= selectors are required"}
        try:
            report = manager.compare(a, b)
        except UnknownFilterField as exc:
            return 400, {"error": "UnknownFilterField", "detail": str(exc)}
        except EmptySet as exc:
            return 422, {"error": "EmptySet", "detail": str(exc)}
        return 200, report.to_dict()

    if method == "POST" and path == "/v1/rebalance":
        return 200, {"migrations": [m.to_dict() for m in manager.rebalance()]}

    return 404, {"error": "NotFound", "detail": path}


class _Handler(BaseHTTPRequestHandler):
    server: "ApiServer"

    def _handle(self, method: str) -> None:
        parts = urlsplit(self.path)
        body = None
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            try:
                body = json.loads(self.rfile.read(length))
            except json.JSONDecodeError as exc:
                self._reply(400, {"error": "BadRequest", "detail": f"invalid JSON: {exc.msg}"})
                return

        async def call():
            return route(self.server.manager, method, parts.path, parse_qs(parts.query), body)

        try:
            status, doc = asyncio.run_coroutine_threadsafe(call(), self.server.loop).result(timeout=30)
        except Exception as exc:  # keep the server alive; report the fault to the caller
            log.exception("API handler failed")
            status, doc = 500, {"error": type(exc).__name__, "detail": str(exc)}
        self._reply(status, doc)

    def _reply(self, status: int, doc: Any) -> None:
        data = json.dumps(doc, sort_keys=True, indent=2).encode() + b"\n"
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._handle("GET")

    def do_POST(self):
        self._handle("POST")

    def log_message(self, fmt, *args):
        log.debug("api: " + fmt, *args)


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], manager: Manager, loop: asyncio.AbstractEventLoop):
        super().__init__(address, _Handler)
        self.manager = manager
        self.loop = loop


def start_api(manager: Manager, loop: asyncio.AbstractEventLoop, host: str = "127.0.0.1",
              port: int = DEFAULT_API_PORT) -> ApiServer:
    """Serve the API from a background thread; call ``shutdown()`` to stop."""
    server = ApiServer((host, port), manager, loop)
    threading.Thread(target=server.serve_forever, name="hybridedge-api", daemon=True).start()
    return server
