"""HTTP proxy backend.

Wire format (JSON over POST)::

    request  {"action": "complete", "temperature": 0, "op": "plan",
              "match": {...}, "request": {...}}
    response {"body": {...}}

``body`` uses the same shapes as scripted ``respond`` entries, so a script
can be served remotely unchanged (see :class:`ScriptServer`).
"""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

import httpx

from ..domain import DiffItem, Strategy, diff_items
from ..errors import BackendError, ReasonerError
from .base import PlanRequest, ReflectRequest, ReflectResponse, decode_plan
from .scripted import ScriptedReasoner, parse_script

ENDPOINT_ENV = "ROLEMESH_ENDPOINT"
TOKEN_ENV = "ROLEMESH_TOKEN"


class RemoteReasoner:
    def __init__(self, endpoint: str | None = None, token: str | None = None, timeout: float = 30.0,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not self.endpoint:
            raise BackendError(f"no endpoint configured (pass one or set {ENDPOINT_ENV})")
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self._client = client or httpx.Client(timeout=timeout)
        self._lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def _complete(self, op: str, match: dict, request: dict) -> dict:
        envelope = {"action": "complete", "temperature": 0, "op": op, "match": match, "request": request}
        headers = {"content-type": "application/json"}
        if self.token:
            headers["authorization"] = f"Bearer {self.token}"
        with self._lock:
            try:
                resp = self._client.post(self.endpoint, content=json.dumps(envelope), headers=headers)
            except httpx.HTTPError as exc:
                raise BackendError(f"transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"backend returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()["body"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendError("malformed backend response") from exc
        if not isinstance(body, dict):
            raise BackendError("backend body must be an object")
        return body

    def plan(self, req: PlanRequest):
        body = self._complete("plan", req.matcher(), req.to_data())
        return decode_plan(req.kind, body, req.scope)

    def reflect(self, req: ReflectRequest) -> ReflectResponse:
        body = self._complete("reflect", req.matcher(), req.to_data())
        return ReflectResponse.from_data(body).check(req.kind)

    def diff(self, s_new: Strategy, s_old: Strategy) -> list[DiffItem]:
        body = self._complete("diff", {"op": "diff"},
                              {"s_new": s_new.to_data(), "s_old": s_old.to_data()})
        items = body.get("items", [])
        if items == "auto":
            return diff_items(s_new, s_old, str(body.get("justification", "")))
        return [DiffItem.from_data(i) for i in items]


class ScriptServer:
    """Serve a script over the remote wire format on a local port."""

    def __init__(self, script: Any, host: str = "127.0.0.1", port: int = 0, token: str | None = None):
        self.reasoner = ScriptedReasoner(parse_script(script))
        self.token = token
        self.requests: list[dict] = []
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # silence stderr
                pass

            def do_POST(self):
                length = int(self.headers.get("content-length", 0))
                envelope = json.loads(self.rfile.read(length) or b"{}")
                if server.token and self.headers.get("authorization") != f"Bearer {server.token}":
                    self._reply(401, {"error": "unauthorized"})
                    return
                server.requests.append(envelope)
                try:
                    body = server.reasoner._take(envelope["match"])
                except ReasonerError as exc:
                    self._reply(409, {"error": str(exc)})
                    return
                if envelope.get("op") == "diff" and body.get("items", "auto") == "auto":
                    req = envelope["request"]
                    items = diff_items(Strategy.from_data(req["s_new"]), Strategy.from_data(req["s_old"]),
                                       str(body.get("justification", "")))
                    body = {"items": [i.to_data() for i in items]}
                self._reply(200, {"body": body})

            def _reply(self, status: int, data: dict):
                raw = json.dumps(data).encode()
                self.send_response(status)
                self.send_header("content-type", "application/json")
                self.send_header("content-length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/complete"

    def __enter__(self) -> "ScriptServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
