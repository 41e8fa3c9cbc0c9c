"""Small JSON-over-HTTP service exposing simulation and ranking.

Model and registry state are loaded once and never mutated; every request
carries its own seed, so concurrent handling cannot change results. CORS is
open for the workbench origin.
"""

from __future__ import annotations

import json
import logging
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .actions import InfeasibleActionError
from .pipeline import (Bundle, ValidationError, canonical_json,
                       feasible_action_list, run_ranking, run_simulation,
                       SCHEMA_VERSION)

log = logging.getLogger("cardiosim.service")

DEFAULT_PORT = 8787


def _make_handler(bundle: Bundle, versions: dict):
    class Handler(BaseHTTPRequestHandler):
        server_version = "cardiosim"

        def log_message(self, fmt, *args):
            log.info("%s " + fmt, self.address_string(), *args)

        def _send(self, status: int, payload: dict | bytes) -> None:
            body = payload if isinstance(payload, bytes) else canonical_json(payload)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):  # CORS preflight
            self._send(204, b"")

        def do_GET(self):
            if self.path == "/api/health":
                self._send(200, {"status": "ok", "schema_version": SCHEMA_VERSION,
                                 "versions": versions})
            elif self.path == "/api/actions":
                self._send(200, feasible_action_list(bundle))
            else:
                self._send(404, {"error": f"no such endpoint {self.path}"})

        def _read_json(self) -> dict | None:
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length)
            try:
                obj = json.loads(raw.decode())
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                self._send(400, {"error": "malformed JSON body", "fields": {"body": str(exc)},
                                 "schema_version": SCHEMA_VERSION})
                return None
            if not isinstance(obj, dict):
                self._send(400, {"error": "request body must be a JSON object",
                                 "fields": {"body": "expected object"},
                                 "schema_version": SCHEMA_VERSION})
                return None
            return obj

        def do_POST(self):
            if self.path not in ("/api/simulate", "/api/rank"):
                self._send(404, {"error": f"no such endpoint {self.path}",
                                 "schema_version": SCHEMA_VERSION})
                return
            req = self._read_json()
            if req is None:
                return
            runner = run_simulation if self.path == "/api/simulate" else run_ranking
            try:
                self._send(200, runner(bundle, req))
            except ValidationError as exc:
                self._send(400, {"error": "invalid request", "fields": exc.fields,
                                 "schema_version": SCHEMA_VERSION})
            except InfeasibleActionError as exc:
                self._send(422, {"error": "infeasible action", "reason": exc.reason,
                                 "schema_version": SCHEMA_VERSION})
            except Exception:
                log.exception("request failed")
                self._send(500, {"error": "internal error",
                                 "schema_version": SCHEMA_VERSION})

    return Handler


def make_server(bundle: Bundle, port: int = DEFAULT_PORT,
                versions: dict | None = None) -> ThreadingHTTPServer:
    versions = versions or {}
    handler = _make_handler(bundle, versions)
    return ThreadingHTTPServer(("0.0.0.0", port), handler)
