"""Read-only HTTP search endpoint.

``POST /search`` with ``{"query": str, "top_n": int?, "rerank": bool?}``
returns the same JSON object ``taskds query --json`` prints.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import signal
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .clients import ModelClient
from .kgraph import KnowledgeGraph
from .query import QueryConfig, SearchEngine, result_to_dict

logger = logging.getLogger(__name__)

MAX_BODY = 1 << 20
DEFAULT_TOP_N = 10


class RequestError(ValueError):
    def __init__(self, status: HTTPStatus, code: str, message: str) -> None:
        super().__init__(message)
        self.status, self.code = status, code


def run_query(
    engine: SearchEngine,
    graph: KnowledgeGraph,
    config: QueryConfig,
    query_text: str,
    *,
    top_n: int = DEFAULT_TOP_N,
    rerank: bool | None = None,
    reranker: ModelClient | None = None,
) -> dict[str, Any]:
    """Shared by the CLI and the endpoint so both return identical payloads."""
    if rerank is not None:
        config = dataclasses.replace(config, rerank_enabled=rerank)
    result = engine.search(query_text, config, reranker=reranker)
    return result_to_dict(result, graph, top_n)


def parse_request(body: bytes) -> tuple[str, int, bool | None]:
    try:
        data = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RequestError(HTTPStatus.BAD_REQUEST, "invalid_json", f"body is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise RequestError(HTTPStatus.BAD_REQUEST, "invalid_request", "body must be a JSON object")
    unknown = set(data) - {"query", "top_n", "rerank"}
    if unknown:
        raise RequestError(HTTPStatus.BAD_REQUEST, "invalid_request", f"unknown field(s): {sorted(unknown)}")
    query = data.get("query")
    if not isinstance(query, str) or not query.strip():
        raise RequestError(HTTPStatus.UNPROCESSABLE_ENTITY, "invalid_query", "query must be a non-empty string")
    top_n = data.get("top_n", DEFAULT_TOP_N)
    if isinstance(top_n, bool) or not isinstance(top_n, int) or top_n < 1:
        raise RequestError(HTTPStatus.UNPROCESSABLE_ENTITY, "invalid_top_n", "top_n must be a positive integer")
    rerank = data.get("rerank")
    if rerank is not None and not isinstance(rerank, bool):
        raise RequestError(HTTPStatus.UNPROCESSABLE_ENTITY, "invalid_rerank", "rerank must be a boolean")
    return query, top_n, rerank


class _Handler(BaseHTTPRequestHandler):
    server: "SearchServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args: Any) -> None:
        logger.info("%s %s", self.address_string(), fmt % args)

    def _send(self, status: HTTPStatus, payload: dict[str, Any]) -> None:
        body = (json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: HTTPStatus, code: str, message: str) -> None:
        self._send(status, {"error": {"code": code, "message": message, "status": int(status)}})

    def do_GET(self) -> None:
        if self.path == "/health":
            self._send(HTTPStatus.OK, {"status": "ok", "snapshot": self.server.snapshot_id})
        else:
            self._error(HTTPStatus.NOT_FOUND, "not_found", f"no route for GET {self.path}")

    def do_POST(self) -> None:
        if self.path != "/search":
            self._error(HTTPStatus.NOT_FOUND, "not_found", f"no route for POST {self.path}")
            return
        try:
            length = int(self.headers.get("Content-Length") or 0)
        except ValueError:
            length = -1
        if length < 0 or length > MAX_BODY:
            self._error(HTTPStatus.BAD_REQUEST, "invalid_length", "missing or oversized Content-Length")
            return
        try:
            query, top_n, rerank = parse_request(self.rfile.read(length))
            payload = run_query(
                self.server.engine, self.server.engine.graph, self.server.query_config, query,
                top_n=top_n, rerank=rerank, reranker=self.server.reranker,
            )
        except RequestError as exc:
            self._error(exc.status, exc.code, str(exc))
            return
        except Exception as exc:  # report, keep serving
            logger.exception("search failed")
            self._error(HTTPStatus.INTERNAL_SERVER_ERROR, "search_failed", f"{type(exc).__name__}: {exc}")
            return
        self._send(HTTPStatus.OK, payload)


class SearchServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(
        self,
        address: tuple[str, int],
        engine: SearchEngine,
        query_config: QueryConfig,
        reranker: ModelClient | None = None,
        snapshot_id: str | None = None,
    ) -> None:
        super().__init__(address, _Handler)
        self.engine = engine
        self.query_config = query_config
        self.reranker = reranker
        self.snapshot_id = snapshot_id


def serve_forever(server: SearchServer) -> None:
    """Serve until SIGINT/SIGTERM, then finish in-flight requests and close."""
    def stop(signum: int, frame: Any) -> None:
        threading.Thread(target=server.shutdown, daemon=True).start()

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, stop)
        signal.signal(signal.SIGINT, stop)
    host, port = server.server_address[:2]
    logger.info("serving on http://%s:%s/search", host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
