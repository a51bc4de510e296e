"""Executor agent as a JSON-RPC endpoint.

POST a body like ``{"jsonrpc": "2.0", "id": 1, "method": "ask",
"params": {"question": "...", "context": "..."}}``. The result holds
``answer``, ``sql`` and ``stats``. Every request gets its own executor run and
database session; failures come back in-band and the server keeps serving.
"""

from __future__ import annotations

import json
import logging
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .data import Database, DatabaseError, render_stats_block
from .executor import Executor
from .llm.gateway import GatewayError
from .models import Destination, ExplorationQuestion

logger = logging.getLogger(__name__)

INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
SERVER_ERROR = -32000


def _error(code: int, message: str, rid: Any = None) -> dict:
    return {"jsonrpc": "2.0", "id": rid, "error": {"code": code, "message": message}}


def handle_request(executor: Executor, database: Database, body: bytes) -> tuple[int, dict]:
    """Pure request handler: returns (http status, JSON-RPC response)."""
    try:
        req = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return HTTPStatus.BAD_REQUEST, _error(INVALID_REQUEST, "body is not valid JSON")
    if not isinstance(req, dict) or not isinstance(req.get("method"), str):
        return HTTPStatus.BAD_REQUEST, _error(INVALID_REQUEST, "expected an object with a method")
    rid = req.get("id")
    if req["method"] != "ask":
        return HTTPStatus.OK, _error(METHOD_NOT_FOUND, f"unknown method {req['method']!r}", rid)
    params = req.get("params") or {}
    question = params.get("question") if isinstance(params, dict) else None
    if not isinstance(question, str) or not question.strip():
        return HTTPStatus.BAD_REQUEST, _error(INVALID_PARAMS, "params.question must be a non-empty string", rid)
    context = params.get("context")
    text = f"{question}\n\nContext: {context}" if isinstance(context, str) and context.strip() else question
    try:
        database.ping()
        record, _ = executor.answer_question(
            ExplorationQuestion(text=text, destination=Destination.DATABASE), record_id="RPC"
        )
    except (DatabaseError, GatewayError) as exc:
        return HTTPStatus.OK, _error(SERVER_ERROR, f"{type(exc).__name__}: {exc}", rid)
    except Exception as exc:  # keep the service alive whatever the agent does
        logger.exception("request failed")
        return HTTPStatus.OK, _error(SERVER_ERROR, f"internal error: {exc}", rid)
    result = {
        "answer": record.final_answer,
        "sql": record.final_sql,
        "stats": render_stats_block(record.summaries) if record.summaries else "",
        "answered": record.answered,
        "flags": list(record.flags),
    }
    return HTTPStatus.OK, {"jsonrpc": "2.0", "id": rid, "result": result}


def make_server(executor: Executor, database: Database, host: str = "127.0.0.1", port: int = 8765):
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            status, payload = handle_request(executor, database, self.rfile.read(length))
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *args):
            logger.info("%s " + fmt, self.address_string(), *args)

    return ThreadingHTTPServer((host, port), Handler)
