"""Local HTTP server speaking the completion wire protocol, for tests and dry runs."""

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Dict, List, Mapping, Optional

from src.prompting import PromptError, parse_prompt


logger = logging.getLogger(__name__)

STRATEGIES = ("echo-last-example", "copy-reference")


class MockBackendError(Exception):
    """Raised when the mock backend is misconfigured."""
    pass


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"

    def do_POST(self) -> None:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            payload = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            self._send(400, {"error": "body is not JSON"})
            return

        status, body = self.server.backend.handle(payload, self.headers.get("Authorization"))
        self._send(status, body)

    def _send(self, status: int, body: Dict[str, Any]) -> None:
        data = json.dumps(body, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, format: str, *args: Any) -> None:
        logger.debug(f"mock backend: {format % args}")


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    backend: "MockCompletionBackend"


class MockCompletionBackend:
    """Completion server with scripted answers and request capture.

    Strategies:
    - echo-last-example: answers with the target of the last in-context example
    - copy-reference: answers with the reference translation of the query

    The first ``fail_first`` requests are answered with ``fail_status`` to
    exercise client retries. Use as a context manager.
    """

    def __init__(self, strategy: str = "echo-last-example",
                 references: Optional[Mapping[str, str]] = None,
                 fail_first: int = 0, fail_status: int = 503,
                 host: str = "127.0.0.1", port: int = 0):
        if strategy not in STRATEGIES:
            raise MockBackendError(f"Unknown strategy: {strategy}. Choose from {', '.join(STRATEGIES)}")
        if strategy == "copy-reference" and references is None:
            raise MockBackendError("copy-reference strategy needs references")
        self.strategy = strategy
        self.references = dict(references or {})
        self.fail_first = fail_first
        self.fail_status = fail_status
        self.host = host
        self.port = port
        self.requests: List[Dict[str, Any]] = []
        self.authorizations: List[Optional[str]] = []
        self._lock = threading.Lock()
        self._server: Optional[_Server] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        if self._server is None:
            raise MockBackendError("Mock backend is not running")
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/completions"

    def start(self) -> "MockCompletionBackend":
        self._server = _Server((self.host, self.port), _Handler)
        self._server.backend = self
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        logger.info(f"Mock completion backend ({self.strategy}) listening on {self.url}")
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def __enter__(self) -> "MockCompletionBackend":
        return self.start()

    def __exit__(self, *exc_info: Any) -> None:
        self.stop()

    def handle(self, payload: Dict[str, Any], authorization: Optional[str]):
        """Record a request and produce (status, body)."""
        with self._lock:
            self.requests.append(payload)
            self.authorizations.append(authorization)
            attempt = len(self.requests)

        if attempt <= self.fail_first:
            return self.fail_status, {"error": "scripted failure"}

        prompt = payload.get("prompt")
        if not isinstance(prompt, str):
            return 400, {"error": "missing prompt"}
        try:
            examples, query = parse_prompt(prompt)
        except PromptError as e:
            return 400, {"error": str(e)}

        if self.strategy == "echo-last-example":
            completion = examples[-1][1] if examples else ""
        elif query in self.references:
            completion = self.references[query]
        else:
            return 404, {"error": f"no reference for query {query!r}"}
        return 200, {"completion": completion + "\n"}
