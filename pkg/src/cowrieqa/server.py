"""HTTP inference service.

``POST /infer`` takes ``{"command": "..."}`` and answers
``{"prediction", "score", "model_version", "latency_ms"}``.  The request
handler (controller) validates the request; the :class:`ModelManager` owns the
model, which is loaded exactly once before the socket is bound, and runs
inference on a bounded thread pool.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional, Tuple

from .model import Extractor, Prediction, load_extractor
from .sinkmetrics import percentiles

log = logging.getLogger(__name__)

MAX_COMMAND_BYTES = 64 * 1024
# a JSON string may escape every byte as \uXXXX
MAX_BODY_BYTES = 6 * MAX_COMMAND_BYTES + 1024
MAX_LATENCY_SAMPLES = 1_000_000


class ModelManager:
    """Loads the extractor once and serves predictions from that instance."""

    def __init__(self, backend: str = "perceptron", model_path: Path | str | None = None,
                 extractor: Optional[Extractor] = None, workers: int = 4):
        self.load_count = 0
        self.extractor = extractor if extractor is not None else self._load(backend, model_path)
        if extractor is not None:
            self.load_count = 1
        self.version = self.extractor.version
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="infer")

    def _load(self, backend: str, model_path: Path | str | None) -> Extractor:
        extractor = load_extractor(backend, model_path)
        self.load_count += 1
        return extractor

    def predict(self, command: str) -> Tuple[Prediction, float]:
        """Run one prediction on the pool; returns it with its latency in ms."""

        def job() -> Tuple[Prediction, float]:
            t0 = time.perf_counter()
            pred = self.extractor.predict(command)
            return pred, (time.perf_counter() - t0) * 1000.0

        return self._pool.submit(job).result()

    def close(self) -> None:
        self._pool.shutdown(wait=True)


class Metrics:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.requests = 0
        self.errors = 0
        self._latencies: list[float] = []

    def record(self, ok: bool, latency_ms: Optional[float] = None) -> None:
        with self._lock:
            self.requests += 1
            if not ok:
                self.errors += 1
            if latency_ms is not None and len(self._latencies) < MAX_LATENCY_SAMPLES:
                self._latencies.append(latency_ms)

    def samples(self) -> list[float]:
        with self._lock:
            return list(self._latencies)

    def snapshot(self) -> dict:
        with self._lock:
            requests, errors, samples = self.requests, self.errors, list(self._latencies)
        out = {"requests": requests, "errors": errors, "latency_count": len(samples),
               "avg_ms": None, "p95_ms": None, "p99_ms": None}
        if samples:
            stats = percentiles(samples)
            out.update(avg_ms=stats.mean_ms, p95_ms=stats.p95_ms, p99_ms=stats.p99_ms)
        return out


class _BadRequest(Exception):
    def __init__(self, status: HTTPStatus, reason: str):
        super().__init__(reason)
        self.status = status
        self.reason = reason


class InferHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "InferenceServer"

    def setup(self) -> None:
        super().setup()
        # headers and body are separate writes; without this, delayed ACKs add ~40ms per response
        self.connection.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: HTTPStatus, body: dict, headers: Optional[dict] = None) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self) -> None:
        path = self.path.split("?", 1)[0]
        if path == "/health":
            if self.server.ready:
                self._send(HTTPStatus.OK, {"status": "ok", "model_version": self.server.manager.version})
            else:
                self._send(HTTPStatus.SERVICE_UNAVAILABLE, {"status": "loading"})
        elif path == "/metrics":
            snap = self.server.metrics.snapshot()
            snap["model_loads"] = self.server.manager.load_count
            snap["model_version"] = self.server.manager.version
            self._send(HTTPStatus.OK, snap)
        elif path == "/infer":
            self._method_not_allowed()
        else:
            self._send(HTTPStatus.NOT_FOUND, {"error": "not found"})

    def _method_not_allowed(self) -> None:
        allow = "POST" if self.path.split("?", 1)[0] == "/infer" else "GET"
        self._discard_body()
        self._send(HTTPStatus.METHOD_NOT_ALLOWED, {"error": "method not allowed"}, {"Allow": allow})

    do_PUT = do_DELETE = do_PATCH = _method_not_allowed

    def _discard_body(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        if 0 < length <= MAX_BODY_BYTES:
            self.rfile.read(length)
        elif length:
            self.close_connection = True

    def _read_command(self) -> str:
        ctype = (self.headers.get("Content-Type") or "").split(";", 1)[0].strip().lower()
        if ctype != "application/json":
            self._discard_body()
            raise _BadRequest(HTTPStatus.UNSUPPORTED_MEDIA_TYPE, "content type must be application/json")
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self.close_connection = True
            raise _BadRequest(HTTPStatus.BAD_REQUEST, "missing or invalid Content-Length") from None
        if length > MAX_BODY_BYTES:
            self.close_connection = True
            raise _BadRequest(HTTPStatus.BAD_REQUEST, "request body too large")
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            raise _BadRequest(HTTPStatus.BAD_REQUEST, "malformed JSON") from None
        if not isinstance(body, dict):
            raise _BadRequest(HTTPStatus.BAD_REQUEST, "malformed JSON: expected an object")
        if "command" not in body:
            raise _BadRequest(HTTPStatus.BAD_REQUEST, "missing field: command")
        command = body["command"]
        if not isinstance(command, str):
            raise _BadRequest(HTTPStatus.BAD_REQUEST, "field command must be a string")
        if not command.strip():
            raise _BadRequest(HTTPStatus.BAD_REQUEST, "empty command")
        try:
            size = len(command.encode("utf-8"))
        except UnicodeEncodeError:
            raise _BadRequest(HTTPStatus.BAD_REQUEST, "command is not valid UTF-8") from None
        if size > MAX_COMMAND_BYTES:
            raise _BadRequest(HTTPStatus.BAD_REQUEST, f"command exceeds {MAX_COMMAND_BYTES} bytes")
        return command

    def do_POST(self) -> None:
        if self.path.split("?", 1)[0] != "/infer":
            self._discard_body()
            if self.path.split("?", 1)[0] in ("/health", "/metrics"):
                self._send(HTTPStatus.METHOD_NOT_ALLOWED, {"error": "method not allowed"}, {"Allow": "GET"})
            else:
                self._send(HTTPStatus.NOT_FOUND, {"error": "not found"})
            return
        metrics = self.server.metrics
        try:
            command = self._read_command()
        except _BadRequest as exc:
            metrics.record(ok=False)
            self._send(exc.status, {"error": exc.reason})
            return
        try:
            pred, latency = self.server.manager.predict(command)
        except Exception:
            log.exception("prediction failed")
            metrics.record(ok=False)
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "internal error"})
            return
        metrics.record(ok=True, latency_ms=latency)
        self._send(HTTPStatus.OK, {
            "prediction": pred.answer,
            "score": pred.score,
            "model_version": self.server.manager.version,
            "latency_ms": latency,
        })


class InferenceServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    # the socketserver default of 5 resets connections under a burst of clients
    request_queue_size = 128

    def __init__(self, address: Tuple[str, int], manager: ModelManager):
        self.manager = manager
        self.metrics = Metrics()
        self.ready = False
        super().__init__(address, InferHandler)
        self.ready = True
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start_background(self) -> "InferenceServer":
        self._thread = threading.Thread(target=self.serve_forever, name="inference-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        self.manager.close()
        if self._thread is not None:
            self._thread.join()


def parse_bind(bind: str) -> Tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep:
        raise ValueError(f"bind address must be host:port, got {bind!r}")
    return host.strip("[]") or "127.0.0.1", int(port)


def start(bind_address: str | Tuple[str, int], model_path: Path | str | None = None, backend: str = "perceptron",
          workers: int = 4, extractor: Optional[Extractor] = None, background: bool = True) -> InferenceServer:
    """Load the model, then bind.  A model that fails to load never binds a port."""
    manager = ModelManager(backend, model_path, extractor=extractor, workers=workers)
    address = parse_bind(bind_address) if isinstance(bind_address, str) else bind_address
    try:
        server = InferenceServer(address, manager)
    except OSError:
        manager.close()
        raise
    if background:
        server.start_background()
    return server
