"""JSON-over-HTTP logits protocol: client model and a loopback server.

Protocol
--------
``GET  {base}/v1/info``   -> ``{"k": K, "shape": [C, H, W]}``
``POST {base}/v1/logits`` with ``{"shape": [C, H, W], "image": [...]}``
                          -> ``{"logits": [K floats]}``

The image is flattened row-major in (c, h, w) order. A request may instead
carry ``"images": [[...], ...]`` and then receives ``"logits": [[...], ...]``.
Each image evaluated by the server counts as one query.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests

from .models import Model

log = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """The remote model could not be queried."""


class HTTPStatusError(TransportError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"server answered HTTP {status}: {body[:200]}")
        self.status = status


class MalformedResponseError(TransportError):
    pass


class ShapeMismatchError(TransportError, ValueError):
    """Image shape differs from the endpoint's advertised shape."""


class RemoteModel(Model):
    """Logits oracle behind the HTTP protocol.

    ``queries`` counts images the server evaluated successfully and
    ``round_trips`` counts successful HTTP exchanges; failed attempts that
    are retried are counted in ``attempts`` only. Each thread uses its own
    connection, so the client may be shared between threads.
    """

    def __init__(self, base_url: str, input_shape=None, num_classes: int | None = None,
                 timeout: float = 10.0, retries: int = 2, batch: bool = False, workers: int = 1):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.batch = batch
        self.workers = workers
        self.queries = 0
        self.round_trips = 0
        self.attempts = 0
        self._lock = threading.Lock()
        self._local = threading.local()
        if input_shape is None or num_classes is None:
            info = self._request("GET", "/v1/info")
            try:
                advertised = tuple(int(v) for v in info["shape"])
                k = int(info["k"])
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedResponseError(f"bad info document: {info!r}") from exc
            if input_shape is not None and tuple(input_shape) != advertised:
                raise ShapeMismatchError(f"endpoint serves {advertised}, expected {tuple(input_shape)}")
            input_shape, num_classes = advertised, k
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = int(num_classes)

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = self._local.session = requests.Session()
        return session

    def _request(self, method: str, path: str, payload=None):
        url = self.base_url + path
        last_error = None
        for attempt in range(self.retries + 1):
            with self._lock:
                self.attempts += 1
            try:
                if method == "GET":
                    resp = self._session().get(url, timeout=self.timeout)
                else:
                    resp = self._session().post(url, data=json.dumps(payload),
                                                headers={"Content-Type": "application/json"},
                                                timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                log.warning("request to %s failed (attempt %d): %s", url, attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_error = HTTPStatusError(resp.status_code, resp.text)
                continue
            if resp.status_code != 200:
                raise HTTPStatusError(resp.status_code, resp.text)
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponseError(f"response is not JSON: {resp.text[:200]!r}") from exc
        raise TransportError(f"giving up on {url} after {self.retries + 1} attempts: {last_error}")

    def _check_shape(self, xs: np.ndarray) -> None:
        if xs.shape[1:] != self.input_shape:
            raise ShapeMismatchError(f"image shape {xs.shape[1:]} does not match endpoint shape {self.input_shape}")

    def _parse_logits(self, doc, count: int) -> np.ndarray:
        try:
            z = np.asarray(doc["logits"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"bad logits document: {str(doc)[:200]}") from exc
        expected = (self.num_classes,) if count == 0 else (count, self.num_classes)
        if z.shape != expected:
            raise MalformedResponseError(f"logits shape {z.shape}, expected {expected}")
        return z

    def _one(self, x: np.ndarray) -> np.ndarray:
        doc = self._request("POST", "/v1/logits", {"shape": list(self.input_shape), "image": x.ravel().tolist()})
        z = self._parse_logits(doc, 0)
        with self._lock:
            self.queries += 1
            self.round_trips += 1
        return z

    def logits_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        self._check_shape(xs)
        if self.batch:
            payload = {"shape": list(self.input_shape), "images": [x.ravel().tolist() for x in xs]}
            z = self._parse_logits(self._request("POST", "/v1/logits", payload), len(xs))
            with self._lock:
                self.queries += len(xs)
                self.round_trips += 1
            return z
        if self.workers > 1 and len(xs) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return np.stack(list(pool.map(self._one, xs)))
        return np.stack([self._one(x) for x in xs])


# --------------------------------------------------------------------------
# Loopback server


class _Handler(BaseHTTPRequestHandler):
    server: "ModelServer"

    def log_message(self, fmt, *args):
        log.debug(fmt, *args)

    def _send(self, status: int, doc) -> None:
        body = json.dumps(doc).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path.rstrip("/") != "/v1/info":
            self._send(404, {"error": "not found"})
            return
        model = self.server.model
        self._send(200, {"k": model.num_classes, "shape": list(model.input_shape)})

    def do_POST(self):
        if self.path.rstrip("/") != "/v1/logits":
            self._send(404, {"error": "not found"})
            return
        model = self.server.model
        try:
            doc = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
            shape = tuple(int(v) for v in doc["shape"])
            if shape != tuple(model.input_shape):
                self._send(400, {"error": f"shape {list(shape)} does not match model {list(model.input_shape)}"})
                return
            if "images" in doc:
                xs = np.asarray(doc["images"], dtype=np.float64).reshape((-1,) + shape)
                out = [model.logits(x).tolist() for x in xs]
            else:
                out = model.logits(np.asarray(doc["image"], dtype=np.float64).reshape(shape)).tolist()
                xs = [None]
        except (KeyError, TypeError, ValueError) as exc:
            self._send(400, {"error": str(exc)})
            return
        with self.server.lock:
            self.server.images_served += len(xs)
            self.server.requests_served += 1
        self._send(200, {"logits": out})


class ModelServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, model: Model, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.model = model
        self.lock = threading.Lock()
        self.requests_served = 0
        self.images_served = 0

    @property
    def base_url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


@contextmanager
def serve_in_thread(model: Model, host: str = "127.0.0.1", port: int = 0):
    """Serve ``model`` on a background thread; yields the running server."""
    server = ModelServer(model, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()
        thread.join()
