"""Label-only prediction oracle: an HTTP service wrapping a byte-feature
model, plus the budget-tracking client that is the adversary's only window
onto it.

Wire protocol (HTTP/1.1 + JSON):
  POST /predict   raw binary body -> {"label": "benign"|"malware"}
  GET  /health    -> {"status": "ok", "queries_used": N}
Errors: 400 on an empty or unprocessable body, 429 with
{"error": "budget_exhausted"} once the query limit is reached.  Successful
responses carry the label and nothing else; no confidence ever leaks.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import requests

from . import features, models
from .corpus import BinarySample, Label
from .features import FeatureSpace


class BudgetExhaustedError(RuntimeError):
    """Query budget spent; raised pre-flight by clients and on server 429s."""


class TransportError(RuntimeError):
    """Network-level failure talking to the oracle."""


class MalformedResponseError(RuntimeError):
    """Oracle answered with something that is not a label."""


class QueryLedger:
    """Thread-safe monotone query counter with an optional hard limit."""

    def __init__(self, limit: int | None = None):
        if limit is not None and limit < 0:
            raise ValueError("limit must be non-negative")
        self.limit = limit
        self._used = 0
        self._lock = threading.Lock()

    @property
    def used(self) -> int:
        return self._used

    def exhausted(self) -> bool:
        return self.limit is not None and self._used >= self.limit

    def acquire(self) -> None:
        """Reserve one query; raises instead of ever letting used exceed limit."""
        with self._lock:
            if self.limit is not None and self._used >= self.limit:
                raise BudgetExhaustedError(
                    f"query budget of {self.limit} exhausted"
                )
            self._used += 1

    def try_acquire(self) -> bool:
        with self._lock:
            if self.limit is not None and self._used >= self.limit:
                return False
            self._used += 1
            return True


@dataclass(frozen=True)
class OracleConfig:
    model_path: str
    bind_address: str = "127.0.0.1:0"
    query_limit: int | None = None
    log_path: str | None = None

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.bind_address.rpartition(":")
        return host or "127.0.0.1", int(port)


class _OracleHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "approxlab-oracle/1"

    def log_message(self, *args) -> None:  # keep stderr quiet
        pass

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        if self.path != "/health":
            self._reply(404, {"error": "not_found"})
            return
        self._reply(200, {"status": "ok", "queries_used": self.server.ledger.used})

    def do_POST(self) -> None:
        if self.path != "/predict":
            self._reply(404, {"error": "not_found"})
            return
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        if not body:
            self._reply(400, {"error": "empty_body"})
            return
        try:
            label = self.server.predict_bytes(body)
        except ValueError:
            self._reply(400, {"error": "unprocessable_body"})
            return
        # admit only after the prediction succeeded, so the budget counts
        # exactly the successful predictions
        if not self.server.ledger.try_acquire():
            self._reply(429, {"error": "budget_exhausted"})
            return
        self.server.log_query(body, label)
        self._reply(200, {"label": label.value})


class OracleServer(ThreadingHTTPServer):
    """Serves a byte-feature model; the ledger is the single admission point."""

    daemon_threads = True

    def __init__(
        self,
        model: models.PredModel,
        host: str = "127.0.0.1",
        port: int = 0,
        query_limit: int | None = None,
        log_path: str | Path | None = None,
    ):
        space = model.feature_space.partition(":")[0]
        if FeatureSpace(space) not in features.BYTE_SPACES:
            raise ValueError(
                f"oracle model must use a byte-feature space, got {model.feature_space}"
            )
        super().__init__((host, port), _OracleHandler)
        self.model = model
        self._extract = features.byte_extractor_for(model.feature_space)
        self.ledger = QueryLedger(query_limit)
        self._log_lock = threading.Lock()
        self._log = open(log_path, "a") if log_path else None
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def predict_bytes(self, body: bytes) -> Label:
        return models.predict(self.model, self._extract(body))

    def log_query(self, body: bytes, label: Label) -> None:
        if self._log is None:
            return
        row = {
            "ts": time.time(),
            "sample_digest": hashlib.sha256(body).hexdigest(),
            "label": label.value,
        }
        with self._log_lock:
            self._log.write(json.dumps(row) + "\n")
            self._log.flush()

    def start(self) -> "OracleServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def wait(self) -> None:
        """Block until the server shuts down."""
        if self._thread is not None:
            self._thread.join()

    def stop(self) -> None:
        self.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.server_close()
        if self._log is not None:
            self._log.close()


def serve(config: OracleConfig) -> OracleServer:
    """Load the model named by the config and start serving it."""
    model = models.load_model(config.model_path)
    host, port = config.host_port()
    server = OracleServer(
        model, host, port, query_limit=config.query_limit, log_path=config.log_path
    )
    return server.start()


def _parse_label(response: requests.Response) -> Label:
    try:
        payload = response.json()
        return Label(payload["label"])
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponseError(
            f"cannot parse oracle response {response.content[:200]!r}"
        ) from exc


def client_query(
    endpoint: str,
    sample: BinarySample,
    ledger: QueryLedger,
    session: requests.Session | None = None,
    timeout: float = 30.0,
) -> Label:
    """One budgeted prediction round trip.

    The ledger reservation happens before the wire call (and is kept on
    transport failure, so the count stays a safe upper bound); an exhausted
    ledger raises without touching the network.
    """
    ledger.acquire()
    post = (session or requests).post
    try:
        response = post(
            f"{endpoint.rstrip('/')}/predict",
            data=sample.data,
            headers={"Content-Type": "application/octet-stream"},
            timeout=timeout,
        )
    except requests.RequestException as exc:
        raise TransportError(f"oracle at {endpoint} unreachable: {exc}") from exc
    if response.status_code == 429:
        raise BudgetExhaustedError("oracle rejected query: server budget exhausted")
    if response.status_code != 200:
        raise MalformedResponseError(
            f"oracle returned HTTP {response.status_code}: {response.content[:200]!r}"
        )
    return _parse_label(response)


class OracleClient:
    """Endpoint + ledger + connection reuse, bundled for the pipeline."""

    def __init__(self, endpoint: str, ledger: QueryLedger | None = None):
        self.endpoint = endpoint
        self.ledger = ledger if ledger is not None else QueryLedger()
        self._session = requests.Session()

    def query(self, sample: BinarySample) -> Label:
        return client_query(self.endpoint, sample, self.ledger, self._session)

    def close(self) -> None:
        self._session.close()


class InProcessOracle:
    """Same contract as OracleClient without the wire; for fast tests and
    library use.  The network path stays the acceptance path."""

    def __init__(self, model: models.PredModel, ledger: QueryLedger | None = None):
        space = model.feature_space.partition(":")[0]
        if FeatureSpace(space) not in features.BYTE_SPACES:
            raise ValueError("oracle model must use a byte-feature space")
        self.model = model
        self.ledger = ledger if ledger is not None else QueryLedger()
        self._extract = features.byte_extractor_for(model.feature_space)

    def query(self, sample: BinarySample) -> Label:
        self.ledger.acquire()
        return models.predict(self.model, self._extract(sample))
