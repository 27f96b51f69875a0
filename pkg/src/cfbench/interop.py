"""Harness side of the external-forecaster wire protocol (v1).

Messages are newline-delimited UTF-8 JSON objects, one per line, with
NaN/Inf forbidden on the wire:

    {"type": "ping"}                       -> {"type": "pong", "proto": 1}
    {"type": "forecast", "id": N,
     "context": [...], "horizon": H,
     "n_samples": S,
     "covariates": {...}?, "params": {...}?}
        -> {"type": "forecast_result", "id": N, "samples": [[...], ...]}
        or {"type": "error", "id": N, "code": "...", "message": "..."}

Unknown fields are ignored. Transports: a child process speaking the
protocol on its standard streams (default) or a TCP host:port. One request
is in flight per endpoint at a time; a timed-out forecast is retried once,
so every call resolves within twice the configured timeout.
"""

from __future__ import annotations

import json
import socket
import subprocess
import threading
import time
from dataclasses import dataclass
from queue import Empty, Queue
from typing import Mapping, Sequence

import numpy as np

from .backtest import BacktestModel, WindowData
from .errors import ProtocolError, RemoteModelError, UnavailableError
from .forecasting import Forecast, ForecastRequest

PROTO_VERSION = 1

_CLOSED = object()


def encode_message(message: Mapping) -> str:
    try:
        return json.dumps(message, allow_nan=False)
    except ValueError as exc:
        raise ProtocolError(f"refusing to put NaN/Inf on the wire: {exc}") from None


def _reject_constant(text: str):
    raise ProtocolError(f"non-finite number {text!r} on the wire")


def decode_message(line: str) -> dict:
    try:
        message = json.loads(line, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed message ({exc}): {line[:120]!r}") from None
    if not isinstance(message, dict):
        raise ProtocolError(f"expected a JSON object, got: {line[:120]!r}")
    return message


class StdioTransport:
    """Child process exchanging protocol lines on stdin/stdout."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: Queue = Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_CLOSED)

    def send_line(self, line: str) -> None:
        if self._proc.poll() is not None:
            raise UnavailableError(f"endpoint process exited ({self._proc.returncode})")
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise UnavailableError(f"endpoint pipe closed: {exc}") from None

    def recv_line(self, timeout: float) -> str:
        try:
            item = self._lines.get(timeout=timeout)
        except Empty:
            raise UnavailableError(f"no response within {timeout}s") from None
        if item is _CLOSED:
            raise UnavailableError("endpoint closed its output stream")
        return item

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=3)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class TcpTransport:
    """Line-oriented protocol over a TCP connection."""

    def __init__(self, host: str, port: int, connect_timeout: float = 5.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise UnavailableError(f"cannot connect to {host}:{port}: {exc}") from None
        self._file = self._sock.makefile("r", encoding="utf-8", newline="\n")

    def send_line(self, line: str) -> None:
        try:
            self._sock.sendall((line + "\n").encode("utf-8"))
        except OSError as exc:
            raise UnavailableError(f"TCP send failed: {exc}") from None

    def recv_line(self, timeout: float) -> str:
        self._sock.settimeout(timeout)
        try:
            line = self._file.readline()
        except (TimeoutError, socket.timeout):
            raise UnavailableError(f"no response within {timeout}s") from None
        except OSError as exc:
            raise UnavailableError(f"TCP receive failed: {exc}") from None
        if line == "":
            raise UnavailableError("endpoint closed the connection")
        return line

    def close(self) -> None:
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass


@dataclass
class AdapterEndpoint:
    """How to reach one external forecaster and what to call it."""

    command: Sequence[str] | None = None  # child-process transport
    host: str | None = None  # or TCP
    port: int | None = None
    timeout: float = 30.0
    label: str = "remote"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ProtocolError("timeout must be positive")
        if not self.label:
            raise ProtocolError("endpoint label must be non-empty")
        if self.command is None and (self.host is None or self.port is None):
            raise ProtocolError("endpoint needs a command or a host:port")

    def open_transport(self):
        if self.command is not None:
            return StdioTransport(self.command)
        return TcpTransport(self.host, self.port)


@dataclass
class HealthStatus:
    healthy: bool
    reason: str | None = None


class RemoteForecaster:
    """Forecaster backed by a protocol endpoint (one in-flight request)."""

    def __init__(self, endpoint: AdapterEndpoint):
        self.endpoint = endpoint
        self.name = endpoint.label
        self._transport = None
        self._next_id = 1
        self._lock = threading.Lock()

    # -- transport plumbing -------------------------------------------------

    def _ensure_transport(self):
        if self._transport is None:
            self._transport = self.endpoint.open_transport()
        return self._transport

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()
            self._transport = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _roundtrip(self, message: Mapping, want_id: int | None) -> dict:
        transport = self._ensure_transport()
        transport.send_line(encode_message(message))
        deadline = time.monotonic() + self.endpoint.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise UnavailableError(f"no response within {self.endpoint.timeout}s")
            reply = decode_message(transport.recv_line(remaining))
            got_id = reply.get("id")
            if want_id is None or got_id == want_id:
                return reply
            if isinstance(got_id, int) and got_id < want_id:
                continue  # stale answer to an abandoned (timed-out) request
            raise ProtocolError(f"response id {got_id!r} does not match request id {want_id}")

    # -- protocol operations ------------------------------------------------

    def health_check(self) -> HealthStatus:
        """Ping; healthy iff a well-formed pong arrives in time."""
        try:
            reply = self._roundtrip({"type": "ping"}, want_id=None)
        except UnavailableError as exc:
            return HealthStatus(False, f"timeout: {exc}")
        except ProtocolError as exc:
            return HealthStatus(False, f"protocol: {exc}")
        if reply.get("type") != "pong" or reply.get("proto") != PROTO_VERSION:
            return HealthStatus(False, f"protocol: unexpected reply {reply!r}")
        return HealthStatus(True)

    def remote_forecast(
        self,
        req: ForecastRequest,
        covariates: Mapping[str, np.ndarray] | None = None,
        params: Mapping | None = None,
    ) -> Forecast:
        """Serialize, await the matching reply, validate, convert.

        A timed-out request is retried exactly once with a fresh id.
        """
        with self._lock:
            message = {
                "type": "forecast",
                "context": [float(x) for x in req.context],
                "horizon": int(req.horizon),
                "n_samples": int(req.n_samples),
            }
            if covariates:
                message["covariates"] = {
                    name: [float(x) for x in series] for name, series in covariates.items()
                }
            if params:
                message["params"] = dict(params)
            attempts = 0
            while True:
                attempts += 1
                message["id"] = self._next_id
                self._next_id += 1
                try:
                    reply = self._roundtrip(message, want_id=message["id"])
                    break
                except UnavailableError:
                    if attempts >= 2:
                        raise
        return self._to_forecast(reply, req)

    def _to_forecast(self, reply: dict, req: ForecastRequest) -> Forecast:
        kind = reply.get("type")
        if kind == "error":
            raise RemoteModelError(
                str(reply.get("code", "unknown")), str(reply.get("message", ""))
            )
        if kind != "forecast_result":
            raise ProtocolError(f"unexpected message type {kind!r}")
        samples = reply.get("samples")
        if not isinstance(samples, list) or len(samples) != req.n_samples:
            raise ProtocolError(f"expected {req.n_samples} sample paths, got {samples!r:.120}")
        widths = {len(p) if isinstance(p, list) else -1 for p in samples}
        if widths != {req.horizon}:
            raise ProtocolError(f"sample paths must all have length {req.horizon}: got {widths}")
        arr = np.asarray(samples, dtype=float)
        if not np.isfinite(arr).all():
            raise ProtocolError("non-finite values in sample paths")
        return Forecast.from_samples(arr)

    # Forecaster protocol: the seed for the remote sampler travels in params.
    def forecast(self, req: ForecastRequest, rng: np.random.Generator) -> Forecast:
        seed = int(rng.integers(2**31)) if rng is not None else 0
        return self.remote_forecast(req, params={"seed": seed})


class RemoteModel(BacktestModel):
    """Backtest adapter: forwards covariate contexts so the sidecar may use
    its own covariate handling."""

    def __init__(self, forecaster: RemoteForecaster, send_covariates: bool = True):
        self.forecaster = forecaster
        self.name = forecaster.name
        self.send_covariates = send_covariates

    def forecast_window(self, data: WindowData, rng: np.random.Generator) -> Forecast:
        req = ForecastRequest(
            context=data.target_context, horizon=data.horizon, n_samples=data.n_samples
        )
        covariates = data.covariate_contexts if self.send_covariates else None
        seed = int(rng.integers(2**31))
        return self.forecaster.remote_forecast(req, covariates=covariates, params={"seed": seed})


# ---------------------------------------------------------------------------
# conformance


def run_conformance(
    forecaster: RemoteForecaster, n_requests: int = 100, seed: int = 0
) -> list[str]:
    """Exercise ping, randomized forecasts and the error path; returns a list
    of human-readable issues (empty = conformant)."""
    issues: list[str] = []
    rng = np.random.default_rng(seed)

    status = forecaster.health_check()
    if not status.healthy:
        return [f"health check failed: {status.reason}"]

    for k in range(n_requests):
        context = rng.normal(size=int(rng.integers(4, 80))) * float(rng.uniform(0.1, 20))
        horizon = int(rng.integers(1, 24))
        n_samples = int(rng.integers(1, 8))
        req = ForecastRequest(context=context, horizon=horizon, n_samples=n_samples)
        try:
            fc = forecaster.remote_forecast(req, params={"seed": int(rng.integers(2**31))})
        except Exception as exc:  # noqa: BLE001 - conformance report, not control flow
            issues.append(f"request {k}: {type(exc).__name__}: {exc}")
            continue
        if fc.samples.shape != (n_samples, horizon):
            issues.append(f"request {k}: bad shape {fc.samples.shape}")
        lo, hi = fc.samples.min(axis=0), fc.samples.max(axis=0)
        if np.any(fc.point < lo) or np.any(fc.point > hi):
            issues.append(f"request {k}: point leaves the sample envelope")

    # error path: a zero horizon must come back as an error object
    try:
        message = {
            "type": "forecast",
            "id": forecaster._next_id,
            "context": [0.0, 0.0],
            "horizon": 0,
            "n_samples": 1,
        }
        forecaster._next_id += 1
        reply = forecaster._roundtrip(message, want_id=message["id"])
        if reply.get("type") != "error":
            issues.append(f"horizon 0 should produce an error object, got {reply.get('type')!r}")
    except UnavailableError as exc:
        issues.append(f"error path: {exc}")
    except ProtocolError as exc:
        issues.append(f"error path: {exc}")

    # a malformed line must not wedge the endpoint
    try:
        forecaster._ensure_transport().send_line("this is not json")
        reply = forecaster._roundtrip({"type": "ping"}, want_id=None)
        while reply.get("type") == "error":  # an error response to the garbage is fine
            reply = decode_message(forecaster._ensure_transport().recv_line(forecaster.endpoint.timeout))
        if reply.get("type") != "pong":
            issues.append(f"endpoint wedged after malformed line: {reply!r}")
    except (UnavailableError, ProtocolError) as exc:
        issues.append(f"malformed-line recovery: {exc}")

    return issues
