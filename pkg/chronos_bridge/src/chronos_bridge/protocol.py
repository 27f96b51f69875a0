"""Server side of protocol v1: newline-delimited JSON, one reply per request.

Nothing but protocol lines ever goes to the served stream (logs go to
stderr). A malformed line earns an error reply with code ``bad_request`` and
the connection stays open. NaN/Inf never travel on the wire.
"""

from __future__ import annotations

import json
import math
import socket
import sys

import numpy as np

from . import PROTO_VERSION


def error_reply(msg_id, code: str, message: str) -> dict:
    return {"type": "error", "id": msg_id, "code": code, "message": message}


def handle_message(message: dict, backend, default_n_samples: int) -> dict:
    kind = message.get("type")
    if kind == "ping":
        return {"type": "pong", "proto": PROTO_VERSION}
    if kind != "forecast":
        return error_reply(message.get("id"), "bad_request", f"unknown message type {kind!r}")

    msg_id = message.get("id")
    context = message.get("context")
    horizon = message.get("horizon")
    n_samples = message.get("n_samples", default_n_samples)
    params = message.get("params") or {}
    if (
        not isinstance(context, list)
        or not context
        or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in context)
    ):
        return error_reply(msg_id, "bad_request", "context must be a non-empty finite number array")
    if not isinstance(horizon, int) or isinstance(horizon, bool) or horizon < 1:
        return error_reply(msg_id, "bad_request", "horizon must be a positive integer")
    if not isinstance(n_samples, int) or isinstance(n_samples, bool) or n_samples < 1:
        return error_reply(msg_id, "bad_request", "n_samples must be a positive integer")
    seed = params.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        return error_reply(msg_id, "bad_request", "params.seed must be an integer")

    try:
        samples = backend.predict(np.asarray(context, dtype=float), horizon, n_samples, seed)
    except Exception as exc:  # keep serving; surface the failure to the peer
        return error_reply(msg_id, "model_error", f"{type(exc).__name__}: {exc}")
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (n_samples, horizon) or not np.isfinite(samples).all():
        return error_reply(msg_id, "model_error", "backend produced an invalid sample array")
    return {
        "type": "forecast_result",
        "id": msg_id,
        "samples": [[float(v) for v in row] for row in samples],
    }


def serve_stream(lines, write_line, backend, default_n_samples: int) -> None:
    """One request per line until EOF; every reply flushed immediately."""
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("not a JSON object")
        except ValueError as exc:
            reply = error_reply(None, "bad_request", f"malformed message: {exc}")
        else:
            reply = handle_message(message, backend, default_n_samples)
        write_line(json.dumps(reply, allow_nan=False))


def serve_stdio(backend, default_n_samples: int) -> None:
    def write_line(text: str) -> None:
        sys.stdout.write(text + "\n")
        sys.stdout.flush()

    serve_stream(sys.stdin, write_line, backend, default_n_samples)


def serve_tcp(backend, default_n_samples: int, host: str, port: int) -> None:
    """Accept one connection at a time (strict request/response alternation)."""
    with socket.create_server((host, port)) as server:
        print(f"listening on {host}:{server.getsockname()[1]}", file=sys.stderr)
        while True:
            conn, peer = server.accept()
            print(f"connection from {peer[0]}:{peer[1]}", file=sys.stderr)
            with conn, conn.makefile("r", encoding="utf-8", newline="\n") as reader:
                def write_line(text: str) -> None:
                    conn.sendall((text + "\n").encode("utf-8"))

                try:
                    serve_stream(reader, write_line, backend, default_n_samples)
                except (BrokenPipeError, ConnectionResetError):
                    pass
