"""Reference protocol peer: answers every forecast with persistence paths.

Runnable as ``python -m cfbench.echo_sidecar``; doubles as the executable
documentation of the server side of protocol v1 and as the test peer for the
conformance suite, so the harness never needs a real external model.
"""

from __future__ import annotations

import json
import sys


def handle(message: dict) -> dict:
    kind = message.get("type")
    if kind == "ping":
        return {"type": "pong", "proto": 1}
    if kind == "forecast":
        msg_id = message.get("id")
        context = message.get("context")
        horizon = message.get("horizon")
        n_samples = message.get("n_samples", 1)
        if (
            not isinstance(context, list)
            or not context
            or not all(isinstance(x, (int, float)) for x in context)
        ):
            return _error(msg_id, "bad_request", "context must be a non-empty number array")
        if not isinstance(horizon, int) or horizon < 1:
            return _error(msg_id, "bad_request", "horizon must be a positive integer")
        if not isinstance(n_samples, int) or n_samples < 1:
            return _error(msg_id, "bad_request", "n_samples must be a positive integer")
        last = float(context[-1])
        path = [last] * horizon
        return {"type": "forecast_result", "id": msg_id, "samples": [path] * n_samples}
    return _error(message.get("id"), "bad_request", f"unknown message type {kind!r}")


def _error(msg_id, code: str, message: str) -> dict:
    return {"type": "error", "id": msg_id, "code": code, "message": message}


def main() -> int:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("not an object")
        except ValueError as exc:
            reply = _error(None, "bad_request", f"malformed message: {exc}")
        else:
            reply = handle(message)
        sys.stdout.write(json.dumps(reply, allow_nan=False) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
