import json
import subprocess
import sys

import pytest

SERVE = [sys.executable, "-m", "chronos_bridge", "serve", "--checkpoint", "builtin-naive"]


class WireClient:
    """Minimal protocol-v1 peer over a child process (test-side rewrite)."""

    def __init__(self, command=None, timeout=20.0):
        self.proc = subprocess.Popen(
            command or SERVE,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self.timeout = timeout
        self._next_id = 1

    def send_raw(self, text: str) -> None:
        self.proc.stdin.write(text + "\n")
        self.proc.stdin.flush()

    def recv(self) -> dict:
        line = self.proc.stdout.readline()
        if line == "":
            raise RuntimeError("sidecar closed stdout")
        return json.loads(line)

    def request(self, message: dict) -> dict:
        self.send_raw(json.dumps(message))
        return self.recv()

    def ping(self) -> dict:
        return self.request({"type": "ping"})

    def forecast(self, context, horizon, n_samples=5, seed=0, **extra) -> dict:
        msg = {
            "type": "forecast",
            "id": self._next_id,
            "context": list(map(float, context)),
            "horizon": horizon,
            "n_samples": n_samples,
            "params": {"seed": seed},
        }
        msg.update(extra)
        self._next_id += 1
        return self.request(msg)

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@pytest.fixture
def client():
    with WireClient() as c:
        yield c


def has_chronos() -> bool:
    try:
        import chronos  # noqa: F401
        import torch  # noqa: F401
    except ImportError:
        return False
    return True


needs_chronos = pytest.mark.skipif(
    not has_chronos(), reason="chronos/torch stack not installed in this environment"
)
