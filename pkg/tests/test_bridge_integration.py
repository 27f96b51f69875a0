"""Harness-side integration with the chronos_bridge sidecar, when installed.

The primary suite stays green without the sidecar (these tests skip); with it
installed they run the real conformance suite and the sinusoid backtest
through the wire protocol.
"""

import importlib.util
import sys

import numpy as np
import pytest

from cfbench.backtest import BacktestConfig, evaluate
from cfbench.forecasting import PersistenceForecaster
from cfbench.interop import AdapterEndpoint, RemoteForecaster, RemoteModel, run_conformance

from conftest import make_trajectory

pytestmark = pytest.mark.skipif(
    importlib.util.find_spec("chronos_bridge") is None,
    reason="chronos_bridge sidecar not installed",
)

BRIDGE = [sys.executable, "-m", "chronos_bridge", "serve", "--checkpoint", "builtin-naive"]


def bridge_endpoint(timeout=30.0):
    return AdapterEndpoint(command=BRIDGE, timeout=timeout, label="bridge")


class TestBridgeConformance:
    def test_hundred_randomized_requests(self):
        with RemoteForecaster(bridge_endpoint()) as remote:
            issues = run_conformance(remote, n_requests=100, seed=1)
        assert issues == []


class TestBridgeSinusoidBacktest:
    def test_zero_shot_not_worse_than_persistence(self):
        t = np.arange(420)
        wave = 1.5 + np.sin(2 * np.pi * t / 40.0) + 0.2 * np.sin(2 * np.pi * t / 13.0)
        traj = make_trajectory(
            "sine", v_l=np.full(420, 30.0), v_f=np.full(420, 30.0),
            gap=np.full(420, 40.0), a_f=wave,
        )
        cfg = BacktestConfig(context_len=60, horizon_len=30, n_samples=20)
        with RemoteForecaster(bridge_endpoint()) as remote:
            bridge_report = evaluate(RemoteModel(remote), [traj], cfg, seed=0)
        persistence_report = evaluate(PersistenceForecaster(), [traj], cfg, seed=0)
        print(
            f"[PASS-CHECK] bridge {bridge_report.mean_rmse:.4f} vs "
            f"persistence {persistence_report.mean_rmse:.4f}"
        )
        assert bridge_report.mean_rmse <= persistence_report.mean_rmse
