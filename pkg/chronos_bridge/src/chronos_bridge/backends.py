"""Forecast backends: the pretrained checkpoint and a local naive stand-in.

Every backend answers ``predict(context, horizon, n_samples, seed)`` with a
(n_samples, horizon) array. The Chronos backend imports torch lazily so the
sidecar starts instantly for the builtin backend and fails *before serving*
with a clear message when the model stack is missing.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

CHECKPOINT_SIZES = ("small", "base", "large")
BUILTIN = "builtin-naive"


class StartupError(RuntimeError):
    """Checkpoint cannot be loaded; raised before the serve loop starts."""


@dataclass
class BridgeConfig:
    checkpoint: str = BUILTIN  # small | base | large | builtin-naive | local path
    device: str = "cpu"
    default_n_samples: int = 20
    max_context: int = 512

    def __post_init__(self):
        if self.max_context < 1:
            raise StartupError("max_context must be positive")
        if self.default_n_samples < 1:
            raise StartupError("default_n_samples must be positive")


class BuiltinNaiveBackend:
    """Seasonal-naive sampler with bootstrapped seasonal-difference noise.

    Detects the dominant period by autocorrelation, continues the last cycle
    and perturbs each path with resampled seasonal differences. No training,
    no model weights; exists so the protocol and the harness integration can
    be exercised end-to-end anywhere.
    """

    name = BUILTIN

    def __init__(self, config: BridgeConfig):
        self.config = config

    @staticmethod
    def _dominant_period(x: np.ndarray) -> int:
        n = len(x)
        if n < 6:
            return 1
        centered = x - x.mean()
        denom = float(np.dot(centered, centered))
        if denom <= 1e-12:
            return 1
        max_lag = min(n - 2, n // 2)
        acf = np.array(
            [np.dot(centered[lag:], centered[:-lag]) / denom for lag in range(1, max_lag + 1)]
        )
        # a cycle shows as a local peak of the autocorrelation; the raw
        # maximum is useless since smooth series peak at lag 1
        best_lag, best_r = 1, -np.inf
        for i in range(1, len(acf) - 1):
            if acf[i] >= acf[i - 1] and acf[i] >= acf[i + 1] and acf[i] > best_r:
                best_lag, best_r = i + 1, float(acf[i])
        return best_lag if best_r > 0.25 else 1

    def predict(self, context: np.ndarray, horizon: int, n_samples: int, seed: int) -> np.ndarray:
        x = np.asarray(context, dtype=float)
        if len(x) > self.config.max_context:
            x = x[-self.config.max_context :]
        period = self._dominant_period(x)
        pattern = x[-period:]
        base = pattern[np.arange(horizon) % period]
        diffs = x[period:] - x[:-period]
        rng = np.random.default_rng(seed)
        paths = np.tile(base, (n_samples, 1))
        if len(diffs) and float(np.max(np.abs(diffs))) > 0.0:
            noise = rng.choice(diffs, size=(n_samples, horizon), replace=True)
            damp = np.sqrt((np.arange(horizon) + 1.0) / period).clip(max=3.0)
            paths = paths + 0.5 * noise * damp
        return paths


class ChronosBackend:
    """Zero-shot sampling from a pretrained checkpoint (no gradient updates)."""

    def __init__(self, config: BridgeConfig):
        self.config = config
        self.name = config.checkpoint
        try:
            import torch
            from chronos import ChronosPipeline
        except ImportError as exc:
            raise StartupError(
                f"checkpoint {config.checkpoint!r} needs the chronos/torch stack: {exc}"
            ) from None
        self._torch = torch
        ref = (
            f"amazon/chronos-t5-{config.checkpoint}"
            if config.checkpoint in CHECKPOINT_SIZES
            else config.checkpoint
        )
        try:
            self.pipeline = ChronosPipeline.from_pretrained(ref, device_map=config.device)
        except Exception as exc:
            raise StartupError(f"cannot load checkpoint {ref!r}: {exc}") from None

    def predict(self, context: np.ndarray, horizon: int, n_samples: int, seed: int) -> np.ndarray:
        torch = self._torch
        x = np.asarray(context, dtype=np.float32)
        if len(x) > self.config.max_context:
            x = x[-self.config.max_context :]
        torch.manual_seed(seed)
        with torch.no_grad():
            samples = self.pipeline.predict(
                torch.from_numpy(x).unsqueeze(0),
                prediction_length=int(horizon),
                num_samples=int(n_samples),
            )
        return samples.squeeze(0).cpu().numpy().astype(float)


def load_backend(config: BridgeConfig):
    if config.checkpoint == BUILTIN:
        return BuiltinNaiveBackend(config)
    backend = ChronosBackend(config)
    print(f"loaded checkpoint {config.checkpoint} on {config.device}", file=sys.stderr)
    return backend
