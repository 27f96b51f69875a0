"""Probabilistic forecaster contract and classical baselines.

Every forecaster answers a ForecastRequest (context, horizon, sample count)
with a Forecast whose point path is the pathwise median of its sample paths;
deterministic baselines simply emit identical paths. Implemented here:
persistence, drift, Holt's linear trend method with grid-searched smoothing
(the additive-error/additive-trend/no-season configuration), and an
autoregressive least-squares model with residual-bootstrap paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import DomainError, FitError


@dataclass(frozen=True)
class ForecastRequest:
    """C historical steps, a horizon of H future steps, and a path count."""

    context: np.ndarray
    horizon: int
    n_samples: int = 1

    def __post_init__(self):
        object.__setattr__(self, "context", np.asarray(self.context, dtype=float))
        if self.context.ndim != 1 or len(self.context) < 1:
            raise DomainError("context must be a non-empty 1-D series")
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")
        if self.n_samples < 1:
            raise DomainError("n_samples must be >= 1")


@dataclass
class Forecast:
    """n_samples future paths plus their pathwise-median point forecast."""

    samples: np.ndarray  # (n_samples, horizon)
    point: np.ndarray  # (horizon,)

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "Forecast":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        return cls(samples=samples, point=np.median(samples, axis=0))

    @property
    def horizon(self) -> int:
        return self.samples.shape[1]

    def shifted(self, offset: np.ndarray) -> "Forecast":
        """Same forecast with a per-step additive correction applied."""
        offset = np.asarray(offset, dtype=float)
        return Forecast(samples=self.samples + offset, point=self.point + offset)


@runtime_checkable
class Forecaster(Protocol):
    name: str

    def forecast(self, req: ForecastRequest, rng: np.random.Generator) -> Forecast:
        ...


def _repeat(path: np.ndarray, n: int) -> np.ndarray:
    return np.tile(np.asarray(path, dtype=float), (n, 1))


class PersistenceForecaster:
    """Naive baseline: repeat the last observed value."""

    name = "persistence"

    def forecast(self, req: ForecastRequest, rng: np.random.Generator | None = None) -> Forecast:
        path = np.full(req.horizon, req.context[-1])
        return Forecast.from_samples(_repeat(path, req.n_samples))


class DriftForecaster:
    """Continue the average slope between the first and last context values."""

    name = "drift"

    def forecast(self, req: ForecastRequest, rng: np.random.Generator | None = None) -> Forecast:
        ctx = req.context
        if len(ctx) < 2:
            raise DomainError("drift needs at least 2 context values")
        slope = (ctx[-1] - ctx[0]) / (len(ctx) - 1)
        path = ctx[-1] + slope * np.arange(1, req.horizon + 1)
        return Forecast.from_samples(_repeat(path, req.n_samples))


# alpha/beta candidates: 0.05, 0.10, ..., 0.95
HOLT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


def _holt_run(ctx: np.ndarray, alpha: float, beta: float):
    """One pass of Holt's linear method; returns final level/trend and the
    one-step in-sample errors from the third observation on (the first two
    initialize level and trend)."""
    level = ctx[0]
    trend = ctx[1] - ctx[0]
    errors = []
    for t in range(1, len(ctx)):
        pred = level + trend
        if t >= 2:
            errors.append(ctx[t] - pred)
        prev_level = level
        level = alpha * ctx[t] + (1.0 - alpha) * (level + trend)
        trend = beta * (level - prev_level) + (1.0 - beta) * trend
    return level, trend, np.asarray(errors)


class HoltForecaster:
    """Holt's linear trend method with (alpha, beta) picked by in-sample SSE.

    The grid search is exhaustive and deterministic (first minimum wins,
    alpha-major order). Sample paths add Gaussian noise with the in-sample
    residual standard deviation so the probabilistic interface is honest.
    """

    name = "holt"

    def __init__(self, grid=HOLT_GRID):
        self.grid = tuple(grid)

    def fit(self, ctx: np.ndarray):
        best = None
        for alpha in self.grid:
            for beta in self.grid:
                level, trend, errors = _holt_run(ctx, alpha, beta)
                sse = float(np.dot(errors, errors))
                if best is None or sse < best[0]:
                    best = (sse, alpha, beta, level, trend, errors)
        _, alpha, beta, level, trend, errors = best
        sigma = float(np.std(errors)) if len(errors) else 0.0
        return alpha, beta, level, trend, sigma

    def forecast(self, req: ForecastRequest, rng: np.random.Generator | None = None) -> Forecast:
        ctx = req.context
        if len(ctx) < 3:
            raise DomainError("holt needs at least 3 context values")
        _, _, level, trend, sigma = self.fit(ctx)
        center = level + trend * np.arange(1, req.horizon + 1)
        if sigma > 0.0 and rng is not None:
            noise = rng.standard_normal((req.n_samples, req.horizon)) * sigma
        else:
            noise = 0.0
        return Forecast.from_samples(center + noise)


class ArForecaster:
    """Autoregressive least squares with intercept; bootstrap sample paths.

    Coefficients come from a minimum-norm least-squares solve over the lag
    matrix (a constant context is rank-deficient but still forecasts the
    constant), point paths from noise-free recursion inside each sampled
    path, and spread from residuals drawn with replacement.
    """

    name = "ar"

    def __init__(self, order: int = 10):
        if order < 1:
            raise DomainError("AR order must be >= 1")
        self.order = order

    def fit(self, ctx: np.ndarray):
        p = self.order
        if len(ctx) < 2 * p + 1:
            raise DomainError(f"AR({p}) needs at least {2 * p + 1} context values")
        rows = len(ctx) - p
        design = np.empty((rows, p + 1))
        design[:, 0] = 1.0
        for j in range(1, p + 1):
            design[:, j] = ctx[p - j : len(ctx) - j]
        target = ctx[p:]
        try:
            coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"AR({p}) solve failed ({exc}); try a lower order") from None
        residuals = target - design @ coef
        return coef, residuals

    def forecast(self, req: ForecastRequest, rng: np.random.Generator | None = None) -> Forecast:
        ctx = req.context
        coef, residuals = self.fit(ctx)
        p = self.order
        paths = np.empty((req.n_samples, req.horizon))
        draw_noise = rng is not None and len(residuals) > 0
        for s in range(req.n_samples):
            history = list(ctx[-p:])
            shocks = (
                rng.choice(residuals, size=req.horizon, replace=True)
                if draw_noise
                else np.zeros(req.horizon)
            )
            for h in range(req.horizon):
                lags = history[::-1][:p]
                value = coef[0] + float(np.dot(coef[1:], lags)) + float(shocks[h])
                paths[s, h] = value
                history.append(value)
        return Forecast.from_samples(paths)


BUILTIN_FORECASTERS = {
    "persistence": PersistenceForecaster,
    "drift": DriftForecaster,
    "holt": HoltForecaster,
    "ar": ArForecaster,
}
