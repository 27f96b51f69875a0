"""Covariate residual correction: forecast the gap, relative speed and
follower speed alongside the target acceleration, learn a boosted-tree map
from the covariate forecasts to the base forecaster's residuals, and add the
predicted residual back onto the base forecast.

Residual features never touch true future covariate values; each feature row
is (gap_hat, dv_hat, v_f_hat, step) built purely from forecasts issued at
the window origin.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import gbdt as _gbdt
from .errors import ContractError, DataError
from .forecasting import Forecast, ForecastRequest, Forecaster
from .gbdt import GbdtModel
from .trajectory import Trajectory

COVARIATES = ("space_gap", "speed_diff", "speed_fav")
TARGET = "target"
N_FEATURES = len(COVARIATES) + 1  # three covariate forecasts plus the step index


@dataclass
class CovariateSet:
    """Aligned gap / speed-difference / follower-speed / acceleration series."""

    space_gap: np.ndarray
    speed_diff: np.ndarray
    speed_fav: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        lengths = {len(self.space_gap), len(self.speed_diff), len(self.speed_fav), len(self.target)}
        if len(lengths) != 1:
            raise DataError("covariate series must share one length")

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "CovariateSet":
        if not traj.is_derived:
            raise DataError(f"trajectory {traj.id}: derive kinematics first")
        return cls(
            space_gap=traj.gap, speed_diff=traj.dv, speed_fav=traj.v_f, target=traj.a_f
        )

    def __len__(self) -> int:
        return len(self.target)

    def series(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def slice(self, start: int, stop: int) -> "CovariateSet":
        return CovariateSet(
            space_gap=self.space_gap[start:stop],
            speed_diff=self.speed_diff[start:stop],
            speed_fav=self.speed_fav[start:stop],
            target=self.target[start:stop],
        )


def _series_rng(seed: int, name: str, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode()), salt]))


def resolve_bases(base: Forecaster | Mapping[str, Forecaster]) -> dict[str, Forecaster]:
    """One independent forecaster per series; a single instance is shared."""
    if isinstance(base, Mapping):
        missing = [k for k in (TARGET, *COVARIATES) if k not in base]
        if missing:
            raise ContractError(f"base forecaster mapping lacks series: {missing}")
        return dict(base)
    return {name: base for name in (TARGET, *COVARIATES)}


def forecast_covariates(
    base: Forecaster | Mapping[str, Forecaster],
    cov: CovariateSet,
    context_len: int,
    horizon: int,
    n_samples: int = 1,
    seed: int = 0,
    salt: int = 0,
) -> dict[str, Forecast]:
    """Three independent univariate forecasts off each covariate's own history."""
    if len(cov) < context_len:
        raise DataError(f"covariate window shorter than context ({len(cov)} < {context_len})")
    bases = resolve_bases(base)
    out = {}
    for name in COVARIATES:
        req = ForecastRequest(
            context=cov.series(name)[:context_len], horizon=horizon, n_samples=n_samples
        )
        out[name] = bases[name].forecast(req, _series_rng(seed, name, salt))
    return out


def features_from_points(points: Mapping[str, np.ndarray], horizon: int) -> np.ndarray:
    """(H, 4) rows of covariate point forecasts plus the 0-based step index."""
    cols = [np.asarray(points[name], dtype=float) for name in COVARIATES]
    for col in cols:
        if len(col) != horizon:
            raise ContractError("covariate forecast length does not match the horizon")
    return np.column_stack(cols + [np.arange(horizon, dtype=float)])


@dataclass
class ResidualDataset:
    """Feature rows and residual labels collected over training windows."""

    features: np.ndarray  # (N, 4)
    labels: np.ndarray  # (N,)
    n_skipped: int = 0

    def __len__(self) -> int:
        return len(self.labels)


def build_residual_dataset(
    base: Forecaster | Mapping[str, Forecaster],
    windows: Sequence[CovariateSet],
    context_len: int,
    horizon: int,
    n_samples: int = 1,
    seed: int = 0,
) -> ResidualDataset:
    """Per window and step: features from covariate forecasts, label =
    true acceleration minus the base point forecast. Windows shorter than
    context + horizon are skipped and counted."""
    bases = resolve_bases(base)
    feature_rows = []
    label_rows = []
    n_skipped = 0
    for w, window in enumerate(windows):
        if len(window) < context_len + horizon:
            n_skipped += 1
            continue
        cov_fc = forecast_covariates(
            bases, window, context_len, horizon, n_samples=n_samples, seed=seed, salt=w
        )
        req = ForecastRequest(
            context=window.target[:context_len], horizon=horizon, n_samples=n_samples
        )
        base_fc = bases[TARGET].forecast(req, _series_rng(seed, TARGET, w))
        truth = window.target[context_len : context_len + horizon]
        feature_rows.append(
            features_from_points({k: fc.point for k, fc in cov_fc.items()}, horizon)
        )
        label_rows.append(truth - base_fc.point)
    if not feature_rows:
        return ResidualDataset(
            features=np.empty((0, N_FEATURES)), labels=np.empty(0), n_skipped=n_skipped
        )
    return ResidualDataset(
        features=np.vstack(feature_rows),
        labels=np.concatenate(label_rows),
        n_skipped=n_skipped,
    )


def fit_gbdt(
    data: ResidualDataset,
    n_trees: int = 100,
    max_depth: int = 3,
    learning_rate: float = 0.1,
    min_leaf: int = 20,
) -> GbdtModel:
    """Boosted-tree residual regressor on the collected dataset."""
    if len(data) == 0:
        raise DataError("residual dataset is empty")
    return _gbdt.fit_gbdt(
        data.features,
        data.labels,
        n_trees=n_trees,
        max_depth=max_depth,
        learning_rate=learning_rate,
        min_leaf=min_leaf,
    )


def ensemble_forecast(
    base_forecast: Forecast,
    model: GbdtModel,
    cov_forecasts: Mapping[str, Forecast],
    horizon: int,
) -> Forecast:
    """Corrected forecast: base plus the predicted residual, applied to the
    point path and every sample path alike."""
    if model.n_features != N_FEATURES:
        raise ContractError(
            f"residual model expects {model.n_features} features, harness provides {N_FEATURES}"
        )
    features = features_from_points(
        {k: fc.point for k, fc in cov_forecasts.items()}, horizon
    )
    correction = model.predict(features)
    return base_forecast.shifted(correction)


def training_windows(
    cov: CovariateSet, context_len: int, horizon: int, stride: int | None = None
) -> list[CovariateSet]:
    """Contiguous (context + horizon)-length windows, stride defaulting to H."""
    stride = horizon if stride is None else stride
    size = context_len + horizon
    return [cov.slice(s, s + size) for s in range(0, len(cov) - size + 1, stride)]
