"""Multi-window backtesting over cleaned trajectories.

Each trajectory is carved into consecutive context/horizon windows (the
horizon advances by the stride, the context either expands to include the
revealed truth or slides). Per window the model's point forecast is scored
by in-window RMSE; a report aggregates those into mean and standard
deviation across windows. The literal pooled mean absolute error is also
reported (``mae_like``) for comparison with the flat error metric some
write-ups quote.

Models see a WindowData bundle. Sequence forecasters read only the target
context (and optionally covariate contexts); the car-following predictor is
a one-step model by definition and instead reads the observed kinematic
state (gap, speeds) at every horizon step.
"""

from __future__ import annotations

import csv
import json
import warnings
import zlib
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .ensemble import (
    COVARIATES,
    TARGET,
    CovariateSet,
    ensemble_forecast,
    forecast_covariates,
    resolve_bases,
)
from .errors import ContractError, EvaluationError
from .forecasting import Forecast, ForecastRequest, Forecaster
from .gbdt import GbdtModel
from .idm import IdmParams, SignConvention, acceleration
from .trajectory import Trajectory


@dataclass(frozen=True)
class BacktestConfig:
    context_len: int = 60
    horizon_len: int = 30
    stride: int | None = None  # defaults to horizon_len
    expanding: bool = True
    n_samples: int = 20

    def __post_init__(self):
        if self.context_len < 1 or self.horizon_len < 1:
            raise ContractError("context and horizon must be >= 1")
        if self.stride is not None and self.stride < 1:
            raise ContractError("stride must be >= 1")
        if self.n_samples < 1:
            raise ContractError("n_samples must be >= 1")

    @property
    def effective_stride(self) -> int:
        return self.horizon_len if self.stride is None else self.stride


@dataclass(frozen=True)
class Window:
    traj_id: str
    index: int
    ctx_start: int
    ctx_end: int
    hzn_start: int
    hzn_end: int


def make_windows(traj: Trajectory, cfg: BacktestConfig) -> list[Window]:
    """Consecutive windows; the first context is [0, C) and each horizon
    immediately follows its context. Returns [] (with a warning) when the
    trajectory is too short for even one window."""
    C, H, stride = cfg.context_len, cfg.horizon_len, cfg.effective_stride
    n = len(traj)
    if n < C + H:
        warnings.warn(f"trajectory {traj.id}: too short to backtest ({n} < {C + H})")
        return []
    windows = []
    k = 0
    while C + k * stride + H <= n:
        hzn_start = C + k * stride
        ctx_start = 0 if cfg.expanding else k * stride
        windows.append(
            Window(
                traj_id=traj.id,
                index=k,
                ctx_start=ctx_start,
                ctx_end=hzn_start,
                hzn_start=hzn_start,
                hzn_end=hzn_start + H,
            )
        )
        k += 1
    return windows


def window_rmse(truth, point) -> float:
    """Root of the mean squared per-step error inside one window."""
    truth = np.asarray(truth, dtype=float)
    point = np.asarray(point, dtype=float)
    if truth.shape != point.shape:
        raise ContractError(f"length mismatch: truth {truth.shape} vs point {point.shape}")
    err = truth - point
    return float(np.sqrt(np.mean(err * err)))


@dataclass
class WindowData:
    """Everything a model may legitimately use for one window."""

    target_context: np.ndarray
    covariate_contexts: dict[str, np.ndarray]
    horizon_states: dict[str, np.ndarray]  # observed v_f / v_l / gap / a_f over the horizon
    horizon: int
    n_samples: int
    window: Window


class BacktestModel(ABC):
    name: str

    @abstractmethod
    def forecast_window(self, data: WindowData, rng: np.random.Generator) -> Forecast:
        ...


class SeriesModel(BacktestModel):
    """Univariate forecaster applied to the target history."""

    def __init__(self, forecaster: Forecaster, name: str | None = None):
        self.forecaster = forecaster
        self.name = name or forecaster.name

    def forecast_window(self, data: WindowData, rng: np.random.Generator) -> Forecast:
        req = ForecastRequest(
            context=data.target_context, horizon=data.horizon, n_samples=data.n_samples
        )
        return self.forecaster.forecast(req, rng)


class IdmModel(BacktestModel):
    """One-step car-following predictor driven by observed horizon states."""

    def __init__(
        self,
        params: IdmParams,
        conv: SignConvention = SignConvention.TREIBER_2000,
        name: str = "idm",
    ):
        self.params = params
        self.conv = conv
        self.name = name

    def forecast_window(self, data: WindowData, rng: np.random.Generator) -> Forecast:
        states = data.horizon_states
        point = acceleration(
            self.params, states["v_f"], states["v_l"], states["gap"], self.conv
        )
        return Forecast.from_samples(np.tile(point, (data.n_samples, 1)))


class EnsembleModel(BacktestModel):
    """Base forecaster plus boosted-tree residual correction (needs covariates)."""

    def __init__(
        self,
        base: Forecaster | Mapping[str, Forecaster],
        residual_model: GbdtModel,
        name: str | None = None,
    ):
        self.bases = resolve_bases(base)
        self.residual_model = residual_model
        self.name = name or f"{self.bases[TARGET].name}+gbdt"

    def forecast_window(self, data: WindowData, rng: np.random.Generator) -> Forecast:
        missing = [c for c in COVARIATES if c not in data.covariate_contexts]
        if missing:
            raise ContractError(f"window lacks covariate contexts: {missing}")
        ctx = data.covariate_contexts
        C = len(data.target_context)
        cov = CovariateSet(
            space_gap=ctx["space_gap"],
            speed_diff=ctx["speed_diff"],
            speed_fav=ctx["speed_fav"],
            target=data.target_context,
        )
        seed = int(rng.integers(2**31))
        cov_fc = forecast_covariates(
            self.bases, cov, C, data.horizon, n_samples=data.n_samples, seed=seed
        )
        req = ForecastRequest(
            context=data.target_context, horizon=data.horizon, n_samples=data.n_samples
        )
        base_fc = self.bases[TARGET].forecast(req, rng)
        return ensemble_forecast(base_fc, self.residual_model, cov_fc, data.horizon)


@dataclass
class BacktestReport:
    model: str
    window_rmses: list[float]
    window_keys: list[tuple[str, int]]  # (traj_id, window index)
    mean_rmse: float
    std_rmse: float
    n_windows: int
    mae_like: float
    config: BacktestConfig

    @classmethod
    def from_windows(
        cls,
        model: str,
        keyed_rmses: list[tuple[tuple[str, int], float]],
        mae_like: float,
        config: BacktestConfig,
    ) -> "BacktestReport":
        keyed_rmses = sorted(keyed_rmses, key=lambda kv: kv[0])
        rmses = [v for _, v in keyed_rmses]
        keys = [k for k, _ in keyed_rmses]
        arr = np.asarray(rmses)
        return cls(
            model=model,
            window_rmses=rmses,
            window_keys=keys,
            mean_rmse=float(arr.mean()),
            std_rmse=float(arr.std()),
            n_windows=len(rmses),
            mae_like=mae_like,
            config=config,
        )


def _window_rng(seed: int, traj_id: str, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, zlib.crc32(traj_id.encode()), index])
    )


def _window_data(traj: Trajectory, w: Window, cfg: BacktestConfig) -> WindowData:
    return WindowData(
        target_context=traj.a_f[w.ctx_start : w.ctx_end],
        covariate_contexts={
            "space_gap": traj.gap[w.ctx_start : w.ctx_end],
            "speed_diff": traj.dv[w.ctx_start : w.ctx_end],
            "speed_fav": traj.v_f[w.ctx_start : w.ctx_end],
        },
        horizon_states={
            "v_f": traj.v_f[w.hzn_start : w.hzn_end],
            "v_l": traj.v_l[w.hzn_start : w.hzn_end],
            "gap": traj.gap[w.hzn_start : w.hzn_end],
            "a_f": traj.a_f[w.hzn_start : w.hzn_end],
        },
        horizon=cfg.horizon_len,
        n_samples=cfg.n_samples,
        window=w,
    )


def evaluate(
    model: BacktestModel | Forecaster,
    test: Sequence[Trajectory],
    cfg: BacktestConfig = BacktestConfig(),
    seed: int = 0,
) -> BacktestReport:
    """Score one model over every window of every test trajectory.

    Deterministic given the seed, and independent of trajectory order:
    each window draws from its own (seed, trajectory, window) stream.
    """
    if not test:
        raise EvaluationError("empty test set")
    if not isinstance(model, BacktestModel):
        model = SeriesModel(model)
    keyed = []
    abs_sum, abs_n = 0.0, 0
    for traj in test:
        for w in make_windows(traj, cfg):
            data = _window_data(traj, w, cfg)
            rng = _window_rng(seed, traj.id, w.index)
            fc = model.forecast_window(data, rng)
            truth = traj.a_f[w.hzn_start : w.hzn_end]
            if fc.point.shape != truth.shape:
                raise ContractError(
                    f"model {model.name}: forecast horizon {fc.point.shape} vs {truth.shape}"
                )
            keyed.append(((traj.id, w.index), window_rmse(truth, fc.point)))
            abs_sum += float(np.sum(np.abs(truth - fc.point)))
            abs_n += len(truth)
    if not keyed:
        raise EvaluationError("no trajectory long enough for a single window")
    return BacktestReport.from_windows(
        model=model.name, keyed_rmses=keyed, mae_like=abs_sum / abs_n, config=cfg
    )


@dataclass
class ComparisonRow:
    model: str
    mean_rmse: float
    std_rmse: float
    n_windows: int
    improvement_pct: float | None


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]
    reference: str | None


def compare(reports: Sequence[BacktestReport], reference: str | None = None) -> ComparisonTable:
    """Ascending mean-RMSE ranking, ties broken by model name, with percent
    improvement relative to a named reference report."""
    if not reports:
        raise ContractError("nothing to compare")
    configs = {r.config for r in reports}
    if len(configs) != 1:
        raise ContractError("reports come from different backtest configs")
    ref_mean = None
    if reference is not None:
        by_name = {r.model: r for r in reports}
        if reference not in by_name:
            raise ContractError(f"reference model {reference!r} not among the reports")
        ref_mean = by_name[reference].mean_rmse
    rows = []
    for r in sorted(reports, key=lambda r: (r.mean_rmse, r.model)):
        improvement = None
        if ref_mean is not None and ref_mean > 0:
            improvement = 100.0 * (ref_mean - r.mean_rmse) / ref_mean
        rows.append(
            ComparisonRow(
                model=r.model,
                mean_rmse=r.mean_rmse,
                std_rmse=r.std_rmse,
                n_windows=r.n_windows,
                improvement_pct=improvement,
            )
        )
    return ComparisonTable(rows=rows, reference=reference)


# ---------------------------------------------------------------------------
# report / trace emission


def write_report_csv(report: BacktestReport, path, meta: Mapping[str, str] | None = None) -> None:
    """Per-window rows: model, window_id, traj_id, rmse."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["model", "window_id", "traj_id", "rmse"])
        for (traj_id, index), rmse in zip(report.window_keys, report.window_rmses):
            writer.writerow([report.model, index, traj_id, repr(rmse)])


def summary_dict(report: BacktestReport) -> dict:
    cfg = asdict(report.config)
    cfg["stride"] = report.config.effective_stride
    return {
        "model": report.model,
        "mean_rmse": report.mean_rmse,
        "std_rmse": report.std_rmse,
        "windows": report.n_windows,
        "mae_like": report.mae_like,
        "config": cfg,
    }


def write_summary_json(
    reports: Sequence[BacktestReport], path, meta: Mapping[str, str] | None = None
) -> None:
    payload = {"reports": [summary_dict(r) for r in reports]}
    payload.update(meta or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def trace_rows(
    model: BacktestModel | Forecaster,
    traj: Trajectory,
    cfg: BacktestConfig,
    window_index: int = 0,
    seed: int = 0,
) -> list[tuple[float, str, float]]:
    """(t, flag, value) rows for one window: context, then truth and forecast
    over the horizon — the data behind a forecast-vs-actual plot."""
    if not isinstance(model, BacktestModel):
        model = SeriesModel(model)
    windows = make_windows(traj, cfg)
    if window_index >= len(windows):
        raise EvaluationError(
            f"trajectory {traj.id} has {len(windows)} windows, asked for {window_index}"
        )
    w = windows[window_index]
    data = _window_data(traj, w, cfg)
    fc = model.forecast_window(data, _window_rng(seed, traj.id, w.index))
    rows = []
    for i in range(w.ctx_start, w.ctx_end):
        rows.append((float(traj.t[i]), "context", float(traj.a_f[i])))
    for h, i in enumerate(range(w.hzn_start, w.hzn_end)):
        rows.append((float(traj.t[i]), "truth", float(traj.a_f[i])))
        rows.append((float(traj.t[i]), "forecast", float(fc.point[h])))
    return rows


def write_trace_csv(rows, path, meta: Mapping[str, str] | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "flag", "value"])
        for t, flag, value in rows:
            writer.writerow([repr(t), flag, repr(value)])
