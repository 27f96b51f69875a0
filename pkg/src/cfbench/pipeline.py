"""Pipeline operations shared by the CLI and the HTTP service.

Each run_* function takes a RunConfig (plus command-specific arguments),
writes its artifacts under the config's output directory, and returns a
JSON-serializable result. Artifacts embed the config hash and tool version;
on failure partially written files are removed.
"""

from __future__ import annotations

import csv
import os
from contextlib import contextmanager
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .backtest import (
    BacktestConfig,
    BacktestModel,
    BacktestReport,
    EnsembleModel,
    IdmModel,
    SeriesModel,
    compare,
    evaluate,
    summary_dict,
    trace_rows,
    write_report_csv,
    write_summary_json,
    write_trace_csv,
)
from .config import RunConfig
from .ensemble import TARGET, CovariateSet, build_residual_dataset, fit_gbdt, training_windows
from .errors import ConfigError, EvaluationError
from .forecasting import (
    ArForecaster,
    DriftForecaster,
    Forecaster,
    ForecastRequest,
    HoltForecaster,
    PersistenceForecaster,
)
from .idm import SignConvention, calibrate, load_params, save_params
from .interop import AdapterEndpoint, RemoteForecaster, RemoteModel
from .tokens import TokenForecaster, TokenVocab, fit_ngram, tokenize
from .trajectory import (
    SplitSpec,
    Trajectory,
    derive_dataset,
    emit_csv,
    ingest_csv,
    split_dataset,
    summarize,
)


class ArtifactSet:
    """Tracks files written by one command; removes them all on failure."""

    def __init__(self):
        self.paths: list[str] = []

    def register(self, path) -> str:
        path = str(path)
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.paths.append(path)
        return path

    def discard_all(self):
        for path in self.paths:
            try:
                os.unlink(path)
            except OSError:
                pass


@contextmanager
def artifact_transaction():
    artifacts = ArtifactSet()
    try:
        yield artifacts
    except BaseException:
        artifacts.discard_all()
        raise


def run_meta(cfg: RunConfig) -> dict[str, str]:
    return {"config_hash": cfg.config_hash(), "version": __version__}


# ---------------------------------------------------------------------------
# dataset plumbing


def load_dataset(cfg: RunConfig, derive: bool = True) -> list[Trajectory]:
    if not cfg.dataset_paths:
        raise ConfigError("no dataset paths configured")
    raw: list[Trajectory] = []
    for path in cfg.dataset_paths:
        if not os.path.exists(path):
            raise ConfigError(f"dataset path does not exist: {path}")
        raw.extend(ingest_csv(path, cfg.schema))
    if derive:
        return derive_dataset(raw, (cfg.leader_length, cfg.follower_length))
    return raw


def split_config(cfg: RunConfig) -> SplitSpec:
    return SplitSpec(train_fraction=cfg.train_fraction)


def backtest_config(cfg: RunConfig) -> BacktestConfig:
    return BacktestConfig(
        context_len=cfg.context_len,
        horizon_len=cfg.horizon_len,
        stride=cfg.stride,
        expanding=cfg.expanding,
        n_samples=cfg.n_samples,
    )


# ---------------------------------------------------------------------------
# model roster

SERIES_OF = {TARGET: "a_f", "space_gap": "gap", "speed_diff": "dv", "speed_fav": "v_f"}


def _stateless_forecaster(name: str, options: Mapping) -> Forecaster | None:
    if name == "persistence":
        return PersistenceForecaster()
    if name == "drift":
        return DriftForecaster()
    if name == "holt":
        return HoltForecaster()
    if name == "ar":
        return ArForecaster(order=int(options.get("order", 10)))
    return None


def fit_token_forecaster(
    train: Sequence[Trajectory], options: Mapping, series: str = "a_f", name: str = "ngram"
) -> TokenForecaster:
    vocab = TokenVocab(
        n_bins=int(options.get("n_bins", 256)), clip=float(options.get("clip", 4.0))
    )
    corpus = []
    for traj in train:
        tokens, _ = tokenize(getattr(traj, series), vocab)
        corpus.append(tokens.ids)
    model = fit_ngram(
        corpus,
        vocab,
        order=int(options.get("order", 4)),
        smoothing=float(options.get("smoothing", 0.1)),
    )
    return TokenForecaster(model, name=name)


def _idm_model(cfg: RunConfig, options: Mapping, train: Sequence[Trajectory]) -> IdmModel:
    conv = SignConvention.parse(str(options.get("convention", cfg.convention)))
    params_file = options.get("params_file")
    if params_file:
        result = load_params(params_file)
        return IdmModel(result.params, result.convention, name="idm")
    if not train:
        raise ConfigError("idm model needs a params_file or a training split to calibrate on")
    result = calibrate(
        train,
        conv=conv,
        budget=int(options.get("budget", 8000)),
        n_starts=int(options.get("n_starts", 16)),
        seed=cfg.seed,
    )
    return IdmModel(result.params, conv, name="idm")


def _base_forecasters(
    cfg: RunConfig, base_name: str, train: Sequence[Trajectory]
) -> Forecaster | dict[str, Forecaster]:
    options = cfg.models.get(base_name, {})
    stateless = _stateless_forecaster(base_name, options)
    if stateless is not None:
        return stateless
    if base_name == "ngram":
        # one independently fitted sequence model per series, like one
        # foundation-model call per covariate
        return {
            key: fit_token_forecaster(train, options, series=series, name=f"ngram[{key}]")
            for key, series in SERIES_OF.items()
        }
    raise ConfigError(f"ensemble base {base_name!r} is not a known forecaster")


def build_roster(
    cfg: RunConfig, train: Sequence[Trajectory]
) -> tuple[list[BacktestModel], list[RemoteForecaster]]:
    """Instantiate every configured model; returns (models, remotes-to-close)."""
    models: list[BacktestModel] = []
    remotes: list[RemoteForecaster] = []
    for name, options in cfg.models.items():
        stateless = _stateless_forecaster(name, options)
        if stateless is not None:
            models.append(SeriesModel(stateless, name=name))
            continue
        if name == "ngram":
            models.append(SeriesModel(fit_token_forecaster(train, options), name=name))
            continue
        if name == "idm":
            models.append(_idm_model(cfg, options, train))
            continue
        if "command" in options or "host" in options:
            endpoint = AdapterEndpoint(
                command=options.get("command"),
                host=options.get("host"),
                port=int(options["port"]) if "port" in options else None,
                timeout=float(options.get("timeout", 30.0)),
                label=name,
            )
            remote = RemoteForecaster(endpoint)
            remotes.append(remote)
            models.append(RemoteModel(remote, send_covariates=bool(options.get("covariates", True))))
            continue
        raise ConfigError(f"unknown model {name!r} (and no adapter endpoint given)")

    if cfg.ensemble.get("enabled"):
        base_name = str(cfg.ensemble.get("base", "ngram"))
        bases = _base_forecasters(cfg, base_name, train)
        windows = []
        bt = backtest_config(cfg)
        for traj in train:
            windows.extend(
                training_windows(
                    CovariateSet.from_trajectory(traj), bt.context_len, bt.horizon_len
                )
            )
        data = build_residual_dataset(
            bases, windows, bt.context_len, bt.horizon_len,
            n_samples=cfg.n_samples, seed=cfg.seed,
        )
        residual_model = fit_gbdt(
            data,
            n_trees=int(cfg.ensemble.get("trees", 100)),
            max_depth=int(cfg.ensemble.get("depth", 3)),
            learning_rate=float(cfg.ensemble.get("learning_rate", 0.1)),
            min_leaf=int(cfg.ensemble.get("min_leaf", 20)),
        )
        models.append(EnsembleModel(bases, residual_model, name=f"{base_name}+gbdt"))
    return models, remotes


# ---------------------------------------------------------------------------
# commands


def run_ingest(cfg: RunConfig, out_path: str | None = None) -> dict:
    """Clean the raw dataset and re-emit it in the canonical schema."""
    dataset = load_dataset(cfg)
    with artifact_transaction() as artifacts:
        path = artifacts.register(out_path or os.path.join(cfg.out_dir, "cleaned.csv"))
        meta = run_meta(cfg)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for key, value in meta.items():
                fh.write(f"# {key}={value}\n")
            emit_csv(dataset, fh)
        summary = summarize(dataset)
        return {
            "artifacts": [path],
            "n_trajectories": summary.n_trajectories,
            "n_records": summary.n_records,
            **meta,
        }


def run_stats(cfg: RunConfig, out_path: str | None = None) -> dict:
    dataset = load_dataset(cfg)
    summary = summarize(dataset)
    rows = [
        {"variable": name, "mean": s.mean, "std": s.std, "min": s.min, "max": s.max}
        for name, s in summary.variables.items()
    ]
    result = {
        "variables": rows,
        "n_records": summary.n_records,
        "n_trajectories": summary.n_trajectories,
        "artifacts": [],
        **run_meta(cfg),
    }
    if out_path:
        with artifact_transaction() as artifacts:
            path = artifacts.register(out_path)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                for key, value in run_meta(cfg).items():
                    fh.write(f"# {key}={value}\n")
                writer = csv.writer(fh)
                writer.writerow(["variable", "mean", "std", "min", "max"])
                for row in rows:
                    writer.writerow(
                        [row["variable"]] + [repr(row[k]) for k in ("mean", "std", "min", "max")]
                    )
            result["artifacts"] = [path]
    return result


def run_calibrate(
    cfg: RunConfig,
    out_path: str | None = None,
    budget: int | None = None,
    convention: str | None = None,
) -> dict:
    dataset = load_dataset(cfg)
    train, _ = split_dataset(dataset, split_config(cfg))
    conv = SignConvention.parse(convention or cfg.convention)
    options = cfg.models.get("idm", {})
    result = calibrate(
        train,
        conv=conv,
        budget=int(budget or options.get("budget", 8000)),
        n_starts=int(options.get("n_starts", 16)),
        seed=cfg.seed,
    )
    with artifact_transaction() as artifacts:
        path = artifacts.register(out_path or os.path.join(cfg.out_dir, "idm_params.txt"))
        save_params(path, result)
        with open(path, "a", encoding="utf-8") as fh:
            for key, value in run_meta(cfg).items():
                fh.write(f"# {key}={value}\n")
        return {
            "artifacts": [path],
            "params": result.params.as_dict(),
            "convention": conv.value,
            "train_rmse": result.rmse,
            "n_train_trajectories": len(train),
            **run_meta(cfg),
        }


def run_backtest(cfg: RunConfig) -> dict:
    dataset = load_dataset(cfg)
    train, test = split_dataset(dataset, split_config(cfg))
    bt = backtest_config(cfg)
    models, remotes = build_roster(cfg, train)
    meta = run_meta(cfg)
    reports: list[BacktestReport] = []
    try:
        for model in models:
            reports.append(evaluate(model, test, bt, seed=cfg.seed))
    finally:
        for remote in remotes:
            remote.close()
    with artifact_transaction() as artifacts:
        written = []
        for report in reports:
            path = artifacts.register(
                os.path.join(cfg.out_dir, f"report_{_safe_name(report.model)}.csv")
            )
            write_report_csv(report, path, meta=meta)
            written.append(path)
        summary_path = artifacts.register(os.path.join(cfg.out_dir, "backtest_summary.json"))
        write_summary_json(reports, summary_path, meta=meta)
        written.append(summary_path)
        return {
            "artifacts": written,
            "reports": [summary_dict(r) for r in reports],
            "n_train": len(train),
            "n_test": len(test),
            **meta,
        }


def _safe_name(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def reports_from_summaries(summaries: Sequence[Mapping]) -> list[BacktestReport]:
    reports = []
    for entry in summaries:
        cfg_echo = dict(entry["config"])
        reports.append(
            BacktestReport(
                model=entry["model"],
                window_rmses=[],
                window_keys=[],
                mean_rmse=float(entry["mean_rmse"]),
                std_rmse=float(entry["std_rmse"]),
                n_windows=int(entry["windows"]),
                mae_like=float(entry.get("mae_like", 0.0)),
                config=BacktestConfig(
                    context_len=int(cfg_echo["context_len"]),
                    horizon_len=int(cfg_echo["horizon_len"]),
                    stride=int(cfg_echo["stride"]),
                    expanding=bool(cfg_echo["expanding"]),
                    n_samples=int(cfg_echo["n_samples"]),
                ),
            )
        )
    return reports


def run_compare(
    cfg: RunConfig,
    summary_path: str | None = None,
    reference: str | None = None,
    out_path: str | None = None,
) -> dict:
    import json as _json

    path = summary_path or os.path.join(cfg.out_dir, "backtest_summary.json")
    if not os.path.exists(path):
        raise ConfigError(f"no backtest summary at {path}; run backtest first")
    with open(path, "r", encoding="utf-8") as fh:
        payload = _json.load(fh)
    table = compare(reports_from_summaries(payload["reports"]), reference=reference)
    rows = [
        {
            "model": row.model,
            "mean_rmse": row.mean_rmse,
            "std_rmse": row.std_rmse,
            "windows": row.n_windows,
            "improvement_pct": row.improvement_pct,
        }
        for row in table.rows
    ]
    result = {"rows": rows, "reference": reference, "artifacts": [], **run_meta(cfg)}
    if out_path:
        with artifact_transaction() as artifacts:
            out = artifacts.register(out_path)
            with open(out, "w", encoding="utf-8", newline="") as fh:
                for key, value in run_meta(cfg).items():
                    fh.write(f"# {key}={value}\n")
                writer = csv.writer(fh)
                writer.writerow(["model", "mean_rmse", "std_rmse", "windows", "improvement_pct"])
                for row in rows:
                    writer.writerow(
                        [
                            row["model"],
                            repr(row["mean_rmse"]),
                            repr(row["std_rmse"]),
                            row["windows"],
                            "" if row["improvement_pct"] is None else repr(row["improvement_pct"]),
                        ]
                    )
            result["artifacts"] = [out]
    return result


def run_trace(
    cfg: RunConfig,
    model_name: str,
    traj_id: str | None = None,
    window_index: int = 0,
    out_path: str | None = None,
) -> dict:
    dataset = load_dataset(cfg)
    train, test = split_dataset(dataset, split_config(cfg))
    if model_name not in cfg.models:
        cfg.models = {**cfg.models, model_name: {}}
    sub = RunConfig(**{**cfg.__dict__, "models": {model_name: cfg.models[model_name]}})
    models, remotes = build_roster(sub, train)
    try:
        model = models[0]
        pool = test if traj_id is None else [tr for tr in test + train if tr.id == traj_id]
        if not pool:
            raise EvaluationError(f"trajectory {traj_id!r} not found")
        rows = trace_rows(model, pool[0], backtest_config(cfg), window_index, seed=cfg.seed)
    finally:
        for remote in remotes:
            remote.close()
    with artifact_transaction() as artifacts:
        path = artifacts.register(out_path or os.path.join(cfg.out_dir, "trace.csv"))
        write_trace_csv(
            rows, path, meta={**run_meta(cfg), "model": model.name, "traj": pool[0].id}
        )
        return {
            "artifacts": [path],
            "model": model.name,
            "traj_id": pool[0].id,
            "window_index": window_index,
            "n_rows": len(rows),
            **run_meta(cfg),
        }


# ---------------------------------------------------------------------------
# single forecast (service endpoint / quick checks)


def single_forecast(
    model_name: str,
    context: Sequence[float],
    horizon: int,
    n_samples: int = 20,
    seed: int = 0,
    options: Mapping | None = None,
) -> dict:
    """One ad-hoc forecast with a stateless built-in forecaster."""
    options = options or {}
    forecaster = _stateless_forecaster(model_name, options)
    if forecaster is None:
        raise ConfigError(
            f"{model_name!r} is not a stateless built-in; "
            f"choose one of persistence, drift, holt, ar"
        )
    req = ForecastRequest(np.asarray(context, dtype=float), horizon, n_samples)
    fc = forecaster.forecast(req, np.random.default_rng(seed))
    return {
        "model": model_name,
        "point": [float(x) for x in fc.point],
        "samples": [[float(x) for x in row] for row in fc.samples],
    }
