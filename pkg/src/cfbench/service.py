"""HTTP service wrapping the pipeline for multi-client use.

Run with ``uvicorn cfbench.service:app``. Every endpoint is a thin pydantic
binding over the same pipeline functions the CLI calls; pipeline commands
accept a config payload shaped like the TOML file plus per-command options,
and file paths are resolved on the server's filesystem.
"""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__, pipeline
from .config import config_from_dict
from .errors import CfbenchError, ConfigError, ProtocolError, UnavailableError


class HealthOut(BaseModel):
    status: str
    version: str


class ForecastIn(BaseModel):
    model: str = "persistence"
    context: list[float] = Field(min_length=1)
    horizon: int = Field(ge=1)
    n_samples: int = Field(default=20, ge=1)
    seed: int = 0
    options: dict[str, Any] = Field(default_factory=dict)


class ForecastOut(BaseModel):
    model: str
    point: list[float]
    samples: list[list[float]]


class ConfigPayload(BaseModel):
    """Config sections exactly as in the TOML file."""

    config: dict[str, Any] = Field(default_factory=dict)


class IngestIn(ConfigPayload):
    out: Optional[str] = None


class StatsIn(ConfigPayload):
    out: Optional[str] = None


class VariableRow(BaseModel):
    variable: str
    mean: float
    std: float
    min: float
    max: float


class StatsOut(BaseModel):
    variables: list[VariableRow]
    n_records: int
    n_trajectories: int
    artifacts: list[str]
    config_hash: str
    version: str


class CalibrateIn(ConfigPayload):
    out: Optional[str] = None
    budget: Optional[int] = None
    convention: Optional[str] = None


class CalibrateOut(BaseModel):
    artifacts: list[str]
    params: dict[str, float]
    convention: str
    train_rmse: float
    n_train_trajectories: int
    config_hash: str
    version: str


class BacktestIn(ConfigPayload):
    pass


class ReportSummary(BaseModel):
    model: str
    mean_rmse: float
    std_rmse: float
    windows: int
    mae_like: float
    config: dict[str, Any]


class BacktestOut(BaseModel):
    artifacts: list[str]
    reports: list[ReportSummary]
    n_train: int
    n_test: int
    config_hash: str
    version: str


class CompareIn(ConfigPayload):
    summary: Optional[str] = None
    reference: Optional[str] = None
    out: Optional[str] = None


class CompareRow(BaseModel):
    model: str
    mean_rmse: float
    std_rmse: float
    windows: int
    improvement_pct: Optional[float]


class CompareOut(BaseModel):
    rows: list[CompareRow]
    reference: Optional[str]
    artifacts: list[str]
    config_hash: str
    version: str


class TraceIn(ConfigPayload):
    model: str
    traj: Optional[str] = None
    window: int = 0
    out: Optional[str] = None


def create_app() -> FastAPI:
    app = FastAPI(
        title="cfbench",
        version=__version__,
        description="Car-following forecasting benchmark service",
    )

    def run(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        except (UnavailableError, ProtocolError) as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from None
        except CfbenchError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None

    @app.get("/health", response_model=HealthOut)
    def health():
        return HealthOut(status="ok", version=__version__)

    @app.get("/models")
    def models():
        return {"builtin": ["persistence", "drift", "holt", "ar", "ngram", "idm"]}

    @app.post("/forecast", response_model=ForecastOut)
    def forecast(body: ForecastIn):
        result = run(
            pipeline.single_forecast,
            body.model,
            body.context,
            body.horizon,
            n_samples=body.n_samples,
            seed=body.seed,
            options=body.options,
        )
        return ForecastOut(**result)

    @app.post("/ingest")
    def ingest(body: IngestIn):
        cfg = run(config_from_dict, body.config)
        return run(pipeline.run_ingest, cfg, out_path=body.out)

    @app.post("/stats", response_model=StatsOut)
    def stats(body: StatsIn):
        cfg = run(config_from_dict, body.config)
        return StatsOut(**run(pipeline.run_stats, cfg, out_path=body.out))

    @app.post("/calibrate", response_model=CalibrateOut)
    def calibrate(body: CalibrateIn):
        cfg = run(config_from_dict, body.config)
        return CalibrateOut(
            **run(
                pipeline.run_calibrate,
                cfg,
                out_path=body.out,
                budget=body.budget,
                convention=body.convention,
            )
        )

    @app.post("/backtest", response_model=BacktestOut)
    def backtest(body: BacktestIn):
        cfg = run(config_from_dict, body.config)
        return BacktestOut(**run(pipeline.run_backtest, cfg))

    @app.post("/compare", response_model=CompareOut)
    def compare(body: CompareIn):
        cfg = run(config_from_dict, body.config)
        return CompareOut(
            **run(
                pipeline.run_compare,
                cfg,
                summary_path=body.summary,
                reference=body.reference,
                out_path=body.out,
            )
        )

    @app.post("/trace")
    def trace(body: TraceIn):
        cfg = run(config_from_dict, body.config)
        return run(
            pipeline.run_trace,
            cfg,
            model_name=body.model,
            traj_id=body.traj,
            window_index=body.window,
            out_path=body.out,
        )

    return app


app = create_app()
