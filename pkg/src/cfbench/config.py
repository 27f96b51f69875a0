"""Run configuration: TOML file, flag overrides, stable hashing.

A config file has [data], [backtest], [models.<name>], [ensemble] and [run]
sections; command-line flags override file values. The canonical JSON dump
of the resolved config is hashed and embedded into every artifact so outputs
are traceable to the exact settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_CONFIG = "CFBENCH_CONFIG"

DEFAULT_MODELS: dict[str, dict] = {"persistence": {}, "holt": {}, "ar": {}, "ngram": {}}

DEFAULT_ENSEMBLE: dict[str, Any] = {
    "enabled": False,
    "base": "ngram",
    "trees": 100,
    "depth": 3,
    "learning_rate": 0.1,
    "min_leaf": 20,
}


@dataclass
class RunConfig:
    # data
    dataset_paths: list[str] = field(default_factory=list)
    schema: str | dict[str, str] = "canonical"
    train_fraction: float = 0.8
    leader_length: float = 5.0
    follower_length: float = 5.0
    # backtest
    context_len: int = 60
    horizon_len: int = 30
    stride: int | None = None
    expanding: bool = True
    n_samples: int = 20
    # roster
    models: dict[str, dict] = field(default_factory=lambda: dict(DEFAULT_MODELS))
    ensemble: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_ENSEMBLE))
    # run
    seed: int = 0
    out_dir: str = "out"
    convention: str = "treiber2000"

    def canonical_dict(self) -> dict:
        return {
            "data": {
                "paths": list(self.dataset_paths),
                "schema": self.schema,
                "train_fraction": self.train_fraction,
                "leader_length": self.leader_length,
                "follower_length": self.follower_length,
            },
            "backtest": {
                "context": self.context_len,
                "horizon": self.horizon_len,
                "stride": self.stride,
                "expanding": self.expanding,
                "n_samples": self.n_samples,
            },
            "models": self.models,
            "ensemble": self.ensemble,
            # out_dir is deliberately not hashed: it changes where artifacts
            # land, never what they contain
            "run": {
                "seed": self.seed,
                "convention": self.convention,
            },
        }

    def config_hash(self) -> str:
        text = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    cfg = RunConfig()
    unknown = set(data) - {"data", "backtest", "models", "ensemble", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    section = data.get("data", {})
    cfg.dataset_paths = [str(p) for p in section.get("paths", [])]
    cfg.schema = section.get("schema", cfg.schema)
    cfg.train_fraction = float(section.get("train_fraction", cfg.train_fraction))
    cfg.leader_length = float(section.get("leader_length", cfg.leader_length))
    cfg.follower_length = float(section.get("follower_length", cfg.follower_length))
    section = data.get("backtest", {})
    cfg.context_len = int(section.get("context", cfg.context_len))
    cfg.horizon_len = int(section.get("horizon", cfg.horizon_len))
    stride = section.get("stride")
    cfg.stride = None if stride in (None, 0) else int(stride)
    cfg.expanding = bool(section.get("expanding", cfg.expanding))
    cfg.n_samples = int(section.get("n_samples", cfg.n_samples))
    if "models" in data:
        models = data["models"]
        if not isinstance(models, Mapping) or not models:
            raise ConfigError("[models] must be a non-empty table of model sections")
        cfg.models = {str(k): dict(v) for k, v in models.items()}
    if "ensemble" in data:
        cfg.ensemble = dict(DEFAULT_ENSEMBLE)
        cfg.ensemble.update(data["ensemble"])
    section = data.get("run", {})
    cfg.seed = int(section.get("seed", cfg.seed))
    cfg.out_dir = str(section.get("out_dir", cfg.out_dir))
    cfg.convention = str(section.get("convention", cfg.convention))
    return cfg


def load_config(path: str | None) -> RunConfig:
    """Read TOML config; fall back to $CFBENCH_CONFIG, then to defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG)
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from None
    return config_from_dict(data)


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Flag-level overrides; None values mean 'not given'."""
    simple = {
        "train_fraction": "train_fraction",
        "context": "context_len",
        "horizon": "horizon_len",
        "stride": "stride",
        "n_samples": "n_samples",
        "seed": "seed",
        "out_dir": "out_dir",
        "convention": "convention",
        "schema": "schema",
    }
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "data":
            cfg.dataset_paths = list(value)
        elif key == "models":
            names = [m.strip() for m in value.split(",")] if isinstance(value, str) else value
            kept = {}
            for name in names:
                kept[name] = cfg.models.get(name, {})
            cfg.models = kept
        elif key == "ensemble":
            cfg.ensemble["enabled"] = bool(value)
        elif key == "expanding":
            cfg.expanding = bool(value)
        elif key in simple:
            setattr(cfg, simple[key], value)
        else:
            raise ConfigError(f"unknown override {key!r}")
    return cfg
