"""Run configuration: YAML file + preset + command-line overrides, and manifest hashing.

Precedence is command-line flag > config file > preset default. The resolved
configuration is a plain nested dict; its canonical JSON form is hashed with
SHA-256 and the hex digest names the run directory and is embedded in every
checkpoint and CSV a run produces.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .codec import PRESETS, ModelConfig

DEFAULTS: dict[str, Any] = {
    "preset": "tiny",
    "seed": 0,
    "model": {},
    "train": {
        "learning_rate": 1e-4,
        "batch_size": 128,
        "epochs_phase1": 50,
        "epochs_phase2": 50,
        "snr_range_db": [1.0, 13.0],
        "channel": "awgn",
        "metric": "psnr",
    },
    "data": {
        "dataset": "cifar",
        "n_train": None,
        "n_eval": 500,
        "crop_size": 256,
    },
    "eval": {
        "snr_grid": [1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0],
        "snr": 10.0,
        "repetitions": 5,
        "batch_size": 100,
        "channel": "awgn",
        "equalization": "mmse",
        "metric": "psnr",
    },
}

CHANNELS = ("awgn", "rayleigh")
METRICS = ("psnr", "msssim")
EQUALIZERS = ("mmse", "none")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (maps to exit code 2)."""


def _merge(base: dict, override: Mapping, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out and where != "model":
            raise ConfigError(f"unknown key {where + '.' if where else ''}{key}")
        if isinstance(out.get(key), dict) and isinstance(value, Mapping):
            out[key] = _merge(out[key], value, key)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def resolve(file_config: Optional[Mapping] = None, overrides: Optional[Mapping] = None) -> dict:
    """Merge defaults, file values and flag overrides; validate; return the resolved dict.

    ``overrides`` uses the same nested layout as the file; ``None`` leaves are ignored
    so unset flags never mask file values.
    """
    cfg = _merge(DEFAULTS, file_config or {}, "")
    cfg = _merge(cfg, _drop_none(overrides or {}), "")
    _validate(cfg)
    return cfg


def _drop_none(d: Mapping) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, Mapping):
            v = _drop_none(v)
            if v:
                out[k] = v
        elif v is not None:
            out[k] = v
    return out


def _validate(cfg: dict) -> None:
    if cfg["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {cfg['preset']!r}; choose from {sorted(PRESETS)}")
    model_config(cfg)
    tr, ev = cfg["train"], cfg["eval"]
    try:
        tr["learning_rate"] = float(tr["learning_rate"])
        tr["batch_size"] = int(tr["batch_size"])
        tr["snr_range_db"] = [float(v) for v in tr["snr_range_db"]]
        ev["snr_grid"] = [float(v) for v in ev["snr_grid"]]
        ev["snr"] = float(ev["snr"])
        cfg["seed"] = int(cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric value: {exc}") from exc
    for section in (tr, ev):
        if section["channel"] not in CHANNELS:
            raise ConfigError(f"channel must be one of {CHANNELS}, got {section['channel']!r}")
        if section["metric"] not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {section['metric']!r}")
    if ev["equalization"] not in EQUALIZERS:
        raise ConfigError(f"equalization must be one of {EQUALIZERS}")
    if len(tr["snr_range_db"]) != 2 or tr["snr_range_db"][0] > tr["snr_range_db"][1]:
        raise ConfigError(f"train.snr_range_db must be [low, high], got {tr['snr_range_db']}")
    if tr["batch_size"] < 1 or int(ev["repetitions"]) < 1:
        raise ConfigError("batch sizes and repetitions must be positive")


def model_config(cfg: Mapping) -> ModelConfig:
    base = PRESETS[cfg["preset"]].to_dict()
    unknown = set(cfg.get("model", {})) - set(base)
    if unknown:
        raise ConfigError(f"unknown model keys {sorted(unknown)}")
    base.update(cfg.get("model", {}))
    try:
        return ModelConfig(**base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def content_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def model_hash(config: ModelConfig) -> str:
    return content_hash(config.to_dict())


def dump(obj: Any, path) -> None:
    Path(path).write_text(yaml.safe_dump(json.loads(canonical_json(obj)), sort_keys=True))
