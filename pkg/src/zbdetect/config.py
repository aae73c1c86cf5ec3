"""Run configuration: defaults, JSON loading, CLI overrides and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from importlib import resources
from pathlib import Path
from typing import Any

from zbdetect.boundary import SPACES
from zbdetect.head import TrainConfig
from zbdetect.hypersphere import McConfig
from zbdetect.simulate import ChartConfig
from zbdetect.synthetic import SyntheticSpec

logger = logging.getLogger(__name__)

ABNORMAL_SOURCES = ("abnormal-class", "uniform-sphere", "noise")


def default_config() -> dict[str, Any]:
    """The shipped default configuration (a fresh copy)."""
    text = resources.files("zbdetect").joinpath("default_config.json").read_text()
    return json.loads(text)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_keys(cfg: dict, ref: dict, path: str = "") -> None:
    for key, value in cfg.items():
        if key not in ref:
            raise ValueError(f"unknown config key {path}{key}")
        if isinstance(value, dict) and isinstance(ref[key], dict) and ref[key]:
            _check_keys(value, ref[key], f"{path}{key}.")


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict[str, Any]:
    """Defaults, then command-line ``overrides``, then the config file.

    The file wins on conflict; a warning names every flag it overrides.
    """
    base = default_config()
    cfg = deep_merge(base, overrides or {})
    if path is not None:
        file_cfg = json.loads(Path(path).read_text())
        _check_keys(file_cfg, base)
        for dotted, flag_value in _flatten(overrides or {}).items():
            file_value = _lookup(file_cfg, dotted)
            if file_value is not _MISSING and file_value != flag_value:
                logger.warning("config file sets %s=%r, overriding command-line %r", dotted, file_value, flag_value)
        cfg = deep_merge(cfg, file_cfg)
    _check_keys(cfg, base)
    validate(cfg)
    return cfg


_MISSING = object()


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for key, value in d.items():
        if isinstance(value, dict):
            out.update(_flatten(value, f"{prefix}{key}."))
        else:
            out[f"{prefix}{key}"] = value
    return out


def _lookup(d: dict, dotted: str):
    for part in dotted.split("."):
        if not isinstance(d, dict) or part not in d:
            return _MISSING
        d = d[part]
    return d


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    return SyntheticSpec(**cfg["data"])


def train_config(cfg: dict, **changes) -> TrainConfig:
    t = {**cfg["train"], **changes}
    t["snapshot_at"] = tuple(t.get("snapshot_at", ()))
    return TrainConfig(**t)


def mc_config(cfg: dict) -> McConfig:
    d = cfg["detector"]
    return McConfig(d["mc_points"], d["mc_seed"], d["workers"])


def chart_config(cfg: dict, kind: str | None = None, **changes) -> ChartConfig:
    c = {k: v for k, v in cfg["chart"].items() if k not in ("kinds", "fpr_floor")}
    c["kind"] = kind or cfg["chart"]["kinds"][0]
    c.update(changes)
    return ChartConfig(**c)


def validate(cfg: dict) -> None:
    synthetic_spec(cfg)
    train_config(cfg)
    mc_config(cfg)
    det = cfg["detector"]
    if det["space"] not in SPACES:
        raise ValueError(f"detector.space must be one of {SPACES}")
    if det["abnormal_source"] not in ABNORMAL_SOURCES:
        raise ValueError(f"detector.abnormal_source must be one of {ABNORMAL_SOURCES}")
    for kind in cfg["chart"]["kinds"]:
        chart_config(cfg, kind)
    sc = cfg["scenario"]
    if not (0 < sc["change_time"] <= sc["length"]):
        raise ValueError("scenario needs 0 < change_time <= length")
    for key in ("trials",):
        if sc[key] < 1:
            raise ValueError(f"scenario.{key} must be >= 1")


def radians(degrees) -> list[float]:
    return [math.radians(d) for d in degrees]
