"""Strict JSON configuration files.

A config file is a JSON object with optional "model" and "train" sections
mapping straight onto :class:`~derain_ddsa.model.ModelConfig` and
:class:`~derain_ddsa.training.TrainConfig`.  Unknown keys anywhere are fatal:
a typo must fail loudly, not silently train the wrong model.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Raised for unreadable, unparsable, or invalid configuration."""


def _from_mapping(cls, mapping: dict, where: str, base=None):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}: expected an object, got {type(mapping).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in mapping.items()
    }
    try:
        obj = cls(**kwargs) if base is None else dataclasses.replace(base, **kwargs)
        obj.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return obj


def model_config_from(mapping: dict, where: str = "model",
                      base: ModelConfig | None = None) -> ModelConfig:
    return _from_mapping(ModelConfig, mapping, where, base)


def train_config_from(mapping: dict, where: str = "train",
                      base: TrainConfig | None = None) -> TrainConfig:
    return _from_mapping(TrainConfig, mapping, where, base)


def load_config(
    path: str | Path,
    *,
    model_base: ModelConfig | None = None,
    train_base: TrainConfig | None = None,
) -> tuple[ModelConfig, TrainConfig]:
    """Parse a config file; its keys override the given bases (or defaults)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    unknown = sorted(set(raw) - {"model", "train"})
    if unknown:
        raise ConfigError(f"config {path}: unknown top-level keys {unknown}")
    model_cfg = model_config_from(raw.get("model", {}), base=model_base)
    train_cfg = train_config_from(raw.get("train", {}), base=train_base)
    return model_cfg, train_cfg


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


def config_to_dict(cfg) -> dict:
    """Dataclass -> plain JSON-ready dict (tuples become lists)."""
    return {k: _jsonable(v) for k, v in dataclasses.asdict(cfg).items()}


def dump_config(model_cfg: ModelConfig, train_cfg: TrainConfig | None = None) -> str:
    doc = {"model": config_to_dict(model_cfg)}
    if train_cfg is not None:
        doc["train"] = config_to_dict(train_cfg)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
