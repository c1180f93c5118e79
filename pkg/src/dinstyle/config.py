"""JSON run configuration for ``dinstyle train``.

Top-level keys mirror :class:`TrainConfig`; the nested ``loss`` and
``network`` objects mirror :class:`LossConfig` and :class:`StyleNetConfig`.
Relative paths are resolved against the directory holding the config file.
Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import os
from typing import Any, Mapping

from .losses import LossConfig
from .stylenet import StyleNetConfig
from .trainer import TrainConfig

PATH_KEYS = ("content_dir", "style_dir", "out_dir", "loss_net_weights", "resume_from")


class ConfigError(ValueError):
    pass


def normalize_conv_type(name: str) -> str:
    return name.replace("-", "_")


def _build(cls, data: Any, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'}: expected a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    nested = {"loss": LossConfig, "network": StyleNetConfig} if cls is TrainConfig else {}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {where + key!r}")
        if key in nested:
            value = _build(nested[key], value, f"{key}.")
        elif key == "style_layers":
            value = tuple(value)
        elif key == "conv_type" and isinstance(value, str):
            value = normalize_conv_type(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(data: Mapping[str, Any], base_dir: str = ".") -> TrainConfig:
    cfg = _build(TrainConfig, data, "")
    for key in PATH_KEYS:
        value = getattr(cfg, key)
        if value is not None:
            if not isinstance(value, str):
                raise ConfigError(f"{key} must be a string path")
            setattr(cfg, key, os.path.normpath(os.path.join(base_dir, value)))
    try:
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data, os.path.dirname(os.path.abspath(path)))


def config_to_dict(cfg: TrainConfig) -> dict[str, Any]:
    out = dataclasses.asdict(cfg)
    out["loss"]["style_layers"] = list(out["loss"]["style_layers"])
    return out
