"""Run configuration: a JSON file of sections, overridable from the CLI."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    kld_tau: float = 1.0
    kld_reverse: bool = False
    probiou_weight: float = 1.0
    dfl_weight: float = 1.0
    cov_divisor: float = 12.0
    dfl_reduction: str = "mean"

    def validate(self):
        _require(self.kld_tau >= 1.0, "loss.kld_tau must be >= 1 to keep the loss in [0, 1)")
        _require(self.probiou_weight >= 0 and self.dfl_weight >= 0, "loss weights must be >= 0")
        _require(self.cov_divisor > 0, "loss.cov_divisor must be positive")
        _require(self.dfl_reduction in ("mean", "sum"), "loss.dfl_reduction must be mean or sum")


@dataclass(frozen=True)
class AssignConfig:
    alpha: float = 1.0
    beta: float = 6.0
    topk: int = 13
    fcosr_shrink: float = 0.5

    def validate(self):
        _require(self.alpha > 0 and self.beta > 0, "assign.alpha and assign.beta must be positive")
        _require(isinstance(self.topk, int) and self.topk >= 1, "assign.topk must be an integer >= 1")
        _require(0 < self.fcosr_shrink <= 1, "assign.fcosr_shrink must be in (0, 1]")


@dataclass(frozen=True)
class NmsConfig:
    score_threshold: float = 0.1
    iou_threshold: float = 0.1
    class_aware: bool = True
    size_decode: str = "exp"

    def validate(self):
        _require(0 <= self.score_threshold < 1, "nms.score_threshold must be in [0, 1)")
        _require(0 < self.iou_threshold < 1, "nms.iou_threshold must be in (0, 1)")
        _require(self.size_decode in ("exp", "linear"), "nms.size_decode must be exp or linear")


@dataclass(frozen=True)
class TileConfig:
    preset: str = "dota-ss"
    keep_frac: float = 0.5

    def validate(self):
        from .dota import PRESETS

        _require(self.preset in PRESETS, f"tile.preset must be one of {sorted(PRESETS)}")
        _require(0 < self.keep_frac <= 1, "tile.keep_frac must be in (0, 1]")


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    use_07_metric: bool = False

    def validate(self):
        _require(0 < self.iou_threshold <= 1, "eval.iou_threshold must be in (0, 1]")


@dataclass(frozen=True)
class Config:
    loss: LossConfig = field(default_factory=LossConfig)
    assign: AssignConfig = field(default_factory=AssignConfig)
    nms: NmsConfig = field(default_factory=NmsConfig)
    tile: TileConfig = field(default_factory=TileConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "Config":
        for f in fields(self):
            getattr(self, f.name).validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def override(self, section: str, **values) -> "Config":
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        sub = replace(getattr(self, section), **values)
        return replace(self, **{section: sub}).validate()


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{key} must be a finite number")
        return float(value)
    if not isinstance(value, type(default)):
        raise ConfigError(f"{key} must be a {type(default).__name__}")
    return value


def config_from_dict(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    base = Config()
    sections = {f.name: f for f in fields(Config)}
    updates = {}
    for name, body in data.items():
        if name not in sections:
            raise ConfigError(f"unknown config section {name!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        current = getattr(base, name)
        known = {f.name for f in fields(current)}
        for key in body:
            if key not in known:
                raise ConfigError(f"unknown config key {name}.{key}")
        vals = {k: _coerce(v, getattr(current, k), f"{name}.{k}") for k, v in body.items()}
        updates[name] = replace(current, **vals)
    return replace(base, **updates).validate()


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config().validate()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
