"""Run configuration: a YAML document mirroring the dataclass configs.

Every key is optional; unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .data import SyntheticSpec
from .evaluation import INTENSITIES
from .noise import NoiseSchedule, build_schedule
from .training import TrainConfig
from .vae import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleConfig:
    beta_start: float = 0.01
    beta_end: float = 0.5
    T: int = 100
    kind: str = "scaled_linear"

    def build(self) -> NoiseSchedule:
        return build_schedule(self.beta_start, self.beta_end, self.T, self.kind)


@dataclass
class EvalConfig:
    noise_types: tuple[str, ...] = ("gaussian", "impulse")
    intensities: tuple[int, ...] = INTENSITIES
    conditions: tuple[str, ...] = ("a", "v", "l", "av", "al", "vl")
    draws: int = 1
    batch_size: int = 256

    def __post_init__(self):
        self.noise_types = tuple(self.noise_types)
        self.intensities = tuple(int(t) for t in self.intensities)
        self.conditions = tuple(self.conditions)


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    dataset: str | None = None  # existing dataset dir; synthetic data is used when unset
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def snapshot(self) -> dict:
        return _plain(asdict(self))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, doc, where: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for k, v in doc.items():
        hint = hints[k]
        if dataclasses.is_dataclass(hint):
            kwargs[k] = _build(hint, v, f"{where}.{k}")
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def config_from_dict(doc: dict | None) -> RunConfig:
    return _build(RunConfig, doc or {}, "config")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    return config_from_dict(doc)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.snapshot(), sort_keys=True)
