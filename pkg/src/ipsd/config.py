"""Experiment configuration: nested dataclasses loaded from YAML/JSON, overridable by flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .data import CleanSpec, Component, NoiseSpec, WelchConfig
from .denoiser import ConvergenceCriterion, DenoiserConfig
from .errors import ConfigError, InvalidArgumentError
from .policy import TrainConfig
from .zeroshot import LilUcbConfig

MODES = ("gen-data", "train", "denoise", "zeroshot", "ablate", "eval")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "gen-data"
    seed: int = 0
    window_len: int = 8
    n_signals: int = 10
    clean: CleanSpec = field(default_factory=CleanSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    bandit: LilUcbConfig = field(default_factory=LilUcbConfig)
    criterion: ConvergenceCriterion = field(default_factory=ConvergenceCriterion)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    welch: WelchConfig = field(default_factory=WelchConfig)
    workers: int = 0            # 0: one per available core
    out: str = "out"
    format: str = "json"
    signal_format: str = "text"
    truncate: bool = False
    dataset: tuple[str, ...] = ()
    input: str | None = None
    checkpoint: str | None = None
    denoised: str | None = None
    split: str = "test"

    def resolved_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        return asdict(self)


_NESTED = {
    "clean": CleanSpec,
    "noise": NoiseSpec,
    "train": TrainConfig,
    "bandit": LilUcbConfig,
    "criterion": ConvergenceCriterion,
    "denoiser": DenoiserConfig,
    "welch": WelchConfig,
}


def _build(cls, values: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    values = dict(values)
    if cls is CleanSpec and "components" in values:
        values["components"] = tuple(
            Component(tuple(c["band_hz"]), **{k: v for k, v in c.items() if k != "band_hz"})
            for c in values["components"])
    for key in ("amplitude_range",):
        if values.get(key) is not None:
            values[key] = tuple(values[key])
    try:
        return cls(**values)
    except (InvalidArgumentError, TypeError) as e:
        raise ConfigError(f"{where}: {e}") from e


def from_dict(d: dict[str, Any]) -> ExperimentConfig:
    d = dict(d)
    kwargs = {}
    for key, cls in _NESTED.items():
        if key in d:
            sub = d.pop(key)
            if not isinstance(sub, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            kwargs[key] = _build(cls, sub, key)
    if "dataset" in d:
        ds = d.pop("dataset")
        kwargs["dataset"] = (ds,) if isinstance(ds, str) else tuple(ds)
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs.update(d)
    return ExperimentConfig(**kwargs)


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML/JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def merge(base: dict, overrides: dict) -> dict:
    """Deep merge; values in ``overrides`` win."""
    out = dict(base)
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(cfg: ExperimentConfig) -> None:
    """Per-mode checks that must pass before any computation starts."""
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    W = cfg.window_len
    if W < 2 or W % 2 or W > 12:
        raise ConfigError(f"window length must be even and in [2, 12], got {W}")
    if cfg.format not in ("json", "csv"):
        raise ConfigError(f"format must be json or csv, got {cfg.format!r}")
    if cfg.signal_format not in ("text", "bin"):
        raise ConfigError(f"signal_format must be text or bin, got {cfg.signal_format!r}")
    if cfg.split not in ("train", "test", "all"):
        raise ConfigError(f"split must be train, test or all, got {cfg.split!r}")
    if cfg.train.window_len != W:
        raise ConfigError(f"train.window_len {cfg.train.window_len} differs from window_len {W}")
    if cfg.mode == "gen-data":
        if cfg.n_signals < 1:
            raise ConfigError("empty dataset: n_signals must be at least 1")
        L = cfg.clean.length
        if cfg.clean.family != "file" and L % W and not cfg.truncate:
            raise ConfigError(f"signal length {L} is not a multiple of window length {W} (use --truncate)")
    if cfg.mode in ("train", "ablate") and not cfg.dataset:
        raise ConfigError(f"{cfg.mode} needs --dataset")
    if cfg.mode in ("denoise", "zeroshot") and not (cfg.input or cfg.dataset):
        raise ConfigError(f"{cfg.mode} needs --input or --dataset")
    if cfg.mode == "denoise" and not cfg.checkpoint:
        raise ConfigError("denoise needs --checkpoint")
    if cfg.mode == "eval" and not (cfg.dataset and cfg.denoised):
        raise ConfigError("eval needs --dataset and --denoised")
