"""Experiment config files: INI-style sections of flat key=value pairs."""

import configparser
import os
from dataclasses import dataclass, field

from .models import VARIANTS, ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Experiment config file is malformed or inconsistent."""


def _coerce(raw):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


@dataclass
class ExperimentConfig:
    dataset_path: str
    row_normalize: bool = True
    model: dict = field(default_factory=dict)     # ModelConfig overrides
    train: dict = field(default_factory=dict)     # TrainConfig overrides
    runs: int = 10
    depths: list = None                           # optional sweep
    out_dir: str = "results"

    @property
    def variant(self):
        return self.model.get("variant", "GCN")

    @property
    def base_seed(self):
        return int(self.train.get("seed", 0))


_MODEL_FIELDS = set(ModelConfig.__dataclass_fields__)
_TRAIN_FIELDS = set(TrainConfig.__dataclass_fields__)


def load_experiment_config(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    if "data" not in parser or "path" not in parser["data"]:
        raise ConfigError("config needs a [data] section with a 'path' key")
    data = {k: _coerce(v) for k, v in parser["data"].items()}
    model = {k: _coerce(v) for k, v in parser["model"].items()} if "model" in parser else {}
    train = {k: _coerce(v) for k, v in parser["train"].items()} if "train" in parser else {}
    exp = {k: v for k, v in parser["experiment"].items()} if "experiment" in parser else {}

    unknown = set(model) - _MODEL_FIELDS
    if unknown:
        raise ConfigError(f"unknown [model] keys: {sorted(unknown)}")
    unknown = set(train) - _TRAIN_FIELDS
    if unknown:
        raise ConfigError(f"unknown [train] keys: {sorted(unknown)}")

    depths = None
    if "depths" in exp and exp["depths"].strip():
        try:
            depths = [int(v) for v in exp["depths"].split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad depths list: {exp['depths']}") from exc
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise ConfigError("depths must be strictly increasing")

    runs = _coerce(exp.get("runs", "10"))
    if not isinstance(runs, int) or runs < 1:
        raise ConfigError("runs must be a positive integer")

    cfg = ExperimentConfig(
        dataset_path=str(data["path"]),
        row_normalize=bool(data.get("row_normalize", True)),
        model=model,
        train=train,
        runs=runs,
        depths=depths,
        out_dir=str(exp.get("out", "results")),
    )
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown model variant: {cfg.variant}")
    return cfg
