"""Flat ``key = value`` experiment configuration.

One file drives every command. Blank lines and lines starting with ``#``
are ignored; unknown keys are rejected. Lists are comma separated, lists of
points use ``;`` between points (``normal_means = -2,0; 2,0``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .data import GenConfig
from .errors import ConfigError, ContractError
from .trainer import ModelConfig, TrainConfig

SOURCES = ("toy", "idx", "digits")


@dataclass(frozen=True)
class ExperimentConfig:
    # data source
    source: str = "toy"
    idx_images: str = ""
    idx_labels: str = ""
    normal_class: int = 1
    unseen_class: int = 0
    downsample: int = 2
    digits_per_class: int = 1400
    # shared seed
    seed: int = 0
    # split protocol / toy geometry
    n_unlabeled_normal: int = 900
    n_unlabeled_seen: int = 100
    n_labeled_seen: int = 50
    test_normal: int = 500
    test_seen: int = 250
    test_unseen: int = 250
    val_fraction: float = 0.1
    normal_means: tuple = ((-2.0, 0.0), (2.0, 0.0))
    normal_std: float = 0.5
    seen_mean: tuple = (0.0, 3.0)
    seen_std: float = 0.4
    unseen_mean: tuple = (0.0, -3.0)
    unseen_std: float = 0.4
    # training
    loss: str = "PU_BCE"
    alpha: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 200
    weight_decay: float = 1e-3
    patience: int = 20
    pretrain_epochs: int = 50
    # model
    hidden: tuple = (32,)
    latent_dim: int = 2
    noise_sigma: float = 0.1
    # sweeps
    sweep_values: tuple = (0.01, 0.05, 0.1, 0.3, 0.5)
    sweep_counts: tuple = (0, 50, 100, 200)
    sweep_seeds: int = 5
    workers: int = 1
    # contour
    contour_x: tuple = (-5.0, 5.0)
    contour_y: tuple = (-5.0, 5.0)
    contour_resolution: int = 101

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {', '.join(SOURCES)}", "source")
        if self.source == "idx" and not (self.idx_images and self.idx_labels):
            raise ConfigError("source=idx needs idx_images and idx_labels", "idx_images")
        for key in ("contour_x", "contour_y"):
            if len(getattr(self, key)) != 2:
                raise ConfigError(f"{key} must be 'min,max'", key)
        if self.workers < 1:
            raise ConfigError("workers must be positive", "workers")
        # validate the derived configs eagerly so errors name the key
        self.gen_config()
        self.train_config()
        self.model_config()

    def gen_config(self) -> GenConfig:
        return GenConfig(**{f.name: getattr(self, f.name) for f in fields(GenConfig)})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{f.name: getattr(self, f.name) for f in fields(TrainConfig)})

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{f.name: getattr(self, f.name) for f in fields(ModelConfig)})

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: format_value(getattr(self, f.name)) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def format_value(v) -> str:
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(",".join(repr(float(x)) for x in p) for p in v)
        return ",".join(repr(x) for x in v)
    return str(v)


def _parse_value(key: str, text: str):
    default = _FIELDS[key].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if default and isinstance(default[0], tuple):
                return tuple(tuple(float(x) for x in p.split(",")) for p in text.split(";") if p.strip())
            caster = type(default[0]) if default else float
            return tuple(caster(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}", key) from None


def parse_assignments(pairs, source="config") -> dict:
    values = {}
    for lineno, line in pairs:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        where = f"{source}:{lineno}" if lineno else source
        if not eq:
            raise ConfigError(f"{where}: expected key = value, got {line!r}", key or None)
        if key not in _FIELDS:
            raise ConfigError(f"{where}: unknown key {key!r}", key)
        values[key] = _parse_value(key, value)
    return values


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read ``path`` (optional) and apply ``key=value`` overrides on top."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_assignments(enumerate(fh.read().splitlines(), 1), str(path)))
    values.update(parse_assignments(((0, o) for o in overrides), "--set"))
    try:
        return ExperimentConfig(**values)
    except ConfigError:
        raise
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
