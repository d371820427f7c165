"""Strict JSON run configuration and the seed fan-out scheme.

A run is reproducible from ``(config file, seed)``. Every random stream is
``numpy.random.default_rng([seed, k])`` with a fixed counter ``k``:

====  =========================
k     consumer
====  =========================
0     synthetic data generation
1     model initialisation
2     minibatch shuffling
====  =========================
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .datagen import SynthSpec
from .objectives import OsdaHyper
from .trainer import ConfigError, TrainConfig

STREAM_DATA, STREAM_INIT, STREAM_SHUFFLE = 0, 1, 2


def seed_stream(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, k])


@dataclass
class ModelShape:
    feature_dim: int = 16
    hidden: int = 32
    disc_hidden: int = 32
    slope: float = 0.01
    feature_act: str = "sigmoid"

    def __post_init__(self):
        if self.feature_act not in ("sigmoid", "leaky-relu"):
            raise ConfigError("feature_act must be 'sigmoid' or 'leaky-relu'")


@dataclass
class TrainSection:
    lr: float = 0.01
    momentum: float = 0.9
    batch: int = 64
    epochs: int = 200
    log_every: int = 1
    use_delta: bool = True
    use_conditional: bool = True
    floor_delta: bool = True


@dataclass
class VerifySection:
    n_instances: int = 1000
    m_max: int = 4
    k_max: int = 2
    eps: float = 0.0


@dataclass
class RunConfig:
    seed: int = 0
    data: SynthSpec = field(default_factory=SynthSpec)
    model: ModelShape = field(default_factory=ModelShape)
    train: TrainSection = field(default_factory=TrainSection)
    # alpha stands in for 1/(1 - pi); the default task has pi = 0.3
    hyper: OsdaHyper = field(default_factory=lambda: OsdaHyper(alpha=1.4))
    verify: VerifySection = field(default_factory=VerifySection)
    out: str | None = None

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, hyper=self.hyper, **asdict(self.train))

    def synth_spec(self) -> SynthSpec:
        doc = asdict(self.data)
        doc["seed"] = self.seed
        return SynthSpec(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["data"].pop("seed")  # the top-level seed drives every stream
        return doc


_SECTIONS = {"data": SynthSpec, "model": ModelShape, "train": TrainSection, "hyper": OsdaHyper, "verify": VerifySection}


def _strict(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(doc) - known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    extra = sorted(set(doc) - {"seed", "out", *_SECTIONS})
    if extra:
        raise ConfigError(f"unknown top-level keys {extra}")
    if isinstance(doc.get("data"), dict) and "seed" in doc["data"]:
        raise ConfigError("data.seed is not configurable; set the top-level seed")
    kwargs = {k: _strict(cls, doc[k], k) for k, cls in _SECTIONS.items() if k in doc}
    if "seed" in doc:
        if not isinstance(doc["seed"], int):
            raise ConfigError("seed must be an integer")
        kwargs["seed"] = doc["seed"]
    if "out" in doc:
        kwargs["out"] = doc["out"]
    cfg = RunConfig(**kwargs)
    try:
        cfg.synth_spec().validate()
        cfg.train_config()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_dict(doc)
