"""Pipeline configuration.  Defaults follow the published setup.

A config file is YAML (JSON is accepted too) with optional top-level
sections ``grid``, ``sequence``, ``augment``, ``model`` and ``train``::

    grid:
      ticks_per_beat: {"6/8": 18}
    sequence:
      measures: 2
      synchronized: true
      shift_ms: 50
      signatures: ["2/4", "3/4", "4/4"]
      split: [0.8, 0.1, 0.1]
    augment:
      transpose: true
      delete: false
      nv_noise: true
    model:
      d_model: 128
    train:
      batch_size: 8
      max_epochs: 100
      patience: 20
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .model.transformer import ModelConfig


@dataclass
class GridConfig:
    # per-signature overrides such as {"6/8": 18}; otherwise quarter = 12 ticks
    ticks_per_beat: dict[str, int] = field(default_factory=dict)


@dataclass
class SequenceConfig:
    measures: int = 2
    synchronized: bool = True
    shift_ms: float = 50.0
    signatures: list[str] = field(default_factory=lambda: ["2/4", "3/4", "4/4"])
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0


@dataclass
class AugmentConfig:
    transpose: bool = True
    delete: bool = False
    nv_noise: bool = True
    delete_select: float = 0.2
    delete_prob: float = 0.5
    nv_sigma: float = 0.05


@dataclass
class TrainConfig:
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0
    max_steps: int | None = None
    # factored optimizer
    relative_step: bool = True
    scale_parameter: bool = True
    warmup_init: bool = False
    lr: float | None = None
    decay_rate: float = -0.8
    clip_threshold: float = 1.0
    eps1: float = 1e-30
    eps2: float = 1e-3

    def __post_init__(self):
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class Config:
    grid: GridConfig = field(default_factory=GridConfig)
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> Config:
        data = data or {}
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for f in fields(cls):
            section_cls = type(getattr(cls(), f.name))
            section = data.get(f.name) or {}
            known = {g.name for g in fields(section_cls)}
            bad = set(section) - known
            if bad:
                raise ValueError(f"unknown keys in {f.name}: {sorted(bad)}")
            if "split" in section:
                section = {**section, "split": tuple(section["split"])}
            kwargs[f.name] = section_cls(**section)
        return cls(**kwargs)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    return Config.from_dict(yaml.safe_load(Path(path).read_text()))
