"""Pipeline configuration: one JSON document, nested dataclasses."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .mchog import MchogParams, descriptor_length
from .resnet import ResNetConfig, RmsProp, TrainRegime
from .silhouette import RoiSpec


@dataclass(frozen=True)
class DatasetConfig:
    n_scenes: int = 100
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    distractor_fraction: float = 0.2
    mixed_directions: bool = False
    noise: float = 0.0
    classmap: bool = False
    seed: int = 0


@dataclass(frozen=True)
class SvmConfig:
    c: float = 2.0 ** -5
    c_exponents: tuple[int, ...] = tuple(range(-8, 5))
    tol: float = 1e-4
    train_stride: int = 2
    class_weight: bool = False


@dataclass(frozen=True)
class SweepGrid:
    cell_sizes_x: tuple[int, ...] = (8, 16, 32)
    cell_sizes_y: tuple[int, ...] = (8, 16, 32)
    n_bins: tuple[int, ...] = (6, 12, 16)

    def size(self, n_c: int) -> int:
        return len(self.cell_sizes_x) * len(self.cell_sizes_y) * len(self.n_bins) * n_c


@dataclass(frozen=True)
class PipelineConfig:
    roi: RoiSpec = RoiSpec()
    history: int = 20
    mchog: MchogParams = MchogParams()
    svm: SvmConfig = SvmConfig()
    sweep: SweepGrid = SweepGrid()
    resnet: ResNetConfig = ResNetConfig()
    optimizer: RmsProp = RmsProp()
    batch_size: int = 10
    iterations: int = 3000
    validation_every: int = 250
    lr_milestones: tuple[float, ...] = (0.6, 0.85)
    lr_gamma: float = 0.1
    threshold_step: float = 0.02
    dataset: DatasetConfig = DatasetConfig()
    seed: int = 0

    def __post_init__(self):
        if self.history < 1:
            raise ValueError("history must be >= 1")
        if descriptor_length(self.mchog) < 1:
            raise ValueError("empty descriptor")

    def regime(self) -> TrainRegime:
        return TrainRegime(self.optimizer, self.batch_size, self.iterations,
                           self.validation_every, self.seed, self.lr_milestones, self.lr_gamma)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _build(cls, data: Any):
    if not dataclasses.is_dataclass(cls) or not isinstance(data, dict):
        return data
    hints = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in hints:
            raise KeyError(f"unknown config key {cls.__name__}.{key}")
        default = getattr(cls(), key) if _has_defaults(cls) else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _has_defaults(cls) -> bool:
    return all(f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING
               for f in dataclasses.fields(cls))


def from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data)


def load(path: Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return from_dict(json.loads(Path(path).read_text()))


def override(cfg: PipelineConfig, dotted: dict[str, Any]) -> PipelineConfig:
    """Apply ``{"svm.c": 0.5, ...}`` style overrides."""
    data = cfg.to_dict()
    for key, value in dotted.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        if parts[-1] not in node:
            raise KeyError(f"unknown config key {key}")
        node[parts[-1]] = value
    return from_dict(data)
