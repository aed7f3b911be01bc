"""Run configuration: one JSON file, strict keys, CLI-flag overrides.

Every section has defaults, so an empty ``{}`` config is a valid desk-scale
run definition. Unknown keys anywhere are rejected so ablation definitions
stay diffable and typo-safe. Each command writes its resolved configuration
next to its outputs; that echo file is sufficient to re-run the command.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

from .imaging import FogParams
from .losses import LossWeights
from .model import ModelConfig
from .schedule import BlendSchedule


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


def _build(cls, payload: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{section}' section: {exc}") from exc


@dataclass(frozen=True)
class PathsConfig:
    dataset_root: Optional[str] = None


@dataclass(frozen=True)
class DatasetConfig:
    image_size: int = 32
    grid_size: int = 4
    num_classes: int = 3
    min_objects: int = 3
    max_objects: int = 6
    num_source: int = 200
    num_target: int = 200


@dataclass(frozen=True)
class ModelSection:
    feature_dim: int = 32
    disc_hidden: int = 16


@dataclass(frozen=True)
class OptimizerSettings:
    lr: float = 2e-3
    weight_decay: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(self.betas))
        if len(self.betas) != 2:
            raise ValueError(f"betas must have two entries, got {self.betas}")


@dataclass(frozen=True)
class TrainConfig:
    pretrain_iterations: int = 1500
    epochs: int = 10
    static_delta: Optional[float] = None
    adversarial_mode: str = "mixed"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.adversarial_mode not in ("hard", "mixed"):
            raise ValueError(
                f"adversarial_mode must be 'hard' or 'mixed', got {self.adversarial_mode!r}"
            )
        if self.static_delta is not None and not (0.0 <= self.static_delta <= 1.0):
            raise ValueError(f"static_delta must be in [0, 1], got {self.static_delta}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class AblationConfig:
    seeds: int = 5
    static_deltas: Tuple[float, ...] = (0.7, 0.9, 1.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "static_deltas", tuple(self.static_deltas))
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    fog: FogParams = field(default_factory=lambda: FogParams(0.97, 0.85, 0.15, 0))
    target_fog: Optional[FogParams] = field(
        default_factory=lambda: FogParams(0.88, 0.85, 0.10, 0)
    )
    model_section: ModelSection = field(default_factory=ModelSection)
    schedule: BlendSchedule = field(default_factory=lambda: BlendSchedule(4.0, 0.9, 3000))
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    schedule_curve_samples: int = 101

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        if not isinstance(payload, dict):
            raise ConfigError("config root must be a JSON object")
        sections = {
            "paths": ("paths", PathsConfig),
            "dataset": ("dataset", DatasetConfig),
            "fog": ("fog", FogParams),
            "target_fog": ("target_fog", FogParams),
            "model": ("model_section", ModelSection),
            "schedule": ("schedule", BlendSchedule),
            "loss_weights": ("loss_weights", LossWeights),
            "optimizer": ("optimizer", OptimizerSettings),
            "train": ("train", TrainConfig),
            "ablation": ("ablation", AblationConfig),
        }
        known = set(sections) | {"schedule_curve_samples"}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        kwargs = {}
        for name, (field_name, section_cls) in sections.items():
            if name in payload:
                kwargs[field_name] = _build(section_cls, payload[name], name)
        if "schedule_curve_samples" in payload:
            kwargs["schedule_curve_samples"] = int(payload["schedule_curve_samples"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["model"] = out.pop("model_section")
        out["optimizer"]["betas"] = list(self.optimizer.betas)
        out["ablation"]["static_deltas"] = list(self.ablation.static_deltas)
        return out

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)

    @property
    def model(self) -> ModelConfig:
        """ModelConfig derived from the dataset geometry plus model section."""
        return ModelConfig(
            image_size=self.dataset.image_size,
            grid_size=self.dataset.grid_size,
            num_classes=self.dataset.num_classes,
            feature_dim=self.model_section.feature_dim,
            disc_hidden=self.model_section.disc_hidden,
        )


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in config {path}: {exc}") from exc
    return RunConfig.from_dict(payload)


def write_resolved_config(config: RunConfig, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
