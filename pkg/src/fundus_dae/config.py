"""Unified experiment configuration (JSON text) with desk and full-scale presets.

Every CLI command reads an :class:`ExperimentConfig`, applies its flags on
top, and writes the result next to its outputs as ``resolved_config.json``;
passing that file back with ``--config`` repeats the run.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import IngestionError, ValidationError
from .inpaint import RestoreOptions
from .model import ModelConfig
from .phantom import PhantomSpec
from .schedule import ScheduleConfig
from .train import TrainConfig

OUTPUT_ROOT_ENV = "FUNDUS_DAE_OUTPUT_ROOT"


@dataclass
class DatasetConfig:
    n: int = 8
    base_seed: int = 0


@dataclass
class SynthConfig:
    n: int = 40
    seed: int = 1000  # base seed of the clean phantoms; kept clear of the training seeds
    alpha: float = 0.9
    source_seed_offset: int = 100000


@dataclass
class MetricOptions:
    peak: float = 1.0
    ssim_window: int = 7
    k1: float = 0.01
    k2: float = 0.03
    fov_only: bool = False
    vessel_scale_px: float = 3.0
    vessel_threshold: float = 0.25


@dataclass
class PathConfig:
    dataset: str = ""
    checkpoint: str = ""
    pairs: str = ""
    ref: str = ""
    restored: str = ""
    clean: str = ""
    out: str = ""


def _train_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig) if f.name not in ("model", "schedule")]


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_root: str = "runs"
    jobs: int = 1
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=1500, lr_init=2e-3))
    synth: SynthConfig = field(default_factory=SynthConfig)
    restore: RestoreOptions = field(default_factory=RestoreOptions)
    metrics: MetricOptions = field(default_factory=MetricOptions)
    paths: PathConfig = field(default_factory=PathConfig)

    def train_config(self) -> TrainConfig:
        kw = {name: getattr(self.train, name) for name in _train_fields()}
        if not kw["dataset"]:
            kw["dataset"] = self.paths.dataset
        return TrainConfig(model=self.model, schedule=self.schedule, **kw)

    def resolved_output_root(self) -> Path:
        return Path(os.environ.get(OUTPUT_ROOT_ENV) or self.output_root)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output_root": self.output_root,
            "jobs": self.jobs,
            "phantom": self.phantom.to_dict(),
            "dataset": asdict(self.dataset),
            "schedule": asdict(self.schedule),
            "model": self.model.to_dict(),
            "train": {name: getattr(self.train, name) for name in _train_fields()},
            "synth": asdict(self.synth),
            "restore": self.restore.to_dict(),
            "metrics": asdict(self.metrics),
            "paths": asdict(self.paths),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"config: unknown section(s) {sorted(unknown)}")
        base = cls()
        try:
            return cls(
                seed=int(d.get("seed", base.seed)),
                output_root=str(d.get("output_root", base.output_root)),
                jobs=int(d.get("jobs", base.jobs)),
                phantom=PhantomSpec.from_dict({**base.phantom.to_dict(), **d.get("phantom", {})}),
                dataset=DatasetConfig(**{**asdict(base.dataset), **d.get("dataset", {})}),
                schedule=ScheduleConfig(**{**asdict(base.schedule), **d.get("schedule", {})}),
                model=ModelConfig.from_dict({**base.model.to_dict(), **d.get("model", {})}),
                train=TrainConfig(**{**{n: getattr(base.train, n) for n in _train_fields()}, **d.get("train", {})}),
                synth=SynthConfig(**{**asdict(base.synth), **d.get("synth", {})}),
                restore=RestoreOptions(**{**base.restore.to_dict(), **d.get("restore", {})}),
                metrics=MetricOptions(**{**asdict(base.metrics), **d.get("metrics", {})}),
                paths=PathConfig(**{**asdict(base.paths), **d.get("paths", {})}),
            )
        except TypeError as exc:
            raise ValidationError(f"config: {exc}") from exc

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config: not valid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ValidationError("config: top level must be an object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IngestionError(f"{path}: {exc.strerror or exc}") from exc
        return cls.loads(text)


def preset(name: str) -> ExperimentConfig:
    """``desk``: 64x64, D=64, T=200, CPU-sized. ``full``: 512x512, D=512, T=1000, lr 1e-4 over 150 epochs, batch 4."""
    if name == "desk":
        return ExperimentConfig()
    if name == "full":
        cfg = ExperimentConfig()
        cfg.phantom = PhantomSpec(size=512, vessel_width_px=12.0)
        cfg.schedule = ScheduleConfig(T=1000)
        cfg.model = ModelConfig(image_size=512, latent_dim=512, base_width=64, depth=3, encoder_widths=(64, 128, 256, 512))
        cfg.train = TrainConfig(epochs=150, batch_size=4, lr_init=1e-4)
        cfg.restore = RestoreOptions(steps=250)
        return cfg
    raise ValidationError(f"preset: unknown preset {name!r} (choose desk or full)")
