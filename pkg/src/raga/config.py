"""Experiment configuration: a YAML document validated by pydantic models.

Unknown keys are rejected everywhere. Defaults follow the reference setup:
50 clients, batch 32, median tolerance 1e-5, 3 local steps, 500 rounds and
the ``K / (sqrt(5) sqrt(t + 5))`` step size.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import attacks, server
from .client import LrSchedule
from .models import ModelSpec


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MnistData(_Strict):
    kind: Literal["mnist"] = "mnist"
    images_path: str = "data/mnist/train-images-idx3-ubyte"
    labels_path: str = "data/mnist/train-labels-idx1-ubyte"
    test_images_path: str = "data/mnist/t10k-images-idx3-ubyte"
    test_labels_path: str = "data/mnist/t10k-labels-idx1-ubyte"
    subset: Optional[int] = Field(default=None, ge=1)
    test_subset: Optional[int] = Field(default=None, ge=1)


class QuadraticData(_Strict):
    kind: Literal["quadratic"]
    dim: int = Field(default=10, ge=1)
    per_shard: int = Field(default=20, ge=1)
    # Shard offsets are drawn N(0, offset_scale^2 I) unless listed explicitly.
    offset_scale: float = Field(default=1.0, ge=0)
    offsets: Optional[list[list[float]]] = None
    noise_std: float = Field(default=1.0, ge=0)


class LogisticData(_Strict):
    kind: Literal["logistic"]
    dim: int = Field(default=2, ge=1)
    per_shard: int = Field(default=40, ge=1)
    class_count: int = Field(default=2, ge=2)
    separation: float = Field(default=10.0, ge=0)
    test_size: int = Field(default=1000, ge=1)


DatasetConfig = Annotated[Union[MnistData, QuadraticData, LogisticData], Field(discriminator="kind")]


class ModelConfig(_Strict):
    kind: Literal["quadratic", "logistic", "mlp"] = "logistic"
    hidden_dim: int = Field(default=0, ge=0)


class ScheduleConfig(_Strict):
    kind: Literal["constant", "poly_decay", "k_sqrt_decay", "scaled_by_t"] = "k_sqrt_decay"
    eta0: float = Field(default=1.0, gt=0)
    c: float = Field(default=0.0, ge=0)
    exponent: float = 0.5
    # None: use the trainer's local_steps
    k_ref: Optional[int] = Field(default=None, ge=1)
    t_ref: Optional[int] = Field(default=None, ge=1)
    beta: float = Field(default=0.0, ge=0)


class AggregatorConfig(_Strict):
    kind: Literal["geomed", "mean", "coordinate_median", "trimmed_mean"] = "geomed"
    epsilon: float = Field(default=1e-5, gt=0)
    max_iters: int = Field(default=10_000, ge=1)
    trim_fraction: float = Field(default=0.1, ge=0, lt=0.5)


class AttackConfig(_Strict):
    kind: Literal["none", "gaussian", "signflip", "lie"] = "none"
    std: float = Field(default=math.sqrt(90.0), gt=0)
    scale: float = Field(default=3.0, gt=0)
    coeff: float = Field(default=0.7, gt=0)


class TrainerSection(_Strict):
    aggregator: AggregatorConfig = Field(default_factory=AggregatorConfig)
    rounds: int = Field(default=500, ge=1)
    local_steps: int = Field(default=3, ge=1)
    batch_size: int = Field(default=32, ge=1)
    global_lr: ScheduleConfig = Field(default_factory=ScheduleConfig)
    local_lr: ScheduleConfig = Field(default_factory=ScheduleConfig)
    attack: AttackConfig = Field(default_factory=AttackConfig)


class PartitionConfig(_Strict):
    clients: int = Field(default=50, ge=1)
    concentration: float = Field(default=0.6, gt=0)


class ExperimentConfig(_Strict):
    dataset: DatasetConfig = Field(default_factory=MnistData)
    model: ModelConfig = Field(default_factory=ModelConfig)
    trainer: TrainerSection = Field(default_factory=TrainerSection)
    partition: PartitionConfig = Field(default_factory=PartitionConfig)
    byz_fraction: float = Field(default=0.0, ge=0)
    eval_every: int = Field(default=1, ge=1)
    output_dir: str = "runs/default"
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    # Off by default so metrics files are reproducible byte for byte.
    record_wall_time: bool = False
    label: Optional[str] = None

    @field_validator("byz_fraction")
    @classmethod
    def _honest_majority(cls, v):
        if v >= 0.5:
            raise ValueError("honest fraction must exceed 0.5 (byz_fraction < 0.5)")
        return v

    @model_validator(mode="after")
    def _model_matches_data(self):
        quad_data = self.dataset.kind == "quadratic"
        quad_model = self.model.kind == "quadratic"
        if quad_data != quad_model:
            raise ValueError("model.kind 'quadratic' must be paired with dataset.kind 'quadratic'")
        if self.model.kind == "mlp" and self.model.hidden_dim < 1:
            raise ValueError("model.hidden_dim must be >= 1 for mlp")
        if isinstance(self.dataset, QuadraticData) and self.dataset.offsets is not None:
            if len(self.dataset.offsets) != self.partition.clients:
                raise ValueError("dataset.offsets needs one row per client")
            if any(len(row) != self.dataset.dim for row in self.dataset.offsets):
                raise ValueError("every dataset.offsets row needs dataset.dim entries")
        return self

    # conversion into the simulator's own types

    def model_spec(self) -> ModelSpec:
        data = self.dataset
        if isinstance(data, MnistData):
            d, c = 784, 10
        elif isinstance(data, LogisticData):
            d, c = data.dim, data.class_count
        else:
            d, c = data.dim, 0
        return ModelSpec(self.model.kind, d, c, self.model.hidden_dim)

    def _schedule(self, s: ScheduleConfig) -> LrSchedule:
        k_ref = s.k_ref or self.trainer.local_steps
        t_ref = s.t_ref or self.trainer.rounds
        return LrSchedule(s.kind, s.eta0, s.c, s.exponent, k_ref, t_ref, s.beta)

    def trainer_config(self, seed: int) -> server.TrainerConfig:
        tr = self.trainer
        agg = tr.aggregator
        aggregator = {
            "geomed": lambda: server.GeometricMedian(agg.epsilon, agg.max_iters),
            "mean": server.Mean,
            "coordinate_median": server.CoordinateMedian,
            "trimmed_mean": lambda: server.TrimmedMean(agg.trim_fraction),
        }[agg.kind]()
        atk = tr.attack
        attack = {
            "none": attacks.NoAttack,
            "gaussian": lambda: attacks.Gaussian(atk.std),
            "signflip": lambda: attacks.SignFlip(atk.scale),
            "lie": lambda: attacks.Lie(atk.coeff),
        }[atk.kind]()
        return server.TrainerConfig(
            aggregator=aggregator,
            rounds=tr.rounds,
            local_steps=tr.local_steps,
            batch_size=tr.batch_size,
            global_lr=self._schedule(tr.global_lr),
            local_lr=self._schedule(tr.local_lr),
            attack=attack,
            seed=seed,
            eval_every=self.eval_every,
        )

    def resolve_paths(self, base: Path) -> ExperimentConfig:
        """Copy with dataset and output paths made absolute against ``base``."""
        def absolute(p: str) -> str:
            path = Path(p).expanduser()
            return str(path if path.is_absolute() else (base / path).resolve())

        updates = {"output_dir": absolute(self.output_dir)}
        if isinstance(self.dataset, MnistData):
            fields = ("images_path", "labels_path", "test_images_path", "test_labels_path")
            data = self.dataset.model_copy(update={f: absolute(getattr(self.dataset, f)) for f in fields})
            updates["dataset"] = data
        return self.model_copy(update=updates)


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        key = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{key}: {e['msg']}")
    return "; ".join(lines)


def config_from_dict(data: dict | None) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as err:
        raise ConfigError(_describe(err)) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a YAML experiment document (empty means all defaults)."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"malformed YAML: {err}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping at the top level")
    return config_from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


def load_config(path) -> ExperimentConfig:
    """Read a config file; relative paths inside it resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config ({err.strerror})") from None
    return parse_config(text).resolve_paths(path.parent.resolve())
