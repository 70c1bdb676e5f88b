"""Experiment configuration: YAML text validated against a strict schema."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError, ParameterError
from .losses import METHODS, MethodConfig, REFERENCE_MODES
from .train import StagePlan, TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Strict):
    kind: Literal["blobs", "spirals", "patterned", "cifar"]
    num_classes: int = Field(10, ge=2)
    train_per_class: Optional[int] = Field(None, ge=1)
    test_per_class: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = None
    # generator knobs
    dim: Optional[int] = Field(None, ge=1)
    spread: Optional[float] = Field(None, ge=0)
    noise: Optional[float] = Field(None, ge=0)
    max_shift: Optional[int] = Field(None, ge=0)
    side: Optional[int] = Field(None, ge=4)
    channels: Optional[int] = Field(None, ge=1)
    template_seed: Optional[int] = None
    normalize: Optional[Literal["standardize", "channel_mean"]] = None  # None: channel_mean for images
    # cifar
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    variant: Literal["cifar10", "cifar100"] = "cifar10"
    limit: Optional[int] = Field(None, ge=1)

    def as_dict(self) -> dict:
        return self.model_dump(exclude_none=True)


class ArchSection(_Strict):
    kind: Literal["mlp", "tinyconv"]
    hidden: list[int] = Field(default_factory=list)
    channels: list[int] = Field(default_factory=list)


class TeacherSection(_Strict):
    arch: ArchSection
    epochs: Optional[int] = Field(None, ge=0)  # None: same budget as the student schedule
    checkpoint: Optional[str] = None


class StudentSection(_Strict):
    arch: ArchSection


class StageSection(_Strict):
    method: str
    epochs: int
    lambda_c: float = 1.0
    lambda_r: float = 0.5
    weight: Optional[float] = None
    params: dict[str, float] = Field(default_factory=dict)
    taps: Literal["last", "all"] = "last"
    project: bool = False
    reference_mode: Optional[str] = None


class OptimizerSection(_Strict):
    batch_size: int = 64
    lr: float = Field(0.05, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    decay_epochs: list[int] = Field(default_factory=lambda: [15, 18, 21])
    decay_factor: float = Field(0.1, gt=0, le=1)
    reset_momentum: bool = True
    restart_multiplier: float = Field(100.0, gt=0)
    restart_interval: Optional[int] = Field(None, ge=1)
    augment: bool = False


class DistillSection(_Strict):
    tau: float = Field(4.0, gt=0)
    tau_ref: float = Field(1.0, gt=0)
    tcp_source: Literal["reference", "teacher"] = "reference"


class ExperimentConfig(_Strict):
    data: DataSection
    teacher: TeacherSection
    student: StudentSection
    schedule: list[StageSection]
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    distill: DistillSection = Field(default_factory=DistillSection)
    seeds: list[int] = Field(default_factory=lambda: [0])
    output_dir: str = "runs"
    dtype: Literal["f32", "f64"] = "f32"

    @property
    def total_epochs(self) -> int:
        return sum(s.epochs for s in self.schedule)

    def method_config(self, index: int) -> MethodConfig:
        s = self.schedule[index]
        return MethodConfig(s.method, s.lambda_c, s.weight, dict(s.params), s.taps, s.project)

    def stage_plans(self, schedule: Optional[list[StageSection]] = None) -> list[StagePlan]:
        plans = []
        for s in schedule if schedule is not None else self.schedule:
            mc = MethodConfig(s.method, s.lambda_c, s.weight, dict(s.params), s.taps, s.project)
            plans.append(StagePlan(mc, s.epochs, s.lambda_r, s.reference_mode))
        return plans

    def train_config(self, seed: int, schedule: Optional[list[StageSection]] = None) -> TrainConfig:
        o, d = self.optimizer, self.distill
        return TrainConfig(
            self.stage_plans(schedule), seed, o.batch_size, o.lr, o.momentum, o.weight_decay,
            tuple(o.decay_epochs), o.decay_factor, d.tau, d.tau_ref, d.tcp_source,
            o.restart_multiplier, o.restart_interval, o.reset_momentum, o.augment,
        )


def _path(loc) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def _semantic_checks(cfg: ExperimentConfig) -> None:
    def fail(path: str, msg: str):
        raise ConfigError(f"{path}: {msg}")

    if not cfg.schedule:
        fail("schedule", "at least one stage is required")
    if not cfg.seeds:
        fail("seeds", "at least one seed is required")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        fail("seeds", f"duplicate seeds {cfg.seeds}")
    for i, s in enumerate(cfg.schedule):
        p = f"schedule[{i}]"
        if s.method not in METHODS:
            fail(f"{p}.method", f"unknown method {s.method!r}; expected one of {list(METHODS)}")
        if s.epochs < 1:
            fail(f"{p}.epochs", f"must be >= 1, got {s.epochs}")
        for key in ("lambda_c", "lambda_r"):
            if getattr(s, key) < 0:
                fail(f"{p}.{key}", f"must be >= 0, got {getattr(s, key)}")
        if s.weight is not None and s.weight < 0:
            fail(f"{p}.weight", f"must be >= 0, got {s.weight}")
        if s.reference_mode is not None and s.reference_mode not in REFERENCE_MODES:
            fail(f"{p}.reference_mode", f"must be one of {list(REFERENCE_MODES)}, got {s.reference_mode!r}")
        if i == 0 and s.reference_mode not in (None, "none"):
            fail(f"{p}.reference_mode", "stage 1 has no reference model; use 'none' or omit")
        try:
            MethodConfig(s.method, s.lambda_c, s.weight, dict(s.params), s.taps, s.project)
        except ParameterError as exc:
            fail(p, str(exc))
    o = cfg.optimizer
    if o.batch_size < 2:
        fail("optimizer.batch_size", f"must be >= 2, got {o.batch_size}")
    d = o.decay_epochs
    for j in range(1, len(d)):
        if d[j] <= d[j - 1]:
            fail(f"optimizer.decay_epochs[{j}]", f"decay epochs must be strictly increasing, got {d}")
    for j, e in enumerate(d):
        if not 0 < e < cfg.total_epochs:
            fail(f"optimizer.decay_epochs[{j}]", f"{e} lies outside the {cfg.total_epochs}-epoch schedule")
    data = cfg.data
    if data.kind == "cifar":
        for key in ("train_path", "test_path"):
            if not getattr(data, key):
                fail(f"data.{key}", "required for cifar data")
    else:
        for key in ("train_per_class", "test_per_class"):
            if getattr(data, key) is None:
                fail(f"data.{key}", f"required for {data.kind} data")
    for section in ("teacher", "student"):
        arch = getattr(cfg, section).arch
        sizes = arch.hidden if arch.kind == "mlp" else arch.channels
        if arch.kind == "tinyconv" and not sizes:
            fail(f"{section}.arch.channels", "tinyconv needs at least one conv block")
        if any(v < 1 for v in sizes):
            fail(f"{section}.arch", f"layer sizes must be >= 1, got {sizes}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a YAML experiment config; errors name the offending key path."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<root>: config must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(f"{_path(first['loc'])}: {first['msg']}") from exc
    _semantic_checks(cfg)
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True, default_flow_style=False)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def desk_config_text(output_dir: str = "runs/desk") -> str:
    """The desk-scale AT -> KD protocol used by the acceptance experiments."""
    return f"""\
data:
  kind: patterned
  num_classes: 10
  train_per_class: 100
  test_per_class: 50
  channels: 3
  side: 8
  noise: 0.6
  max_shift: 2
teacher:
  arch: {{kind: tinyconv, channels: [16, 32]}}
student:
  arch: {{kind: tinyconv, channels: [4, 8]}}
schedule:
  - {{method: AT, epochs: 15}}
  - {{method: KD, epochs: 9, lambda_r: 0.5, reference_mode: adaptive}}
optimizer:
  batch_size: 64
  lr: 0.05
  momentum: 0.9
  weight_decay: 0.0005
  decay_epochs: [15, 18, 21]
  decay_factor: 0.1
distill:
  tau: 4.0
  tau_ref: 1.0
seeds: [0, 1, 2]
output_dir: {output_dir}
"""
