"""Teacher pretraining and stage-wise student training.

``run_smskd`` trains the student through an ordered list of stages.  Each
stage uses one distillation method; from the second stage on, a frozen copy
of the student taken at the end of the previous stage anchors training
through a (TCP-weighted) KL term.  ``run_dla`` is the single-stage baseline
that sums two methods' losses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset, augment_flip
from .errors import ConfigError, ContractError, NumericError, ParameterError
from .losses import (
    AuxiliaryHeads,
    DistillBatchOutputs,
    MethodConfig,
    REFERENCE_MODES,
    build_heads,
    combine_terms,
    cross_entropy,
    distill_loss,
    stage_loss_terms,
)
from .metrics import evaluate
from .models import Model, checksum, forward, snapshot
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass
class StagePlan:
    method: MethodConfig
    epochs: int
    lambda_r: float = 0.5
    reference_mode: Optional[str] = None  # None: "none" for stage 1, "adaptive" afterwards


@dataclass
class TrainConfig:
    stages: list
    seed: int = 0
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    decay_epochs: tuple = (15, 18, 21)
    decay_factor: float = 0.1
    tau: float = 4.0
    tau_ref: float = 1.0
    tcp_source: str = "reference"
    restart_multiplier: float = 100.0
    restart_interval: Optional[int] = None
    reset_momentum: bool = True
    augment: bool = False

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("schedule needs at least one stage")
        if self.batch_size < 2:
            raise ConfigError(f"batch size must be >= 2 (relation losses need pairs), got {self.batch_size}")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ConfigError(f"decay epochs must be strictly increasing, got {list(self.decay_epochs)}")
        self.decay_epochs = tuple(self.decay_epochs)
        for m, plan in enumerate(self.stages, 1):
            if plan.epochs < 1:
                raise ConfigError(f"stage {m}: epochs must be >= 1, got {plan.epochs}")
            if plan.lambda_r < 0:
                raise ConfigError(f"stage {m}: lambda_r must be >= 0, got {plan.lambda_r}")
            if plan.reference_mode is None:
                plan.reference_mode = "none" if m == 1 else "adaptive"
            if plan.reference_mode not in REFERENCE_MODES:
                raise ConfigError(f"stage {m}: unknown reference mode {plan.reference_mode!r}")
            if m == 1 and plan.reference_mode != "none":
                raise ConfigError("stage 1 cannot use a reference model (reference_mode must be 'none')")
        if self.tcp_source not in ("reference", "teacher"):
            raise ConfigError(f"tcp_source must be 'reference' or 'teacher', got {self.tcp_source!r}")

    @property
    def total_epochs(self) -> int:
        return sum(p.epochs for p in self.stages)

    def stage_starts(self) -> list[int]:
        starts, acc = [], 0
        for p in self.stages:
            starts.append(acc)
            acc += p.epochs
        return starts


def _global_lr(epoch: int, config: TrainConfig) -> float:
    n = sum(1 for d in config.decay_epochs if epoch >= d)
    return config.lr * config.decay_factor**n


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Learning rate for a 0-based global epoch.

    The first two stages follow one continuous step schedule.  Every later
    stage restarts at ``restart_multiplier`` times the rate reached at the
    end of stage 2 and decays by ``decay_factor`` every ``restart_interval``
    epochs (default: a third of the stage), never dropping below that floor.
    """
    if not 0 <= epoch < config.total_epochs:
        raise ParameterError(f"epoch {epoch} outside the {config.total_epochs}-epoch budget")
    starts = config.stage_starts()
    if len(config.stages) <= 2 or epoch < starts[2]:
        return _global_lr(epoch, config)
    m = max(i for i, s in enumerate(starts) if s <= epoch)
    floor = _global_lr(starts[2] - 1, config)
    interval = config.restart_interval or max(1, config.stages[m].epochs // 3)
    local = epoch - starts[m]
    return max(floor, floor * config.restart_multiplier * config.decay_factor ** (local // interval))


def sgd_step(params: Sequence[Tensor], grads: Sequence, state: list, lr: float, momentum: float, weight_decay: float) -> None:
    """v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.

    ``state`` holds one velocity buffer (or ``None``) per parameter and is
    updated in place.  Parameters whose gradient is ``None`` are skipped.
    """
    lr, momentum, weight_decay = float(lr), float(momentum), float(weight_decay)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        d = g + weight_decay * p.data if weight_decay else g
        v = d if state[i] is None else momentum * state[i] + d
        state[i] = v
        p.data = p.data - lr * v


class SGD:
    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.state: list = [None] * len(self.params)

    def add_params(self, params: Sequence[Tensor]) -> None:
        self.params.extend(params)
        self.state.extend([None] * len(params))

    def step(self, lr: float) -> None:
        sgd_step(self.params, [p.grad for p in self.params], self.state, lr, self.momentum, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class RunRecord:
    epochs: list = field(default_factory=list)
    stage_starts: list = field(default_factory=list)
    stage_methods: list = field(default_factory=list)
    stage_accuracies: list = field(default_factory=list)
    student_start_checksums: list = field(default_factory=list)
    student_end_checksums: list = field(default_factory=list)
    reference_checksums: list = field(default_factory=list)  # (start, end) per stage, None for stage 1
    final_checksums: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list, repr=False)
    heads: Optional[AuxiliaryHeads] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "stage_starts": self.stage_starts,
            "stage_methods": self.stage_methods,
            "stage_accuracies": self.stage_accuracies,
            "student_start_checksums": self.student_start_checksums,
            "student_end_checksums": self.student_end_checksums,
            "reference_checksums": [list(c) if c else None for c in self.reference_checksums],
            "final_checksums": self.final_checksums,
        }

    @property
    def final_accuracy(self) -> Optional[float]:
        return self.stage_accuracies[-1] if self.stage_accuracies else None


class _FrozenOutputs:
    """Logits and taps of a frozen model over the whole training set, computed once."""

    def __init__(self, model: Model, inputs: np.ndarray, chunk: int = 256):
        logits, taps = [], []
        with no_grad():
            for s in range(0, len(inputs), chunk):
                z, t = forward(model, Tensor(np.asarray(inputs[s : s + chunk], dtype=model.dtype)))
                logits.append(z.data)
                taps.append([h.data for h in t])
        self.logits = np.concatenate(logits)
        self.taps = [np.concatenate([t[j] for t in taps]) for j in range(len(model.taps))]

    def batch(self, idx) -> tuple[Tensor, list[Tensor]]:
        return Tensor(self.logits[idx]), [Tensor(t[idx]) for t in self.taps]


def _frozen_forward(model: Model, x: np.ndarray) -> tuple[Tensor, list[Tensor]]:
    with no_grad():
        return forward(model, Tensor(np.asarray(x, dtype=model.dtype)))


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int):
    """Deterministic per-epoch shuffle; a trailing batch of one sample is dropped."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        if len(idx) >= 2:
            yield idx


def _check_frozen(model: Model, what: str) -> None:
    if any(p.requires_grad for p in model.parameters()):
        raise ContractError(f"{what} must be frozen (use snapshot())")


BatchCallback = Callable[[int, int, int, DistillBatchOutputs, dict, Tensor], None]


def _train_stage(
    student: Model,
    teacher: Optional[Model],
    reference: Optional[Model],
    train: Dataset,
    config: TrainConfig,
    optimizer: SGD,
    first_epoch: int,
    n_epochs: int,
    stage_index: int,
    loss_fn: Callable[[DistillBatchOutputs], dict],
    combine: Callable[[dict], Tensor],
    record: RunRecord,
    test: Optional[Dataset],
    callback: Optional[BatchCallback],
) -> None:
    cache_ok = not config.augment
    t_cache = _FrozenOutputs(teacher, train.inputs) if teacher is not None and cache_ok else None
    r_cache = _FrozenOutputs(reference, train.inputs) if reference is not None and cache_ok else None
    k = train.num_classes

    for epoch in range(first_epoch, first_epoch + n_epochs):
        lr = lr_at(epoch, config)
        sums: dict[str, float] = {}
        seen = 0
        for b, idx in enumerate(epoch_batches(len(train), config.batch_size, config.seed, epoch)):
            x = train.inputs[idx]
            if config.augment and x.ndim == 4:
                x = augment_flip(x, seed=int(np.random.default_rng([config.seed, epoch, b]).integers(2**31)))
            y = train.labels[idx]
            try:
                zs, s_taps = forward(student, Tensor(np.asarray(x, dtype=student.dtype)))
                if teacher is None:
                    zt, t_taps = Tensor(np.zeros((len(idx), k), student.dtype)), []
                elif t_cache is not None:
                    zt, t_taps = t_cache.batch(idx)
                else:
                    zt, t_taps = _frozen_forward(teacher, x)
                zr = None
                if reference is not None:
                    zr = r_cache.batch(idx)[0] if r_cache is not None else _frozen_forward(reference, x)[0]
                outputs = DistillBatchOutputs(zt, zs, y, config.tau, zr, t_taps, s_taps)
                terms = loss_fn(outputs)
                loss = combine(terms)
                if callback is not None:
                    callback(stage_index, epoch, b, outputs, terms, loss)
                optimizer.zero_grad()
                loss.backward()
            except NumericError as exc:
                raise NumericError(f"diverged at stage {stage_index}, epoch {epoch}, batch {b} (lr={lr:g}): {exc}") from exc
            optimizer.step(lr)
            n = len(idx)
            seen += n
            sums["loss"] = sums.get("loss", 0.0) + loss.item() * n
            for name, t in terms.items():
                if t is not None:
                    sums[name] = sums.get(name, 0.0) + t.item() * n
        row = {"epoch": epoch, "stage": stage_index, "lr": lr}
        row.update({name: v / max(seen, 1) for name, v in sorted(sums.items())})
        if test is not None:
            row["test_acc"] = evaluate(student, test)[0]
        record.epochs.append(row)
        log.debug("stage %d epoch %d: %s", stage_index, epoch, row)


def _stage_seed(seed: int, stage: int) -> int:
    return int(np.random.default_rng([seed, stage, 7919]).integers(2**31))


def run_smskd(
    teacher: Model,
    student: Model,
    train: Dataset,
    config: TrainConfig,
    test: Optional[Dataset] = None,
    callback: Optional[BatchCallback] = None,
    first_stage: int = 1,
) -> tuple[Model, RunRecord]:
    """Train ``student`` through the stages of ``config``; returns the student and its record.

    ``first_stage > 1`` resumes a student that already finished the earlier
    stages of this same config: its current parameters become the reference.
    """
    _check_frozen(teacher, "teacher")
    if not 1 <= first_stage <= len(config.stages):
        raise ConfigError(f"first_stage must be in 1..{len(config.stages)}, got {first_stage}")
    if first_stage > 1 and not config.reset_momentum:
        raise ConfigError("resuming mid-schedule needs reset_momentum (optimizer state is not carried over)")
    record = RunRecord()
    reference: Optional[Model] = snapshot(student) if first_stage > 1 else None
    optimizer: Optional[SGD] = None
    starts = config.stage_starts()
    for m, plan in enumerate(config.stages, 1):
        if m < first_stage:
            continue
        if m == 1 and plan.reference_mode != "none":
            raise ConfigError("stage 1 cannot use a reference model")
        heads = build_heads(plan.method, teacher.tap_shapes(), student.tap_shapes(), _stage_seed(config.seed, m), student.dtype)
        if optimizer is None or config.reset_momentum:
            optimizer = SGD(student.parameters() + heads.parameters(), config.momentum, config.weight_decay)
        else:
            optimizer.params = optimizer.params[: len(student.parameters())]
            optimizer.state = optimizer.state[: len(student.parameters())]
            optimizer.add_params(heads.parameters())
        active_ref = reference if plan.reference_mode != "none" else None

        def loss_fn(outputs, plan=plan, heads=heads, m=m):
            return stage_loss_terms(outputs, plan.method, m, plan.reference_mode, heads, config.tau_ref, config.tcp_source)

        def combine(terms, plan=plan):
            return combine_terms(terms, plan.method.lambda_c, plan.lambda_r)

        record.stage_starts.append(starts[m - 1])
        record.stage_methods.append(plan.method.method)
        record.student_start_checksums.append(checksum(student))
        ref_start = checksum(reference) if reference is not None else None
        _train_stage(student, teacher, active_ref, train, config, optimizer, starts[m - 1], plan.epochs, m,
                     loss_fn, combine, record, test, callback)
        record.reference_checksums.append((ref_start, checksum(reference)) if reference is not None else None)
        record.student_end_checksums.append(checksum(student))
        if test is not None:
            record.stage_accuracies.append(evaluate(student, test)[0])
        reference = snapshot(student)
        record.snapshots.append(reference)
        record.heads = heads
    record.final_checksums = {
        "student": checksum(student),
        "reference": checksum(reference),
        "teacher": checksum(teacher),
    }
    return student, record


def run_baseline(
    teacher: Model,
    student: Model,
    train: Dataset,
    method: MethodConfig,
    config: TrainConfig,
    test: Optional[Dataset] = None,
    callback: Optional[BatchCallback] = None,
) -> tuple[Model, RunRecord]:
    """One method over the whole epoch budget (``CE`` gives the plain student)."""
    single = TrainConfig(
        [StagePlan(method, config.total_epochs, 0.0, "none")], config.seed, config.batch_size, config.lr,
        config.momentum, config.weight_decay, config.decay_epochs, config.decay_factor, config.tau,
        config.tau_ref, config.tcp_source, augment=config.augment,
    )
    return run_smskd(teacher, student, train, single, test, callback)


def run_dla(
    teacher: Model,
    student: Model,
    train: Dataset,
    config_a: MethodConfig,
    config_b: MethodConfig,
    config: TrainConfig,
    test: Optional[Dataset] = None,
    callback: Optional[BatchCallback] = None,
) -> tuple[Model, RunRecord]:
    """Single stage over the whole epoch budget on the summed losses of two methods."""
    _check_frozen(teacher, "teacher")
    record = RunRecord()
    seed = _stage_seed(config.seed, 1)
    heads_a = build_heads(config_a, teacher.tap_shapes(), student.tap_shapes(), seed, student.dtype)
    heads_b = build_heads(config_b, teacher.tap_shapes(), student.tap_shapes(), seed + 1, student.dtype)
    optimizer = SGD(student.parameters() + heads_a.parameters() + heads_b.parameters(), config.momentum, config.weight_decay)

    def loss_fn(outputs):
        return {
            "distill": distill_loss(outputs, config_a, heads_a) + distill_loss(outputs, config_b, heads_b),
            "cls": cross_entropy(outputs.student_logits, outputs.labels),
            "ref": None,
        }

    def combine(terms):
        return combine_terms(terms, config_a.lambda_c, 0.0)

    record.stage_starts.append(0)
    record.stage_methods.append(f"{config_a.method}+{config_b.method}")
    record.student_start_checksums.append(checksum(student))
    _train_stage(student, teacher, None, train, config, optimizer, 0, config.total_epochs, 1,
                 loss_fn, combine, record, test, callback)
    record.reference_checksums.append(None)
    record.student_end_checksums.append(checksum(student))
    if test is not None:
        record.stage_accuracies.append(evaluate(student, test)[0])
    record.heads = heads_a
    record.final_checksums = {"student": checksum(student), "teacher": checksum(teacher)}
    return student, record


def pretrain_teacher(
    model: Model,
    train: Dataset,
    config: TrainConfig,
    test: Optional[Dataset] = None,
    epochs: Optional[int] = None,
) -> Model:
    """Cross-entropy training under the same optimizer protocol; returns a frozen copy.

    ``epochs`` overrides the budget implied by ``config`` (0 leaves the model untouched).
    """
    total = config.total_epochs if epochs is None else epochs
    if total < 0:
        raise ParameterError(f"epochs must be >= 0, got {total}")
    if total == 0:
        return snapshot(model)
    plan = StagePlan(MethodConfig("CE"), total)
    cfg = TrainConfig(
        [plan], config.seed, config.batch_size, config.lr, config.momentum, config.weight_decay,
        config.decay_epochs, config.decay_factor, augment=config.augment,
    )
    optimizer = SGD(model.parameters(), cfg.momentum, cfg.weight_decay)
    record = RunRecord()

    def loss_fn(outputs):
        return {"distill": None, "cls": cross_entropy(outputs.student_logits, outputs.labels), "ref": None}

    def combine(terms):
        return terms["cls"]

    _train_stage(model, None, None, train, cfg, optimizer, 0, total, 1, loss_fn, combine, record, test, None)
    return snapshot(model)
