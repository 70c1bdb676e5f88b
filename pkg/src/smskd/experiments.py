"""Experiment drivers shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint, restore, save_checkpoint
from .config import ExperimentConfig, StageSection, serialize_config
from .data import Dataset, load_dataset
from .errors import ConfigError
from .losses import MethodConfig
from .metrics import CorrectnessVector, RunSummary, compare_runs, evaluate, iou
from .models import Model, build_from_spec, snapshot
from .report import emit_report
from .train import RunRecord, pretrain_teacher, run_baseline, run_dla, run_smskd

log = logging.getLogger(__name__)

TEACHER_SEED_OFFSET = 1000


@dataclass
class Prepared:
    train: Dataset
    test: Dataset
    teacher: Model
    teacher_accuracy: float


def run_dir(cfg: ExperimentConfig, seed: int, root: Optional[str] = None) -> Path:
    return Path(root or cfg.output_dir) / f"seed{seed}"


def _build(cfg: ExperimentConfig, which: str, data: Dataset, seed: int) -> Model:
    arch = getattr(cfg, which).arch.model_dump()
    return build_from_spec(arch, data.sample_shape, data.num_classes, seed, cfg.dtype)


def build_teacher(cfg: ExperimentConfig, data: Dataset, seed: int) -> Model:
    return _build(cfg, "teacher", data, seed + TEACHER_SEED_OFFSET)


def build_student(cfg: ExperimentConfig, data: Dataset, seed: int) -> Model:
    return _build(cfg, "student", data, seed)


def teacher_checkpoint_path(cfg: ExperimentConfig, seed: int, root: Optional[str] = None) -> Path:
    if cfg.teacher.checkpoint:
        return Path(cfg.teacher.checkpoint.format(seed=seed))
    return run_dir(cfg, seed, root) / "teacher.smsk"


def prepare(cfg: ExperimentConfig, seed: int, root: Optional[str] = None, train_teacher: bool = True) -> Prepared:
    """Load data and obtain the teacher: from its checkpoint if present, else by pretraining."""
    train, test = load_dataset(cfg.data.as_dict(), seed)
    teacher = build_teacher(cfg, train, seed)
    path = teacher_checkpoint_path(cfg, seed, root)
    if path.exists():
        restore(teacher, load_checkpoint(path))
        teacher = snapshot(teacher)
    elif cfg.teacher.checkpoint:
        raise ConfigError(f"teacher.checkpoint: file {path} does not exist")
    elif train_teacher:
        teacher = pretrain_teacher(teacher, train, cfg.train_config(seed), epochs=cfg.teacher.epochs)
    else:
        raise ConfigError(f"no teacher checkpoint at {path}; run train-teacher first")
    return Prepared(train, test, teacher, evaluate(teacher, test)[0])


def _summary(model: Model, test: Dataset, name: str) -> RunSummary:
    acc, cv = evaluate(model, test, name)
    return RunSummary(name, acc, cv)


def _evaluation(summary: RunSummary) -> dict:
    return {
        "accuracy": summary.accuracy,
        "fingerprint": summary.correct.fingerprint,
        "correct": "".join("1" if b else "0" for b in summary.correct.bits),
    }


def correctness_from_summary(name: str, evaluation: dict) -> RunSummary:
    bits = np.array([c == "1" for c in evaluation["correct"]], dtype=bool)
    return RunSummary(name, evaluation["accuracy"], CorrectnessVector(name, "test", bits, evaluation["fingerprint"]))


def _write_run(out: Path, cfg: ExperimentConfig, student: Model, record: RunRecord, summaries, name: str, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(serialize_config(cfg))
    save_checkpoint(out / f"{name}.smsk", student, record.heads)
    report = compare_runs(summaries, anchor=summaries[0].name) if len(summaries) > 1 else None
    final = summaries[-1]
    emit_report(out, report, {name: record}, extra={"evaluation": _evaluation(final), **(extra or {})})


def train_teacher(cfg: ExperimentConfig, seed: int, root: Optional[str] = None) -> tuple[Path, float]:
    train, test = load_dataset(cfg.data.as_dict(), seed)
    teacher = pretrain_teacher(build_teacher(cfg, train, seed), train, cfg.train_config(seed), epochs=cfg.teacher.epochs)
    out = run_dir(cfg, seed, root)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "teacher.smsk"
    save_checkpoint(path, teacher)
    return path, evaluate(teacher, test)[0]


def distill(cfg: ExperimentConfig, seed: int, root: Optional[str] = None, prep: Optional[Prepared] = None):
    """Full SMSKD schedule; writes ``smskd.smsk`` and report files into the seed's run directory."""
    prep = prep or prepare(cfg, seed, root)
    student = build_student(cfg, prep.train, seed)
    student, record = run_smskd(prep.teacher, student, prep.train, cfg.train_config(seed), prep.test)
    summaries = [_summary(s, prep.test, f"stage{m}") for m, s in enumerate(record.snapshots, 1)]
    out = run_dir(cfg, seed, root)
    _write_run(out, cfg, student, record, summaries, "smskd", {"teacher_accuracy": prep.teacher_accuracy})
    return student, record, summaries[-1].accuracy


def method_config_for(cfg: ExperimentConfig, method: str) -> MethodConfig:
    """The configured settings for ``method`` if it appears in the schedule, else defaults."""
    for i, s in enumerate(cfg.schedule):
        if s.method == method:
            return cfg.method_config(i)
    return MethodConfig(method, cfg.schedule[0].lambda_c)


def baseline(cfg: ExperimentConfig, seed: int, method: str, root: Optional[str] = None, prep: Optional[Prepared] = None):
    prep = prep or prepare(cfg, seed, root)
    student, record = run_baseline(
        prep.teacher, build_student(cfg, prep.train, seed), prep.train, method_config_for(cfg, method), cfg.train_config(seed), prep.test
    )
    summary = _summary(student, prep.test, method)
    _write_run(run_dir(cfg, seed, root) / f"baseline_{method}", cfg, student, record, [summary], "student")
    return student, record, summary.accuracy


def dla(cfg: ExperimentConfig, seed: int, methods: Sequence[str], root: Optional[str] = None, prep: Optional[Prepared] = None):
    if len(methods) != 2:
        raise ConfigError(f"dla needs exactly two methods, got {list(methods)}")
    prep = prep or prepare(cfg, seed, root)
    a, b = (method_config_for(cfg, m) for m in methods)
    student, record = run_dla(prep.teacher, build_student(cfg, prep.train, seed), prep.train, a, b, cfg.train_config(seed), prep.test)
    summary = _summary(student, prep.test, "+".join(methods))
    _write_run(run_dir(cfg, seed, root) / f"dla_{'_'.join(methods)}", cfg, student, record, [summary], "student")
    return student, record, summary.accuracy


def desk_comparison(cfg: ExperimentConfig, seeds: Sequence[int]) -> dict:
    """Plain, single-method, SMSKD and DLA students per seed (nothing written to disk).

    Returns ``{"per_seed": {seed: {run: acc%}}, "mean": {run: acc%}}``.
    """
    methods = [s.method for s in cfg.schedule]
    per_seed = {}
    for seed in seeds:
        prep = prepare(cfg, seed)
        tc = cfg.train_config(seed)
        accs = {"teacher": prep.teacher_accuracy}

        def fresh():
            return build_student(cfg, prep.train, seed)

        accs["plain"] = evaluate(run_baseline(prep.teacher, fresh(), prep.train, MethodConfig("CE"), tc)[0], prep.test)[0]
        for m in dict.fromkeys(methods):
            s, _ = run_baseline(prep.teacher, fresh(), prep.train, method_config_for(cfg, m), tc)
            accs[m] = evaluate(s, prep.test)[0]
        accs["SMSKD"] = evaluate(run_smskd(prep.teacher, fresh(), prep.train, tc)[0], prep.test)[0]
        if len(methods) >= 2:
            a, b = method_config_for(cfg, methods[0]), method_config_for(cfg, methods[1])
            accs["DLA"] = evaluate(run_dla(prep.teacher, fresh(), prep.train, a, b, tc)[0], prep.test)[0]
        per_seed[seed] = {k: 100.0 * v for k, v in accs.items()}
        log.info("seed %d: %s", seed, per_seed[seed])
    names = list(next(iter(per_seed.values())))
    mean = {n: float(np.mean([per_seed[s][n] for s in seeds])) for n in names}
    return {"per_seed": per_seed, "mean": mean}


def _two_stage(cfg: ExperimentConfig, transition: int, lambda_r: float) -> list[StageSection]:
    if len(cfg.schedule) < 2:
        raise ConfigError("schedule: the grid needs a two-stage schedule")
    total = cfg.schedule[0].epochs + cfg.schedule[1].epochs
    if not 0 < transition < total:
        raise ConfigError(f"transition epoch {transition} must lie strictly inside the {total}-epoch budget")
    first = cfg.schedule[0].model_copy(update={"epochs": transition})
    second = cfg.schedule[1].model_copy(update={"epochs": total - transition, "lambda_r": lambda_r})
    return [first, second]


def clone_trainable(model: Model) -> Model:
    copy = snapshot(model)
    for p in copy.parameters():
        p.requires_grad = True
    copy.frozen = False
    return copy


def lambda_transition_grid(
    cfg: ExperimentConfig,
    seed: int,
    lambdas: Sequence[float],
    transitions: Sequence[int],
    prep: Optional[Prepared] = None,
) -> dict:
    """Final accuracy and IoU(stage-1 snapshot, final) for every (lambda_r, transition).

    Stage 1 does not depend on lambda_r, so it is trained once per transition
    epoch and every lambda_r resumes from a copy of it.
    """
    prep = prep or prepare(cfg, seed)
    acc = [[0.0] * len(transitions) for _ in lambdas]
    overlap = [[0.0] * len(transitions) for _ in lambdas]
    stage1_acc = []
    for j, t in enumerate(transitions):
        stage1_cfg = cfg.train_config(seed, _two_stage(cfg, t, 0.0)[:1])
        after1, _ = run_smskd(prep.teacher, build_student(cfg, prep.train, seed), prep.train, stage1_cfg)
        a1, c1 = evaluate(after1, prep.test)
        stage1_acc.append(100.0 * a1)
        for i, lam in enumerate(lambdas):
            tc = cfg.train_config(seed, _two_stage(cfg, t, lam))
            final, _ = run_smskd(prep.teacher, clone_trainable(after1), prep.train, tc, first_stage=2)
            a2, c2 = evaluate(final, prep.test)
            acc[i][j] = 100.0 * a2
            overlap[i][j] = iou(c1, c2)
    return {
        "lambda_r": [float(v) for v in lambdas],
        "transition": [int(v) for v in transitions],
        "accuracy": acc,
        "iou": overlap,
        "stage1_accuracy": stage1_acc,
    }


def extended_schedule(cfg: ExperimentConfig, count: int) -> list[StageSection]:
    """``count`` stages: the configured ones, then further stages cycling through the
    configured methods with the last stage's length and an adaptive reference."""
    if count < 1:
        raise ConfigError(f"stage count must be >= 1, got {count}")
    base = list(cfg.schedule)
    out = base[:count]
    last = base[-1]
    while len(out) < count:
        src = base[len(out) % len(base)]
        out.append(src.model_copy(update={
            "epochs": last.epochs,
            "lambda_r": last.lambda_r,
            "reference_mode": last.reference_mode or "adaptive",
        }))
    return out


def multi_stage(cfg: ExperimentConfig, seed: int, count: int, root: Optional[str] = None, prep: Optional[Prepared] = None):
    prep = prep or prepare(cfg, seed, root)
    schedule = extended_schedule(cfg, count)
    tc = cfg.train_config(seed, schedule)
    student, record = run_smskd(prep.teacher, build_student(cfg, prep.train, seed), prep.train, tc, prep.test)
    summaries = [_summary(s, prep.test, f"stage{m}") for m, s in enumerate(record.snapshots, 1)]
    staged = cfg.model_copy(update={"schedule": schedule})
    _write_run(run_dir(cfg, seed, root) / f"stages{count}", staged, student, record, summaries, "student")
    return record
