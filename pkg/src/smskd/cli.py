"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numeric divergence.  ``SMSKD_OUTPUT_DIR`` overrides the config's output
directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as X
from .config import load_config
from .errors import ConfigError, FormatError, SMSKDError
from .gradsuite import run_suite
from .metrics import compare_runs
from .report import emit_report

OUTPUT_ENV = "SMSKD_OUTPUT_DIR"
GRAD_TOLERANCE = 1e-4


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _root(cfg) -> str:
    return os.environ.get(OUTPUT_ENV) or cfg.output_dir


def cmd_train_teacher(args) -> int:
    cfg = load_config(args.config)
    for seed in cfg.seeds:
        path, acc = X.train_teacher(cfg, seed, _root(cfg))
        print(f"seed {seed}: teacher test accuracy {100 * acc:.2f}% -> {path}")
    return 0


def cmd_distill(args) -> int:
    cfg = load_config(args.config)
    for seed in cfg.seeds:
        _, record, acc = X.distill(cfg, seed, _root(cfg))
        stages = ", ".join(f"{m}:{100 * a:.2f}%" for m, a in zip(record.stage_methods, record.stage_accuracies))
        print(f"seed {seed}: SMSKD final {100 * acc:.2f}% (per stage {stages})")
    return 0


def cmd_baseline(args) -> int:
    cfg = load_config(args.config)
    for seed in cfg.seeds:
        _, _, acc = X.baseline(cfg, seed, args.method, _root(cfg))
        print(f"seed {seed}: {args.method} student {100 * acc:.2f}%")
    return 0


def cmd_dla(args) -> int:
    cfg = load_config(args.config)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for seed in cfg.seeds:
        _, _, acc = X.dla(cfg, seed, methods, _root(cfg))
        print(f"seed {seed}: DLA({'+'.join(methods)}) student {100 * acc:.2f}%")
    return 0


def cmd_grid(args) -> int:
    cfg = load_config(args.config)
    grids = [X.lambda_transition_grid(cfg, seed, args.lambda_r, args.transition) for seed in cfg.seeds]
    mean = {
        "lambda_r": grids[0]["lambda_r"],
        "transition": grids[0]["transition"],
        "accuracy": np.mean([g["accuracy"] for g in grids], axis=0).tolist(),
        "iou": np.mean([g["iou"] for g in grids], axis=0).tolist(),
    }
    out = Path(_root(cfg)) / "grid"
    emit_report(out, grid=mean, extra={"per_seed": {str(s): g for s, g in zip(cfg.seeds, grids)}})
    print("lambda_r \\ transition " + " ".join(f"{t:>8d}" for t in mean["transition"]))
    for lam, row in zip(mean["lambda_r"], mean["accuracy"]):
        print(f"{lam:>22g} " + " ".join(f"{v:8.2f}" for v in row))
    print(f"written to {out}")
    return 0


def cmd_stages(args) -> int:
    cfg = load_config(args.config)
    for seed in cfg.seeds:
        record = X.multi_stage(cfg, seed, args.count, _root(cfg))
        for m, (method, acc) in enumerate(zip(record.stage_methods, record.stage_accuracies), 1):
            start = record.stage_starts[m - 1]
            lr = next(e["lr"] for e in record.epochs if e["epoch"] == start)
            print(f"seed {seed} stage {m} ({method}, start lr {lr:g}): {100 * acc:.2f}%")
    return 0


def cmd_report(args) -> int:
    runs = []
    for d in args.runs:
        path = Path(d) / "summary.json"
        try:
            summary = json.loads(path.read_text())
            evaluation = summary["extra"]["evaluation"]
        except (OSError, ValueError, KeyError) as exc:
            raise FormatError(f"{path}: not a run summary ({exc})") from exc
        runs.append(X.correctness_from_summary(str(d), evaluation))
    report = compare_runs(runs, baselines=[runs[0].name], anchor=runs[0].name)
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "report")
    emit_report(out, report)
    for name in report.names:
        v = report.venn_vs_anchor[name]
        print(f"{name}: {report.accuracy[name]:.2f}% ({report.deltas[runs[0].name][name]:+.2f}); {v.describe()}")
    print(f"written to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    errors = run_suite(range(args.seeds))
    worst = 0.0
    for name, err in errors.items():
        flag = "ok" if err <= GRAD_TOLERANCE else "FAIL"
        print(f"{name:18s} max rel err {err:.3e}  {flag}")
        worst = max(worst, err)
    return 0 if worst <= GRAD_TOLERANCE else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smskd", description="Sequential multi-stage knowledge distillation at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="YAML experiment config")
        return sp

    with_config("train-teacher", "pretrain and save the teacher for every seed").set_defaults(fn=cmd_train_teacher)
    with_config("distill", "run the configured multi-stage schedule").set_defaults(fn=cmd_distill)
    sp = with_config("baseline", "train with a single method over the whole budget (CE: plain student)")
    sp.add_argument("--method", required=True)
    sp.set_defaults(fn=cmd_baseline)
    sp = with_config("dla", "train on the summed losses of two methods in one stage")
    sp.add_argument("--methods", required=True, help="two comma-separated method names, e.g. AT,KD")
    sp.set_defaults(fn=cmd_dla)
    sp = with_config("grid", "sweep lambda_r and the transition epoch")
    sp.add_argument("--lambda-r", required=True, type=_floats)
    sp.add_argument("--transition", required=True, type=_ints)
    sp.set_defaults(fn=cmd_grid)
    sp = with_config("stages", "run an M-stage schedule with learning-rate restarts")
    sp.add_argument("--count", required=True, type=int)
    sp.set_defaults(fn=cmd_stages)
    sp = sub.add_parser("report", help="compare finished runs (accuracy, IoU, forgotten/acquired)")
    sp.add_argument("--runs", required=True, nargs="+", help="run directories; the first is the anchor")
    sp.add_argument("--out", help="output directory (default: $SMSKD_OUTPUT_DIR or ./report)")
    sp.set_defaults(fn=cmd_report)
    sp = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    sp.add_argument("--seeds", type=int, default=10)
    sp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except SMSKDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
