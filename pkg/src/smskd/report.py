"""Deterministic report files: summary JSON plus CSV tables.

No timestamps or host details are written, so emitting the same inputs
twice yields byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .metrics import ComparisonReport
from .train import RunRecord

CURVE_FIELDS = ("epoch", "stage", "lr", "loss", "distill", "cls", "ref", "test_acc")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def _csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def curves_csv(record: RunRecord) -> str:
    """One row per recorded epoch."""
    rows = [CURVE_FIELDS]
    rows += [[e.get(k) for k in CURVE_FIELDS] for e in record.epochs]
    return _csv(rows)


def iou_csv(report: ComparisonReport) -> str:
    rows = [["run", *report.names]]
    rows += [[name, *row] for name, row in zip(report.names, report.iou_matrix)]
    return _csv(rows)


def venn_csv(report: ComparisonReport) -> str:
    rows = [["run", "anchor", "forgotten", "acquired", "retained", "forgotten_pct", "acquired_pct"]]
    for name, v in report.venn_vs_anchor.items():
        rows.append([name, report.anchor, v.forgotten, v.acquired, v.retained, v.forgotten_pct, v.acquired_pct])
    return _csv(rows)


def grid_csv(lambdas: Sequence[float], transitions: Sequence[int], values: Sequence[Sequence[float]]) -> str:
    """Matrix with one row per lambda_r and one column per transition epoch."""
    if len(values) != len(lambdas) or any(len(r) != len(transitions) for r in values):
        raise ValueError(f"grid values must be {len(lambdas)}x{len(transitions)}")
    rows = [["lambda_r\\transition", *transitions]]
    rows += [[lam, *row] for lam, row in zip(lambdas, values)]
    return _csv(rows)


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def emit_report(
    out_dir,
    report: Optional[ComparisonReport] = None,
    records: Optional[Mapping[str, RunRecord]] = None,
    grid: Optional[dict] = None,
    extra: Optional[dict] = None,
) -> list[Path]:
    """Write summary.json, curves_<run>.csv, iou.csv, venn.csv and grid*.csv; returns the paths.

    ``grid`` is ``{"lambda_r": [...], "transition": [...], "accuracy": [[...]], ...}``;
    every matrix-valued key besides the two axes gets its own CSV.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = dict(records or {})
    files: dict[str, str] = {}
    summary: dict = {"runs": {name: rec.to_dict() | {"final_accuracy": rec.final_accuracy} for name, rec in records.items()}}
    for name, rec in records.items():
        files[f"curves_{_safe(name)}.csv"] = curves_csv(rec)
    if report is not None:
        summary["comparison"] = report.to_dict()
        files["iou.csv"] = iou_csv(report)
        files["venn.csv"] = venn_csv(report)
    if grid is not None:
        summary["grid"] = grid
        for key, values in grid.items():
            if key in ("lambda_r", "transition") or not isinstance(values, list) or not values or not isinstance(values[0], list):
                continue
            fname = "grid.csv" if key == "accuracy" else f"grid_{_safe(key)}.csv"
            files[fname] = grid_csv(grid["lambda_r"], grid["transition"], values)
    if extra:
        summary["extra"] = extra
    files["summary.json"] = json.dumps(summary, sort_keys=True, indent=2, default=_json_default) + "\n"
    paths = []
    for fname in sorted(files):
        p = out / fname
        p.write_text(files[fname])
        paths.append(p)
    return paths


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
