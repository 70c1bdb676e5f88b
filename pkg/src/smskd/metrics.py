"""Accuracy, correct-set overlap and forgetting statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from . import functional as F
from .data import Dataset
from .errors import ContractError, ShapeError
from .models import Model, forward
from .tensor import Tensor, no_grad


@dataclass
class CorrectnessVector:
    model_id: str
    split: str
    bits: np.ndarray
    fingerprint: str = ""

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def count(self) -> int:
        return int(self.bits.sum())


def predict_logits(model: Model, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    chunks = []
    with no_grad():
        for start in range(0, len(inputs), batch_size):
            x = Tensor(np.asarray(inputs[start : start + batch_size], dtype=model.dtype))
            chunks.append(forward(model, x)[0].data)
    if not chunks:
        return np.zeros((0, model.num_classes), dtype=model.dtype)
    return np.concatenate(chunks)


def evaluate(model: Model, dataset: Dataset, model_id: str = "model") -> tuple[float, CorrectnessVector]:
    """Argmax accuracy; ties go to the lowest class index."""
    if model.num_classes != dataset.num_classes:
        raise ShapeError(f"model predicts {model.num_classes} classes but dataset has {dataset.num_classes}")
    logits = predict_logits(model, dataset.inputs)
    bits = logits.argmax(axis=1) == dataset.labels
    acc = float(bits.mean()) if len(bits) else 0.0
    return acc, CorrectnessVector(model_id, dataset.split, bits, dataset.fingerprint())


def _aligned(a: CorrectnessVector, b: CorrectnessVector) -> None:
    if a.fingerprint != b.fingerprint or len(a) != len(b):
        raise ContractError(
            f"correctness vectors refer to different datasets: {a.model_id}@{a.fingerprint} vs {b.model_id}@{b.fingerprint}"
        )


def iou(a: CorrectnessVector, b: CorrectnessVector) -> float:
    """|A & B| / |A | B| as a percentage; 100 when both sets are empty."""
    _aligned(a, b)
    union = int(np.sum(a.bits | b.bits))
    if union == 0:
        return 100.0
    return 100.0 * int(np.sum(a.bits & b.bits)) / union


@dataclass(frozen=True)
class Venn:
    forgotten: int
    acquired: int
    retained: int

    @property
    def before(self) -> int:
        return self.forgotten + self.retained

    @property
    def forgotten_pct(self) -> float:
        return 100.0 * self.forgotten / self.before if self.before else 0.0

    @property
    def acquired_pct(self) -> float:
        return 100.0 * self.acquired / self.before if self.before else 0.0

    def describe(self) -> str:
        return (
            f"forgotten {self.forgotten}/{self.before} ({self.forgotten_pct:.1f}%), "
            f"acquired {self.acquired} ({self.acquired_pct:.1f}%), retained {self.retained}"
        )


def venn(a: CorrectnessVector, b: CorrectnessVector) -> Venn:
    """Counts of samples correct only under ``a``, only under ``b``, and under both."""
    _aligned(a, b)
    return Venn(
        forgotten=int(np.sum(a.bits & ~b.bits)),
        acquired=int(np.sum(~a.bits & b.bits)),
        retained=int(np.sum(a.bits & b.bits)),
    )


@dataclass
class TCPStats:
    histogram: np.ndarray
    mean: float
    values: np.ndarray = field(repr=False)


def tcp_stats(reference: Model, dataset: Dataset, tau: float = 1.0, bins: int = 10) -> TCPStats:
    """Distribution of the model's probability on the true class."""
    logits = Tensor(predict_logits(reference, dataset.inputs))
    probs = F.softmax_with_temperature(logits, tau).data if len(dataset) else np.zeros((0, reference.num_classes))
    tcp = probs[np.arange(len(dataset)), dataset.labels]
    hist, _ = np.histogram(tcp, bins=bins, range=(0.0, 1.0))
    return TCPStats(hist, float(tcp.mean()) if len(tcp) else 0.0, tcp)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation; 0 when either series is constant."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)


@dataclass
class RunSummary:
    name: str
    accuracy: float
    correct: CorrectnessVector


@dataclass
class ComparisonReport:
    names: list
    accuracy: dict
    deltas: dict  # baseline -> {run: accuracy points}
    iou_matrix: list
    anchor: Optional[str]
    venn_vs_anchor: dict

    def to_dict(self) -> dict:
        return {
            "runs": list(self.names),
            "accuracy": {k: round(v, 6) for k, v in self.accuracy.items()},
            "deltas": {b: {k: round(v, 6) for k, v in d.items()} for b, d in self.deltas.items()},
            "iou": [[round(v, 6) for v in row] for row in self.iou_matrix],
            "anchor": self.anchor,
            "venn": {
                k: {"forgotten": v.forgotten, "acquired": v.acquired, "retained": v.retained, "forgotten_pct": round(v.forgotten_pct, 3)}
                for k, v in self.venn_vs_anchor.items()
            },
        }


def compare_runs(runs: Sequence[RunSummary], baselines: Sequence[str] = (), anchor: Optional[str] = None) -> ComparisonReport:
    """Accuracy table (percent), deltas vs baselines, pairwise IoU, Venn vs an anchor run."""
    names = [r.name for r in runs]
    by_name = {r.name: r for r in runs}
    for n in [*baselines, *([anchor] if anchor else [])]:
        if n not in by_name:
            raise ContractError(f"unknown run {n!r}; have {names}")
    accuracy = {r.name: 100.0 * r.accuracy for r in runs}
    deltas = {b: {n: accuracy[n] - accuracy[b] for n in names} for b in baselines}
    matrix = [[iou(a.correct, b.correct) for b in runs] for a in runs]
    venns = {}
    if anchor:
        for r in runs:
            venns[r.name] = venn(by_name[anchor].correct, r.correct)
    return ComparisonReport(names, accuracy, deltas, matrix, anchor, venns)
