"""Confusion matrices, accuracy/precision/recall/F1, and report files."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import FusionBenchError

REPORT_SCHEMA = "fusionbench-report-v1"
AVERAGES = ("weighted", "macro")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.counts.shape == other.counts.shape and bool((self.counts == other.counts).all())

    __hash__ = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    def to_csv(self) -> str:
        return "\n".join(",".join(str(int(v)) for v in row) for row in self.counts) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = [[int(v) for v in ln.split(",")] for ln in text.strip().splitlines()]
        return cls(np.array(rows))


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    support: list[int]
    average: str = "weighted"
    zero_division: bool = False  # some per-class ratio had an empty denominator and was set to 0
    confusion: ConfusionMatrix | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "per_class_f1": self.per_class_f1,
            "support": self.support,
            "average": self.average,
            "zero_division": self.zero_division,
        }


def confusion(true_labels: Sequence[int], predicted_labels: Sequence[int], n_classes: int = 4) -> ConfusionMatrix:
    y = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted_labels, dtype=np.int64).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"label lists differ in length: {len(y)} true vs {len(p)} predicted")
    for name, arr in (("true", y), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} labels must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y, p), 1)
    return ConfusionMatrix(counts)


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, bool]:
    empty = den == 0
    out = np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=~empty)
    return out, bool(empty.any())


def metrics(cm: ConfusionMatrix | np.ndarray, average: str = "weighted") -> MetricsReport:
    """Accuracy plus precision/recall/F1 aggregated by class support (or macro)."""
    if not isinstance(cm, ConfusionMatrix):
        cm = ConfusionMatrix(np.asarray(cm))
    if average not in AVERAGES:
        raise ValueError(f"average must be one of {AVERAGES}, got {average!r}")
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total <= 0:
        raise FusionBenchError("cannot compute metrics of an empty confusion matrix")
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision, zp = _safe_ratio(tp, predicted)
    recall, zr = _safe_ratio(tp, support)
    f1, zf = _safe_ratio(2 * precision * recall, precision + recall)
    # weighted sum first, single division last, so perfect matrices give exactly 1.0
    w, norm = (support, total) if average == "weighted" else (np.ones(len(support)), len(support))
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=float(w @ precision / norm),
        recall=float(w @ recall / norm),
        f1=float(w @ f1 / norm),
        per_class_precision=precision.tolist(),
        per_class_recall=recall.tolist(),
        per_class_f1=f1.tolist(),
        support=[int(s) for s in support],
        average=average,
        zero_division=zp or zr or zf,
        confusion=cm,
    )


def evaluate_predictions(true_labels, predicted_labels, n_classes: int = 4, average: str = "weighted") -> MetricsReport:
    return metrics(confusion(true_labels, predicted_labels, n_classes), average)


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

CELL_PX = 24


def slug(name: str) -> str:
    s = re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()
    return s or "run"


def heatmap_pixels(cm: ConfusionMatrix, cell: int = CELL_PX) -> np.ndarray:
    """Grayscale grid, one ``cell``-sized square per entry; brighter means more counts."""
    counts = cm.counts.astype(np.float64)
    peak = counts.max()
    level = np.zeros_like(counts) if peak == 0 else counts / peak
    gray = np.round(255 * level).astype(np.uint8)
    return np.kron(gray, np.ones((cell, cell), dtype=np.uint8))


def write_heatmap(cm: ConfusionMatrix, path: str | Path, cell: int = CELL_PX) -> None:
    gray = heatmap_pixels(cm, cell)
    Image.fromarray(np.repeat(gray[:, :, None], 3, axis=2)).save(path, format="PPM")


def report(runs: Sequence[tuple[str, MetricsReport, ConfusionMatrix]], out_dir: str | Path) -> list[Path]:
    """Write ``metrics.json`` plus ``<run>.confusion.csv`` and ``<run>.confusion.ppm`` per run.

    Rows of the metrics table keep the order of ``runs``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    rows = []
    used: set[str] = set()
    for name, rep, cm in runs:
        stem = slug(name)
        base, k = stem, 2
        while stem in used:
            stem = f"{base}_{k}"
            k += 1
        used.add(stem)
        csv_path = out / f"{stem}.confusion.csv"
        csv_path.write_text(cm.to_csv())
        ppm_path = out / f"{stem}.confusion.ppm"
        write_heatmap(cm, ppm_path)
        written += [csv_path, ppm_path]
        rows.append({"name": name, "files": [csv_path.name, ppm_path.name], **rep.to_dict()})
    table = out / "metrics.json"
    table.write_text(json.dumps({"schema": REPORT_SCHEMA, "rows": rows}, indent=1) + "\n")
    return [table] + written


def format_table(rows: Sequence[tuple[str, MetricsReport]]) -> str:
    """Plain-text table in the Accuracy / Precision / Recall / F1 layout."""
    width = max([len("Run")] + [len(n) for n, _ in rows])
    lines = [f"{'Run':<{width}}  Accuracy  Precision  Recall   F1"]
    for name, r in rows:
        lines.append(f"{name:<{width}}  {r.accuracy:.4f}    {r.precision:.4f}     {r.recall:.4f}   {r.f1:.4f}")
    return "\n".join(lines)
