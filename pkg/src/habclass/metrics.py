"""Multiclass evaluation: confusion matrix, accuracy, precision, recall.

Rows of the confusion matrix are true classes, columns predicted. All
derived metrics (per-class precision/recall, per-class accuracy, macro
and weighted averages) are computed from the matrix alone.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # k x k int64, rows = true, cols = predicted
    class_names: tuple[str, ...]

    def __post_init__(self):
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise MetricsError(
                f"counts shape {self.counts.shape} != ({k}, {k})"
            )
        if (self.counts < 0).any():
            raise MetricsError("confusion matrix cells must be non-negative")

    @property
    def k(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


@dataclass(frozen=True)
class PerClassCounts:
    """One-vs-rest TP/FP/FN/TN tallies per class."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray


def confusion_matrix(
    y_true: Sequence[int], y_pred: Sequence[int], k: int,
    class_names: Sequence[str] | None = None,
) -> ConfusionMatrix:
    if len(y_true) != len(y_pred):
        raise MetricsError(
            f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted"
        )
    if len(y_true) == 0:
        raise MetricsError("no samples to evaluate")
    counts = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        if not (0 <= t < k and 0 <= p < k):
            raise MetricsError(f"label pair ({t}, {p}) out of range [0, {k})")
        counts[t, p] += 1
    names = tuple(class_names) if class_names else tuple(f"class_{i}" for i in range(k))
    return ConfusionMatrix(counts, names)


def per_class_counts(cm: ConfusionMatrix) -> PerClassCounts:
    tp = np.diag(cm.counts).copy()
    fp = cm.col_sums() - tp
    fn = cm.row_sums() - tp
    tn = cm.total - tp - fp - fn
    return PerClassCounts(tp, fp, fn, tn)


def accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of correctly classified samples: trace over total."""
    if cm.total == 0:
        raise MetricsError("cannot compute accuracy of an empty matrix")
    return float(np.trace(cm.counts) / cm.total)


def one_vs_rest_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class (TP+TN)/(TP+FP+TN+FN) diagnostic; not the headline accuracy."""
    c = per_class_counts(cm)
    return (c.tp + c.tn) / cm.total


def precision_per_class(cm: ConfusionMatrix) -> tuple[np.ndarray, list[int]]:
    """Per-class TP/(TP+FP). A never-predicted class scores 0 and its index
    is returned in the zero-division flag list."""
    c = per_class_counts(cm)
    denom = c.tp + c.fp
    flags = [int(i) for i in np.flatnonzero(denom == 0)]
    out = np.divide(c.tp, denom, out=np.zeros(cm.k, dtype=float), where=denom > 0)
    return out, flags


def recall_per_class(cm: ConfusionMatrix) -> tuple[np.ndarray, list[int]]:
    """Per-class TP/(TP+FN); classes with no true samples score 0 and flag."""
    c = per_class_counts(cm)
    denom = c.tp + c.fn
    flags = [int(i) for i in np.flatnonzero(denom == 0)]
    out = np.divide(c.tp, denom, out=np.zeros(cm.k, dtype=float), where=denom > 0)
    return out, flags


def macro_precision(cm: ConfusionMatrix) -> float:
    vals, _ = precision_per_class(cm)
    return float(vals.mean())


def macro_recall(cm: ConfusionMatrix) -> float:
    vals, _ = recall_per_class(cm)
    return float(vals.mean())


def weighted_precision(cm: ConfusionMatrix) -> float:
    vals, _ = precision_per_class(cm)
    support = cm.row_sums()
    return float((vals * support).sum() / cm.total)


def weighted_recall(cm: ConfusionMatrix) -> float:
    vals, _ = recall_per_class(cm)
    support = cm.row_sums()
    return float((vals * support).sum() / cm.total)


def per_class_accuracy(cm: ConfusionMatrix) -> list[float | None]:
    """Diagonal over row sum per class (identical to per-class recall).
    Classes with an empty row are reported as missing (None) with a warning."""
    out: list[float | None] = []
    rows = cm.row_sums()
    for i in range(cm.k):
        if rows[i] == 0:
            logger.warning(
                "class %r has no evaluated samples; per-class accuracy undefined",
                cm.class_names[i],
            )
            out.append(None)
        else:
            out.append(float(cm.counts[i, i] / rows[i]))
    return out


def top_confusions(cm: ConfusionMatrix, n: int) -> list[tuple[int, int, int]]:
    """The n largest off-diagonal cells as (true, predicted, count), count
    descending, ties broken by (row, col)."""
    if n < 1:
        raise MetricsError(f"n must be >= 1, got {n}")
    cells = [
        (i, j, int(cm.counts[i, j]))
        for i in range(cm.k)
        for j in range(cm.k)
        if i != j and cm.counts[i, j] > 0
    ]
    cells.sort(key=lambda c: (-c[2], c[0], c[1]))
    return cells[:n]


@dataclass(frozen=True)
class PerClassRow:
    class_name: str
    precision: float
    recall: float
    per_class_accuracy: float | None
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    weighted_precision: float
    weighted_recall: float
    per_class: tuple[PerClassRow, ...]
    zero_division_flags: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "zero_division_flags": list(self.zero_division_flags),
            "per_class": [
                {
                    "class": r.class_name,
                    "precision": r.precision,
                    "recall": r.recall,
                    "per_class_accuracy": r.per_class_accuracy,
                    "support": r.support,
                }
                for r in self.per_class
            ],
        }


def metrics_report(cm: ConfusionMatrix) -> MetricsReport:
    prec, prec_flags = precision_per_class(cm)
    rec, rec_flags = recall_per_class(cm)
    pca = per_class_accuracy(cm)
    support = cm.row_sums()
    flags = tuple(
        f"precision:{cm.class_names[i]}" for i in prec_flags
    ) + tuple(f"recall:{cm.class_names[i]}" for i in rec_flags)
    rows = tuple(
        PerClassRow(
            class_name=cm.class_names[i],
            precision=float(prec[i]),
            recall=float(rec[i]),
            per_class_accuracy=pca[i],
            support=int(support[i]),
        )
        for i in range(cm.k)
    )
    return MetricsReport(
        accuracy=accuracy(cm),
        macro_precision=macro_precision(cm),
        macro_recall=macro_recall(cm),
        weighted_precision=weighted_precision(cm),
        weighted_recall=weighted_recall(cm),
        per_class=rows,
        zero_division_flags=flags,
    )


# ---------------------------------------------------------------------------
# CSV export/import with class-name header row and column.
# ---------------------------------------------------------------------------


def confusion_to_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["true\\pred", *cm.class_names])
    for i, name in enumerate(cm.class_names):
        writer.writerow([name, *[int(v) for v in cm.counts[i]]])
    return buf.getvalue()


def save_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    Path(path).write_text(confusion_to_csv(cm))


def load_confusion_csv(path: str | Path) -> ConfusionMatrix:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        names = tuple(header[1:])
        rows = [[int(v) for v in row[1:]] for row in reader]
    return ConfusionMatrix(np.asarray(rows, dtype=np.int64), names)
