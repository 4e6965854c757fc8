"""Per-class F1 and macro-F1 evaluation on the 3-class label alphabet."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .tensors import LabelVector, NUM_CLASSES


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts; rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"confusion matrix must be 3x3, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion matrix entries must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class F1Scores:
    per_class: tuple[float, float, float]
    macro: float
    confusion: ConfusionMatrix


def _as_labels(v) -> np.ndarray:
    if isinstance(v, LabelVector):
        return v.labels
    return LabelVector(np.asarray(v)).labels


def confusion_matrix(y_true, y_pred) -> ConfusionMatrix:
    t = _as_labels(y_true)
    p = _as_labels(y_pred)
    if len(t) != len(p):
        raise ValueError(f"length mismatch: {len(t)} true vs {len(p)} predicted")
    if len(t) == 0:
        raise ValueError("cannot evaluate empty label vectors")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def macro_f1(y_true, y_pred) -> F1Scores:
    """Per-class F1 plus their unweighted mean.

    A class with neither predicted nor actual positives would make F1
    0/0; it scores 0 and a warning is emitted, which penalizes degenerate
    predictors instead of silently inflating the mean.
    """
    cm = confusion_matrix(y_true, y_pred)
    counts = cm.counts
    per_class = []
    for c in range(NUM_CLASSES):
        tp = counts[c, c]
        fp = counts[:, c].sum() - tp
        fn = counts[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        if denom == 0:
            warnings.warn(
                f"class {c} has no true or predicted samples; F1 set to 0",
                RuntimeWarning,
                stacklevel=2,
            )
            per_class.append(0.0)
        else:
            per_class.append(float(2.0 * tp / denom))
    macro = float(np.mean(per_class))
    return F1Scores(tuple(per_class), macro, cm)


METRICS_COLUMNS = (
    "extraction_mode",
    "selection_method",
    "weighting",
    "f1_rubbish",
    "f1_healthy",
    "f1_unhealthy",
    "macro_f1",
)


def write_metrics_csv(rows: list[dict], path) -> None:
    """One row per experiment cell, fixed column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in METRICS_COLUMNS})
