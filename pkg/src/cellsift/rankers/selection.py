"""Importance scores -> keep mask, per method-specific threshold rule."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..tensors import PooledFeatures


class SelectionMethod(str, Enum):
    LOGREG = "logreg"
    FOREST = "forest"
    BOOSTING = "boosting"
    ALL = "all"


# Default thresholds; boosting keeps strictly positive gain, all-selection
# never filters. Values are configuration defaults, not targets.
DEFAULT_THRESHOLDS = {
    SelectionMethod.LOGREG: 1e-16,
    SelectionMethod.FOREST: 3e-6,
    SelectionMethod.BOOSTING: 0.0,
    SelectionMethod.ALL: 0.0,
}


@dataclass(frozen=True)
class SelectionRule:
    method: SelectionMethod
    threshold: float | None = None

    def __post_init__(self):
        method = SelectionMethod(self.method)
        threshold = self.threshold
        if threshold is None:
            threshold = DEFAULT_THRESHOLDS[method]
        if threshold < 0:
            raise ValueError("threshold must be >= 0")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "threshold", float(threshold))


@dataclass(frozen=True)
class ImportanceRanking:
    scores: np.ndarray
    method: SelectionMethod
    keep_mask: np.ndarray
    filtered_fraction: float

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        mask = np.asarray(self.keep_mask, dtype=bool)
        scores.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "keep_mask", mask)

    @property
    def kept(self) -> int:
        return int(self.keep_mask.sum())


def average_importance_across_classes(per_class: np.ndarray) -> np.ndarray:
    """scores[e] = mean over the three classes of |per_class[c][e]|."""
    per_class = np.asarray(per_class, dtype=np.float64)
    if per_class.ndim != 2 or per_class.shape[0] != 3:
        raise ValueError(f"expected a (3, E) matrix, got shape {per_class.shape}")
    return np.abs(per_class).mean(axis=0)


def apply_selection(scores: np.ndarray, rule: SelectionRule) -> ImportanceRanking:
    """Threshold the scores into a keep mask.

    Comparison is strict (score > threshold), so raising the threshold can
    only remove features. All-selection keeps everything regardless of the
    scores. An empty result is an error: downstream training needs at
    least one input feature.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError("scores must be a 1-D array")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if (scores < 0).any():
        raise ValueError("scores must be non-negative")
    if rule.method == SelectionMethod.ALL:
        mask = np.ones(scores.shape, dtype=bool)
    else:
        mask = scores > rule.threshold
    if not mask.any():
        raise ValueError(
            f"{rule.method.value} selection at threshold {rule.threshold} "
            "filtered every feature"
        )
    filtered = float((~mask).sum() / scores.size)
    return ImportanceRanking(scores, rule.method, mask, filtered)


def project_features(x: PooledFeatures, keep_mask: np.ndarray) -> PooledFeatures:
    """Keep the masked columns, original order preserved."""
    mask = np.asarray(keep_mask, dtype=bool)
    if mask.ndim != 1 or mask.size != x.embed_dim:
        raise ValueError(
            f"mask length {mask.size} does not match feature width {x.embed_dim}"
        )
    if not mask.any():
        raise ValueError("mask keeps no features")
    return PooledFeatures(x.data[:, mask])


def write_ranking_csv(ranking: ImportanceRanking, rule: SelectionRule, path) -> None:
    """Rows feature_index,score,kept followed by a summary line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_index", "score", "kept"])
        for i, (s, k) in enumerate(zip(ranking.scores, ranking.keep_mask)):
            writer.writerow([i, repr(float(s)), int(k)])
        fh.write(
            f"# method={ranking.method.value} threshold={rule.threshold:g} "
            f"filtered_fraction={ranking.filtered_fraction:.4f}\n"
        )


def score_distribution(scores: np.ndarray) -> str:
    """Quantile summary so a human can re-derive thresholds by inspection."""
    scores = np.asarray(scores, dtype=np.float64)
    qs = (0.0, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0)
    lines = ["quantile,score"]
    for q in qs:
        lines.append(f"{q:.2f},{float(np.quantile(scores, q))!r}")
    lines.append(f"nonzero,{int((scores > 0).sum())}")
    lines.append(f"total,{scores.size}")
    return "\n".join(lines) + "\n"
