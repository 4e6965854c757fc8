"""One-vs-rest gradient boosting with Newton-step regression trees.

Each of the three classes gets its own binary ensemble of shallow trees
fit to log-loss gradients. Feature importance is the split gain summed
over every tree in every ensemble, so a feature that is never chosen for
a split has importance exactly 0 (the boosting selection rule keys off
that exact zero).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..tensors import Dataset, NUM_CLASSES


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _leaf_value(g_sum: float, h_sum: float, lam: float) -> float:
    return -g_sum / (h_sum + lam)


def _best_split(x_col, g, h, lam):
    """Newton split gain for one feature; None if no positive gain."""
    order = np.argsort(x_col, kind="stable")
    v = x_col[order]
    n = v.size
    valid = v[:-1] < v[1:]
    if not valid.any():
        return None
    gl = np.cumsum(g[order])[:-1]
    hl = np.cumsum(h[order])[:-1]
    g_tot, h_tot = gl[-1] + g[order][-1], hl[-1] + h[order][-1]
    gr = g_tot - gl
    hr = h_tot - hl
    parent = g_tot**2 / (h_tot + lam)
    gain = 0.5 * (gl**2 / (hl + lam) + gr**2 / (hr + lam) - parent)
    gain = np.where(valid, gain, -np.inf)
    i = int(np.argmax(gain))
    if gain[i] <= 0.0:
        return None
    return float(gain[i]), float(0.5 * (v[i] + v[i + 1]))


def _grow(x, g, h, idx, depth, max_depth, lam, gains):
    if depth >= max_depth or idx.size < 2:
        return _Node(value=_leaf_value(g[idx].sum(), h[idx].sum(), lam))
    best = None
    for f in range(x.shape[1]):  # ascending order + strict > breaks ties low
        found = _best_split(x[idx, f], g[idx], h[idx], lam)
        if found is not None and (best is None or found[0] > best[0]):
            best = (found[0], f, found[1])
    if best is None:
        return _Node(value=_leaf_value(g[idx].sum(), h[idx].sum(), lam))
    gain, feature, threshold = best
    gains[feature] += gain
    go_left = x[idx, feature] < threshold
    node = _Node(feature=feature, threshold=threshold)
    node.left = _grow(x, g, h, idx[go_left], depth + 1, max_depth, lam, gains)
    node.right = _grow(x, g, h, idx[~go_left], depth + 1, max_depth, lam, gains)
    return node


def _tree_scores(node: _Node, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])
    for i, row in enumerate(x):
        cur = node
        while not cur.is_leaf:
            cur = cur.left if row[cur.feature] < cur.threshold else cur.right
        out[i] = cur.value
    return out


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


@dataclass
class GradientBoostingModel:
    ensembles: list = field(repr=False)  # one tree list per class
    base_scores: np.ndarray
    learning_rate: float
    per_class_gain: np.ndarray  # (3, E) raw split gains
    importances: np.ndarray  # normalized to sum 1 (or all zero)

    def decision_scores(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        scores = np.tile(self.base_scores, (x.shape[0], 1))
        for c, trees in enumerate(self.ensembles):
            for tree in trees:
                scores[:, c] += self.learning_rate * _tree_scores(tree, x)
        return scores

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        raw = _sigmoid(self.decision_scores(x))
        total = raw.sum(axis=1, keepdims=True)
        return np.where(total > 0, raw / total, 1.0 / NUM_CLASSES)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)


def train_gradient_boosting(
    data: Dataset,
    rounds: int = 100,
    learning_rate: float = 0.1,
    max_depth: int = 2,
    lam: float = 1.0,
) -> GradientBoostingModel:
    """Boost 3 one-vs-rest ensembles; importance = accumulated split gain."""
    x = data.features.data
    y = data.labels.labels
    if x.shape[0] == 0:
        raise ValueError("cannot fit boosting on empty data")
    n, e = x.shape
    idx = np.arange(n)
    per_class_gain = np.zeros((NUM_CLASSES, e))
    ensembles = []
    base_scores = np.zeros(NUM_CLASSES)
    for c in range(NUM_CLASSES):
        y_bin = (y == c).astype(np.float64)
        p0 = float(np.clip(y_bin.mean(), 1e-12, 1 - 1e-12))
        base = np.log(p0 / (1 - p0))
        base_scores[c] = base
        scores = np.full(n, base)
        trees = []
        for _ in range(rounds):
            p = _sigmoid(scores)
            g = p - y_bin
            h = p * (1 - p)
            tree = _grow(x, g, h, idx, 0, max_depth, lam, per_class_gain[c])
            trees.append(tree)
            scores += learning_rate * _tree_scores(tree, x)
        ensembles.append(trees)

    scores_mean = np.abs(per_class_gain).mean(axis=0)
    total = scores_mean.sum()
    if total > 0:
        importances = scores_mean / total
    else:
        importances = scores_mean
        warnings.warn(
            "boosting produced no splits; all importances are zero and the "
            "strict-positivity selection rule will keep nothing",
            RuntimeWarning,
            stacklevel=2,
        )
    return GradientBoostingModel(
        ensembles, base_scores, learning_rate, per_class_gain, importances
    )
