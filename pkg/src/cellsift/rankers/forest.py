"""Bagged CART forest with Gini impurity importances.

Trees are grown greedily on bootstrap samples with sqrt(E) features per
split. Split-gain ties are broken toward the lowest feature index, which
together with per-tree seeded generators makes the whole forest a pure
function of (data, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensors import Dataset, NUM_CLASSES


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    distribution: np.ndarray | None = None  # leaf class distribution

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def _best_split(x_col: np.ndarray, y: np.ndarray, parent_gini: float):
    """Best (gain, threshold) for one feature; None when nothing splits."""
    order = np.argsort(x_col, kind="stable")
    v = x_col[order]
    n = v.size
    valid = v[:-1] < v[1:]
    if not valid.any():
        return None
    onehot = np.zeros((n, NUM_CLASSES))
    onehot[np.arange(n), y[order]] = 1.0
    left_counts = np.cumsum(onehot, axis=0)[:-1]  # counts after i+1 samples
    total = left_counts[-1] + onehot[-1]
    right_counts = total - left_counts
    nl = np.arange(1, n)
    nr = n - nl
    gini_l = 1.0 - (left_counts**2).sum(axis=1) / nl**2
    gini_r = 1.0 - (right_counts**2).sum(axis=1) / nr**2
    weighted = (nl * gini_l + nr * gini_r) / n
    gain = np.where(valid, parent_gini - weighted, -np.inf)
    i = int(np.argmax(gain))
    if gain[i] <= 0.0:
        return None
    return float(gain[i]), float(0.5 * (v[i] + v[i + 1]))


def _grow(x, y, idx, depth, max_depth, max_features, rng, importances, n_total):
    counts = np.bincount(y[idx], minlength=NUM_CLASSES)
    node_gini = _gini(counts)
    n = idx.size
    if depth >= max_depth or n < 2 or node_gini == 0.0:
        return _Node(distribution=counts / n)
    e = x.shape[1]
    feats = np.sort(rng.choice(e, size=min(max_features, e), replace=False))
    best = None
    for f in feats:  # ascending index order + strict > means lowest index wins ties
        found = _best_split(x[idx, f], y[idx], node_gini)
        if found is not None and (best is None or found[0] > best[0]):
            best = (found[0], f, found[1])
    if best is None:
        return _Node(distribution=counts / n)
    gain, feature, threshold = best
    importances[feature] += (n / n_total) * gain
    go_left = x[idx, feature] < threshold
    node = _Node(feature=feature, threshold=threshold)
    node.left = _grow(x, y, idx[go_left], depth + 1, max_depth, max_features,
                      rng, importances, n_total)
    node.right = _grow(x, y, idx[~go_left], depth + 1, max_depth, max_features,
                       rng, importances, n_total)
    return node


def _tree_distribution(node: _Node, row: np.ndarray) -> np.ndarray:
    while not node.is_leaf:
        node = node.left if row[node.feature] < node.threshold else node.right
    return node.distribution


@dataclass
class RandomForestModel:
    trees: list = field(repr=False)
    importances: np.ndarray  # normalized to sum 1 (or all zero)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        probs = np.zeros((x.shape[0], NUM_CLASSES))
        for root in self.trees:
            for i, row in enumerate(x):
                probs[i] += _tree_distribution(root, row)
        return probs / len(self.trees)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)


def train_random_forest(
    data: Dataset,
    trees: int = 100,
    seed: int = 0,
    max_depth: int = 8,
) -> RandomForestModel:
    """Fit the forest; importance = impurity decrease summed over all splits.

    Raw importances are accumulated across every tree and normalized to
    sum 1 at the end; a forest that never splits (pure labels) reports all
    zeros.
    """
    x = data.features.data
    y = data.labels.labels
    if x.shape[0] == 0:
        raise ValueError("cannot fit a forest on empty data")
    n, e = x.shape
    max_features = max(1, int(np.sqrt(e)))
    importances = np.zeros(e)
    roots = []
    for t in range(trees):
        rng = np.random.default_rng([seed, t])
        bootstrap = rng.integers(0, n, size=n)
        roots.append(
            _grow(x, y, bootstrap, 0, max_depth, max_features, rng, importances, n)
        )
    total = importances.sum()
    if total > 0:
        importances = importances / total
    return RandomForestModel(roots, importances)
