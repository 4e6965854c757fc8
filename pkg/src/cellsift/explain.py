"""Kernel SHAP attributions with a brute-force exact oracle.

Coalitions of features are sampled in proportion to the Shapley kernel
weight, the model is evaluated with absent features imputed from
background rows, and a constrained weighted least squares solve yields
attributions that reconstruct the model output exactly (the empty and
full coalitions enter as equality constraints, not large weights). For
small feature counts, exact Shapley values by full enumeration serve as
an independent check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from .tensors import PooledFeatures

MAX_EXACT_FEATURES = 16


@dataclass(frozen=True)
class ShapExplanation:
    phi: np.ndarray
    base_value: float
    instance_index: int
    target_class: int
    degenerate: bool = False  # least-norm fallback was needed

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)


@dataclass(frozen=True)
class GlobalImportance:
    mean_abs_phi: np.ndarray
    rank_order: np.ndarray  # feature indices, most important first
    top_feature: int


def shapley_kernel_weight(m: int, s: int) -> float:
    """(M-1) / (C(M,s) * s * (M-s)); infinite at s = 0 and s = M."""
    if s <= 0 or s >= m:
        return np.inf
    return (m - 1) / (comb(m, s) * s * (m - s))


def _as_target_fn(model, target: int):
    """Wrap a model so it returns one scalar per row."""

    def fn(x):
        out = np.asarray(model(x), dtype=np.float64)
        if out.ndim == 2:
            return out[:, target]
        return out

    return fn


def coalition_values(fn, background: np.ndarray, instance: np.ndarray,
                     masks: np.ndarray) -> np.ndarray:
    """v(S) for each mask row: present features from the instance, absent
    ones imputed per background row, model outputs averaged."""
    n_bg = background.shape[0]
    values = np.empty(masks.shape[0])
    for i, mask in enumerate(masks):
        composite = np.where(mask, instance, background)
        values[i] = fn(composite).mean()
    return values


def _all_proper_masks(m: int) -> tuple[np.ndarray, np.ndarray]:
    masks, weights = [], []
    for bits in range(1, 2**m - 1):
        mask = np.array([(bits >> j) & 1 for j in range(m)], dtype=bool)
        masks.append(mask)
        weights.append(shapley_kernel_weight(m, int(mask.sum())))
    return np.array(masks), np.array(weights)


def _sample_masks(m: int, budget: int, rng: np.random.Generator):
    """Enumerate coalition sizes while budget allows, sample the rest.

    Sizes are visited in pairs (s, M-s) of increasing s, which is where
    the kernel weight concentrates. Once a size no longer fits, the
    leftover kernel mass is spread over randomly sampled subsets, with
    duplicates merged into their weights.
    """
    order: list[int] = []
    s_lo, s_hi = 1, m - 1
    while s_lo <= s_hi:
        order.append(s_lo)
        if s_hi != s_lo:
            order.append(s_hi)
        s_lo += 1
        s_hi -= 1

    masks: list[np.ndarray] = []
    weights: list[float] = []
    remaining = budget
    sampled_sizes = []
    for pos, s in enumerate(order):
        count = comb(m, s)
        if count <= remaining:
            for subset_bits in _subsets_of_size(m, s):
                masks.append(subset_bits)
                weights.append(shapley_kernel_weight(m, s))
            remaining -= count
        else:
            sampled_sizes = order[pos:]
            break

    if sampled_sizes and remaining > 0:
        probs = np.array(
            [shapley_kernel_weight(m, s) * comb(m, s) for s in sampled_sizes]
        )
        total_mass = probs.sum()
        probs = probs / total_mass
        seen: dict[bytes, int] = {}
        uniq_masks: list[np.ndarray] = []
        counts: list[int] = []
        for _ in range(remaining):
            s = sampled_sizes[rng.choice(len(sampled_sizes), p=probs)]
            mask = np.zeros(m, dtype=bool)
            mask[rng.choice(m, size=s, replace=False)] = True
            key = mask.tobytes()
            if key in seen:
                counts[seen[key]] += 1
            else:
                seen[key] = len(uniq_masks)
                uniq_masks.append(mask)
                counts.append(1)
        scale = total_mass / remaining
        masks.extend(uniq_masks)
        weights.extend(c * scale for c in counts)

    return np.array(masks), np.array(weights)


def _subsets_of_size(m: int, s: int):
    from itertools import combinations

    for combo in combinations(range(m), s):
        mask = np.zeros(m, dtype=bool)
        mask[list(combo)] = True
        yield mask


def kernel_shap(
    model,
    background: PooledFeatures | np.ndarray,
    instance: np.ndarray,
    target: int,
    samples: int | None = None,
    seed: int = 0,
    instance_index: int = -1,
) -> ShapExplanation:
    """Shapley attributions via kernel-weighted least squares.

    The empty and full coalitions are not regression rows: base_value is
    pinned to the mean background prediction and the attributions are
    constrained to sum to f(instance) - base_value, so additivity holds
    exactly. With enough samples to cover all 2^M coalitions the result
    equals exact Shapley values.
    """
    bg = background.data if isinstance(background, PooledFeatures) else np.asarray(background, dtype=np.float64)
    if bg.ndim != 2 or bg.shape[0] == 0:
        raise ValueError("background must be a non-empty (rows, E) array")
    instance = np.asarray(instance, dtype=np.float64)
    m = instance.size
    if bg.shape[1] != m:
        raise ValueError(f"instance width {m} != background width {bg.shape[1]}")
    if samples is None:
        samples = 2 * m + 2048
    if samples < m + 2:
        raise ValueError(f"need at least {m + 2} samples for {m} features")

    fn = _as_target_fn(model, target)
    base_value = float(fn(bg).mean())
    full_value = float(fn(instance[None]).mean())
    delta = full_value - base_value

    rng = np.random.default_rng(seed)
    total_proper = 2**m - 2
    if samples >= total_proper:
        masks, weights = _all_proper_masks(m)
    else:
        masks, weights = _sample_masks(m, samples, rng)

    values = coalition_values(fn, bg, instance, masks)

    # Eliminate the last attribution through the sum constraint, then solve
    # the weighted least squares in the remaining M-1 unknowns.
    z = masks.astype(np.float64)
    z_rest = z[:, :-1] - z[:, -1:]
    y = values - base_value - z[:, -1] * delta
    sw = np.sqrt(weights)
    a = z_rest * sw[:, None]
    b = y * sw
    phi_rest, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    degenerate = rank < m - 1
    phi = np.empty(m)
    phi[:-1] = phi_rest
    phi[-1] = delta - phi_rest.sum()
    return ShapExplanation(phi, base_value, instance_index, target, degenerate)


def exact_shapley(
    model,
    background: PooledFeatures | np.ndarray,
    instance: np.ndarray,
    target: int,
) -> np.ndarray:
    """Classical Shapley values by full coalition enumeration (E <= 16).

    Uses the same background-row imputation as kernel_shap so the two
    agree for any model, not just linear ones.
    """
    bg = background.data if isinstance(background, PooledFeatures) else np.asarray(background, dtype=np.float64)
    instance = np.asarray(instance, dtype=np.float64)
    m = instance.size
    if m > MAX_EXACT_FEATURES:
        raise ValueError(
            f"exact enumeration capped at {MAX_EXACT_FEATURES} features, got {m}"
        )
    fn = _as_target_fn(model, target)

    values = np.empty(2**m)
    for bits in range(2**m):
        mask = np.array([(bits >> j) & 1 for j in range(m)], dtype=bool)
        composite = np.where(mask, instance, bg)
        values[bits] = fn(composite).mean()

    fact = [factorial(i) for i in range(m + 1)]
    phi = np.zeros(m)
    for bits in range(2**m):
        s = bin(bits).count("1")
        w = fact[s] * fact[m - s - 1] / fact[m]
        for j in range(m):
            if not (bits >> j) & 1:
                phi[j] += w * (values[bits | (1 << j)] - values[bits])
    return phi


def global_importance(explanations: list[ShapExplanation]) -> GlobalImportance:
    """Mean |phi| per feature across explanations; descending rank order."""
    if not explanations:
        raise ValueError("need at least one explanation")
    widths = {exp.phi.size for exp in explanations}
    if len(widths) != 1:
        raise ValueError(f"inconsistent explanation widths: {sorted(widths)}")
    stacked = np.stack([np.abs(exp.phi) for exp in explanations])
    mean_abs = stacked.mean(axis=0)
    order = np.lexsort((np.arange(mean_abs.size), -mean_abs))
    return GlobalImportance(mean_abs, order, int(order[0]))


@dataclass(frozen=True)
class ExtremeValueReport:
    feature: int
    high: list[tuple[int, float]]  # (sample id, feature value), best first
    low: list[tuple[int, float]]


def extreme_value_report(
    ranking: GlobalImportance,
    features: PooledFeatures | np.ndarray,
    ids: list | None = None,
    k: int = 5,
) -> ExtremeValueReport:
    """The k samples with the highest and lowest top-feature values.

    Ties resolve toward lower sample index. This is the listing analogue
    of eyeballing extreme-valued images side by side.
    """
    x = features.data if isinstance(features, PooledFeatures) else np.asarray(features)
    n = x.shape[0]
    if ids is None:
        ids = list(range(n))
    if len(ids) != n:
        raise ValueError("ids length must match sample count")
    if k > n // 2:
        raise ValueError(f"k={k} exceeds half the sample count ({n})")
    col = x[:, ranking.top_feature].astype(np.float64)
    idx = np.arange(n)
    high_order = np.lexsort((idx, -col))[:k]
    low_order = np.lexsort((idx, col))[:k]
    high = [(ids[i], float(col[i])) for i in high_order]
    low = [(ids[i], float(col[i])) for i in low_order]
    return ExtremeValueReport(ranking.top_feature, high, low)


def write_explanation_csv(explanation: ShapExplanation, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_index", "phi"])
        for i, p in enumerate(explanation.phi):
            writer.writerow([i, repr(float(p))])
        fh.write(
            f"# base_value={explanation.base_value!r} "
            f"target_class={explanation.target_class} "
            f"degenerate={int(explanation.degenerate)}\n"
        )


def write_global_csv(gi: GlobalImportance, path) -> None:
    ranks = np.empty(gi.mean_abs_phi.size, dtype=int)
    ranks[gi.rank_order] = np.arange(gi.mean_abs_phi.size)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_index", "mean_abs_phi", "rank"])
        for i, v in enumerate(gi.mean_abs_phi):
            writer.writerow([i, repr(float(v)), int(ranks[i])])
