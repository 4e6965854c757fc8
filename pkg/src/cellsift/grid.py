"""Experiment grid: extraction modes x selection methods x loss weighting.

Each cell pools its token tensor, ranks features on the training split,
projects through the keep mask, trains the deep classifier, and reports
per-class and macro F1 on held-out data. Two baseline rows train the
single-linear-layer head without any selection. Cell failures are
recorded in the report without stopping the remaining cells.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ann, metrics, rankers
from .pooling import pool_tokens
from .synthetic import generate_synthetic, generate_xor, synthesize_token_tensors
from .tensors import (
    Dataset,
    ExtractionMode,
    LabelVector,
    PooledFeatures,
    SplitTag,
    read_labels_csv,
    read_tensor_file,
)

MODE_NAMES = {
    "class": ExtractionMode.CLASS_TOKEN,
    "image": ExtractionMode.IMAGE_TOKENS,
    "all": ExtractionMode.ALL_TOKENS,
}
MODE_LABELS = {v: k for k, v in MODE_NAMES.items()}


@dataclass
class AnnSettings:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 128
    hidden: tuple[int, ...] = ann.DEFAULT_HIDDEN


@dataclass
class ExperimentConfig:
    data: dict
    modes: list[str] = field(default_factory=lambda: ["class", "image", "all"])
    selections: list[str] = field(
        default_factory=lambda: ["boosting", "forest", "logreg", "all"]
    )
    weighting: str = "both"
    seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.25
    include_baseline: bool = True
    ann: AnnSettings = field(default_factory=AnnSettings)

    def __post_init__(self):
        if not self.modes or not self.selections:
            raise ValueError("modes and selections must be non-empty")
        for m in self.modes:
            if m not in MODE_NAMES:
                raise ValueError(f"unknown extraction mode {m!r}")
        for s in self.selections:
            rankers.SelectionMethod(s)
        if self.weighting not in ("weighted", "unweighted", "both"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if isinstance(self.ann, dict):
            ann_kwargs = dict(self.ann)
            if "hidden" in ann_kwargs:
                ann_kwargs["hidden"] = tuple(ann_kwargs["hidden"])
            self.ann = AnnSettings(**ann_kwargs)

    @property
    def weightings(self) -> list[str]:
        if self.weighting == "both":
            return ["weighted", "unweighted"]
        return [self.weighting]

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(**raw)


@dataclass
class GridReport:
    rows: list[dict]
    failures: list[str]


def _load_mode_datasets(config: ExperimentConfig):
    """Per-mode (train tokens, test tokens) plus label vectors."""
    data = config.data
    kind = data.get("kind", "synthetic")
    modes = [MODE_NAMES[m] for m in config.modes]
    if kind == "synthetic":
        counts = tuple(data.get("n_per_class", (100, 100, 100)))
        test_counts = tuple(data.get("test_n_per_class", tuple(max(1, c // 2) for c in counts)))
        embed_dim = int(data.get("embed_dim", 32))
        image_tokens = int(data.get("image_tokens", 4))
        flavor = data.get("dataset", "gaussian")
        seed = int(data.get("seed", config.seed))
        if flavor == "xor":
            train = generate_xor(counts, embed_dim, seed=seed)
            test = generate_xor(test_counts, embed_dim, seed=seed + 1,
                                split_tag=SplitTag.TEST)
        else:
            informative = int(data.get("informative", 4))
            train = generate_synthetic(counts, embed_dim, informative, seed=seed)
            test = generate_synthetic(test_counts, embed_dim, informative,
                                      seed=seed + 1, split_tag=SplitTag.TEST)
        train_tokens = synthesize_token_tensors(train.features, image_tokens, seed=seed)
        test_tokens = synthesize_token_tensors(test.features, image_tokens, seed=seed + 1)
        return (
            {m: train_tokens[m] for m in modes},
            train.labels,
            {m: test_tokens[m] for m in modes},
            test.labels,
        )
    if kind == "tnsr":
        tensor_paths = data["tensors"]
        labels = read_labels_csv(data["labels"])
        tokens = {}
        for name in config.modes:
            tokens[MODE_NAMES[name]] = read_tensor_file(tensor_paths[name])
        if "test_tensors" in data:
            test_tokens = {
                MODE_NAMES[name]: read_tensor_file(data["test_tensors"][name])
                for name in config.modes
            }
            test_labels = read_labels_csv(data["test_labels"])
            return tokens, labels, test_tokens, test_labels
        # No dedicated test files: carve a stratified test split out of the
        # provided rows, shared across modes.
        rng = np.random.default_rng(config.seed)
        y = labels.labels
        test_mask = np.zeros(len(y), dtype=bool)
        for c in np.unique(y):
            members = np.flatnonzero(y == c)
            k = max(1, int(round(len(members) * config.test_fraction)))
            test_mask[rng.permutation(members)[:k]] = True
        train_tokens, test_tokens = {}, {}
        for mode, t in tokens.items():
            train_tokens[mode] = type(t)(t.data[~test_mask], mode)
            test_tokens[mode] = type(t)(t.data[test_mask], mode)
        return (
            train_tokens,
            LabelVector(y[~test_mask]),
            test_tokens,
            LabelVector(y[test_mask]),
        )
    raise ValueError(f"unknown data kind {kind!r}")


def _run_cell(fit, val, test, test_labels, mask, class_weights, settings, seed):
    fit_p = Dataset(rankers.project_features(fit.features, mask), fit.labels)
    val_p = Dataset(rankers.project_features(val.features, mask), val.labels,
                    SplitTag.VALIDATION)
    report = ann.train_mlp(
        fit_p,
        val_p,
        epochs=settings.epochs,
        class_weights=class_weights,
        seed=seed,
        hidden=settings.hidden,
        learning_rate=settings.learning_rate,
        batch_size=settings.batch_size,
    )
    test_p = rankers.project_features(test, mask)
    pred, _ = ann.predict(report.best_params, test_p)
    return metrics.macro_f1(test_labels, pred), report


def run_grid(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> GridReport:
    """Run every (mode, selection, weighting) cell plus the baseline rows.

    The report row order is a pure function of the config; worker count
    only affects wall time.
    """
    train_tokens, train_labels, test_tokens, test_labels = _load_mode_datasets(config)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    pooled_train = {m: pool_tokens(t) for m, t in train_tokens.items()}
    pooled_test = {m: pool_tokens(t) for m, t in test_tokens.items()}

    splits = {}
    for mode, pooled in pooled_train.items():
        full = Dataset(pooled, train_labels)
        splits[mode] = ann.stratified_split(full, config.val_fraction, config.seed)

    weights_by_tag = {"unweighted": None}
    if "weighted" in config.weightings:
        fit_labels = next(iter(splits.values()))[0].labels if splits else train_labels
        weights_by_tag["weighted"] = ann.compute_class_weights(fit_labels.counts())

    # Rankings are independent of loss weighting; compute once per
    # (mode, selection) pair and reuse across the weighted/unweighted cells.
    rankings = {}
    for mode_name in config.modes:
        mode = MODE_NAMES[mode_name]
        fit, _ = splits[mode]
        for sel_name in config.selections:
            method = rankers.SelectionMethod(sel_name)
            scores = rankers.rank_features(fit, method, seed=config.seed)
            rule = rankers.SelectionRule(method)
            ranking = rankers.apply_selection(scores, rule)
            rankings[(mode_name, sel_name)] = ranking
            if out_dir is not None:
                rankers.write_ranking_csv(
                    ranking, rule,
                    os.path.join(out_dir, f"ranking_{mode_name}_{sel_name}.csv"),
                )
                with open(
                    os.path.join(out_dir, f"scores_{mode_name}_{sel_name}.txt"), "w"
                ) as fh:
                    fh.write(rankers.score_distribution(scores))

    cells = [
        (mode_name, sel_name, wtag)
        for mode_name in config.modes
        for sel_name in config.selections
        for wtag in config.weightings
    ]

    def run_one(cell):
        mode_name, sel_name, wtag = cell
        mode = MODE_NAMES[mode_name]
        fit, val = splits[mode]
        ranking = rankings[(mode_name, sel_name)]
        try:
            scores, report = _run_cell(
                fit, val, pooled_test[mode], test_labels,
                ranking.keep_mask, weights_by_tag[wtag], config.ann, config.seed,
            )
            row = {
                "extraction_mode": mode_name,
                "selection_method": sel_name,
                "weighting": wtag,
                "f1_rubbish": repr(scores.per_class[0]),
                "f1_healthy": repr(scores.per_class[1]),
                "f1_unhealthy": repr(scores.per_class[2]),
                "macro_f1": repr(scores.macro),
            }
            return row, report, None
        except Exception as exc:  # isolate the cell, keep the grid running
            row = {
                "extraction_mode": mode_name,
                "selection_method": sel_name,
                "weighting": wtag,
                "f1_rubbish": "nan",
                "f1_healthy": "nan",
                "f1_unhealthy": "nan",
                "macro_f1": "nan",
            }
            return row, None, f"{mode_name}/{sel_name}/{wtag}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, cells))
    else:
        results = [run_one(c) for c in cells]

    rows, failures = [], []
    for cell, (row, report, err) in zip(cells, results):
        rows.append(row)
        if err is not None:
            failures.append(err)
        elif out_dir is not None:
            mode_name, sel_name, wtag = cell
            ann.write_train_report_csv(
                report,
                os.path.join(out_dir, f"train_{mode_name}_{sel_name}_{wtag}.csv"),
            )

    # Baseline: single linear head, no selection, on image-token pooling
    # (that is what the reference encoder's own classifier consumes).
    baseline_mode = "image" if "image" in config.modes else config.modes[0]
    mode = MODE_NAMES[baseline_mode]
    fit, val = splits[mode]
    for wtag in config.weightings if config.include_baseline else []:
        try:
            report = ann.baseline_head(
                fit, val,
                epochs=config.ann.epochs,
                class_weights=weights_by_tag[wtag],
                seed=config.seed,
                learning_rate=config.ann.learning_rate,
                batch_size=config.ann.batch_size,
            )
            pred, _ = ann.predict(report.best_params, pooled_test[mode])
            scores = metrics.macro_f1(test_labels, pred)
            rows.append({
                "extraction_mode": baseline_mode,
                "selection_method": "baseline",
                "weighting": wtag,
                "f1_rubbish": repr(scores.per_class[0]),
                "f1_healthy": repr(scores.per_class[1]),
                "f1_unhealthy": repr(scores.per_class[2]),
                "macro_f1": repr(scores.macro),
            })
        except Exception as exc:
            rows.append({
                "extraction_mode": baseline_mode,
                "selection_method": "baseline",
                "weighting": wtag,
                "f1_rubbish": "nan",
                "f1_healthy": "nan",
                "f1_unhealthy": "nan",
                "macro_f1": "nan",
            })
            failures.append(f"{baseline_mode}/baseline/{wtag}: {exc}")

    if out_dir is not None:
        metrics.write_metrics_csv(rows, os.path.join(out_dir, "metrics.csv"))
        _write_summary(rows, failures, os.path.join(out_dir, "summary.txt"))
    return GridReport(rows, failures)


def _write_summary(rows, failures, path) -> None:
    lines = ["extraction  selection  weighting  macro_f1"]
    for row in rows:
        try:
            macro = f"{float(row['macro_f1']):.4f}"
        except ValueError:
            macro = "failed"
        lines.append(
            f"{row['extraction_mode']:<11} {row['selection_method']:<10} "
            f"{row['weighting']:<10} {macro}"
        )
    if failures:
        lines.append("")
        lines.append("failures:")
        lines.extend(f"  {f}" for f in failures)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
