"""Command-line entry point: one thin subcommand per pipeline stage.

Exit codes: 0 success, 2 usage error (bad flags), 3 invalid input
(missing paths, malformed files, contract violations), 4 runtime failure.
Inputs are validated before any output file is created, and nothing is
written outside the --out directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import ann, encoder, explain, metrics, rankers
from .grid import ExperimentConfig, run_grid
from .pooling import pool_tokens
from .synthetic import generate_synthetic, generate_xor, toy_image_dataset
from .tensors import (
    Dataset,
    ExtractionMode,
    LabelVector,
    PooledFeatures,
    TokenTensor,
    read_labels_csv,
    read_tensor_file,
    write_labels_csv,
    write_tensor_file,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4

_MODE_BY_NAME = {
    "class": ExtractionMode.CLASS_TOKEN,
    "image": ExtractionMode.IMAGE_TOKENS,
    "all": ExtractionMode.ALL_TOKENS,
}


def _counts(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated counts")
    return tuple(parts)


def _require_files(*paths) -> None:
    for p in paths:
        if not os.path.exists(p):
            raise FileNotFoundError(f"input path does not exist: {p}")


def _load_pooled(path) -> PooledFeatures:
    tensor = read_tensor_file(path)
    if tensor.token_count != 1:
        raise ValueError(
            f"{path}: expected pooled features (L=1), got L={tensor.token_count}; "
            "run the pool subcommand first"
        )
    return PooledFeatures(tensor.data[:, 0, :].astype(np.float64))


def _write_pooled(features: PooledFeatures, path) -> None:
    data = features.data.astype(np.float32)[:, None, :]
    write_tensor_file(TokenTensor(data, ExtractionMode.CLASS_TOKEN), path)


def _cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "xor":
        data = generate_xor(args.n_per_class, args.embed_dim, seed=args.seed)
    else:
        data = generate_synthetic(
            args.n_per_class, args.embed_dim, args.informative, seed=args.seed
        )
    _write_pooled(data.features, os.path.join(args.out, "features.tnsr"))
    write_labels_csv(data.labels, os.path.join(args.out, "labels.csv"))
    print(f"wrote {data.n} samples, E={args.embed_dim} -> {args.out}")
    return EXIT_OK


def _cmd_finetune_toy(args) -> int:
    config = encoder.EncoderConfig()
    images, labels = toy_image_dataset(
        args.n_per_class, config.image_size, config.channels, seed=args.seed
    )
    state = encoder.init_encoder(config, seed=args.seed)
    weights = None
    if args.weighted:
        weights = ann.compute_class_weights(labels.counts())
    report = encoder.fine_tune(
        state, images, labels,
        epochs=args.epochs,
        class_weights=weights,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    encoder.save_state(report.state, os.path.join(args.out, "encoder"))
    with open(os.path.join(args.out, "loss_history.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "learning_rate"])
        for i, (loss, lr) in enumerate(zip(report.history, report.lr_history)):
            writer.writerow([i, repr(loss), repr(lr)])
        fh.write(f"# best_epoch={report.best_epoch}\n")
    print(f"fine-tuned {args.epochs} epochs, best epoch {report.best_epoch}")
    return EXIT_OK


def _cmd_extract(args) -> int:
    _require_files(os.path.join(args.state, "manifest.txt"))
    state = encoder.load_state(args.state)
    images, labels = toy_image_dataset(
        args.n_per_class, state.config.image_size, state.config.channels,
        seed=args.seed,
    )
    mode = _MODE_BY_NAME[args.mode]
    tokens = encoder.extract_tokens(state, images, mode)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"tokens_{args.mode}.tnsr")
    write_tensor_file(tokens, out_path)
    write_labels_csv(labels, os.path.join(args.out, "labels.csv"))
    print(f"wrote {out_path} shape {tokens.data.shape}")
    return EXIT_OK


def _cmd_pool(args) -> int:
    _require_files(args.tensor)
    tokens = read_tensor_file(args.tensor)
    pooled = pool_tokens(tokens)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "pooled.tnsr")
    _write_pooled(pooled, out_path)
    print(f"pooled {tokens.data.shape} -> {pooled.data.shape} at {out_path}")
    return EXIT_OK


def _cmd_rank(args) -> int:
    _require_files(args.features, args.labels)
    features = _load_pooled(args.features)
    labels = read_labels_csv(args.labels)
    data = Dataset(features, labels)
    method = rankers.SelectionMethod(args.method)
    scores = rankers.rank_features(data, method, seed=args.seed)
    rule = rankers.SelectionRule(method, args.threshold)
    ranking = rankers.apply_selection(scores, rule)
    os.makedirs(args.out, exist_ok=True)
    rankers.write_ranking_csv(ranking, rule, os.path.join(args.out, "ranking.csv"))
    with open(os.path.join(args.out, "score_distribution.txt"), "w") as fh:
        fh.write(rankers.score_distribution(scores))
    print(
        f"method={method.value} kept {ranking.kept}/{scores.size} "
        f"(filtered {ranking.filtered_fraction:.4f})"
    )
    return EXIT_OK


def _read_ranking_scores(path) -> np.ndarray:
    scores = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(ln for ln in fh if not ln.startswith("#")):
            scores.append(float(row["score"]))
    return np.asarray(scores)


def _cmd_select(args) -> int:
    _require_files(args.features, args.ranking)
    features = _load_pooled(args.features)
    scores = _read_ranking_scores(args.ranking)
    method = rankers.SelectionMethod(args.method)
    rule = rankers.SelectionRule(method, args.threshold)
    ranking = rankers.apply_selection(scores, rule)
    projected = rankers.project_features(features, ranking.keep_mask)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "projected.tnsr")
    _write_pooled(projected, out_path)
    rankers.write_ranking_csv(ranking, rule, os.path.join(args.out, "ranking.csv"))
    print(f"kept {ranking.kept}/{scores.size} features -> {out_path}")
    return EXIT_OK


def _cmd_train_ann(args) -> int:
    _require_files(args.features, args.labels)
    features = _load_pooled(args.features)
    labels = read_labels_csv(args.labels)
    full = Dataset(features, labels)
    train, val = ann.stratified_split(full, args.val_fraction, args.seed)
    weights = None
    if args.weighted:
        weights = ann.compute_class_weights(train.labels.counts())
    hidden = () if args.baseline else ann.DEFAULT_HIDDEN
    report = ann.train_mlp(
        train, val,
        epochs=args.epochs,
        class_weights=weights,
        seed=args.seed,
        hidden=hidden,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
    )
    os.makedirs(args.out, exist_ok=True)
    ann.save_params(report.best_params, os.path.join(args.out, "params"))
    ann.write_train_report_csv(report, os.path.join(args.out, "train_report.csv"))
    print(
        f"best epoch {report.best_epoch}, "
        f"val loss {report.val_loss[report.best_epoch]:.6f}"
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    _require_files(os.path.join(args.params, "manifest.txt"), args.features, args.labels)
    params = ann.load_params(args.params)
    features = _load_pooled(args.features)
    labels = read_labels_csv(args.labels)
    pred, _ = ann.predict(params, features)
    scores = metrics.macro_f1(labels, pred)
    os.makedirs(args.out, exist_ok=True)
    metrics.write_metrics_csv(
        [{
            "extraction_mode": args.tag_extraction,
            "selection_method": args.tag_selection,
            "weighting": args.tag_weighting,
            "f1_rubbish": repr(scores.per_class[0]),
            "f1_healthy": repr(scores.per_class[1]),
            "f1_unhealthy": repr(scores.per_class[2]),
            "macro_f1": repr(scores.macro),
        }],
        os.path.join(args.out, "metrics.csv"),
    )
    print(
        f"per-class F1 {tuple(round(s, 4) for s in scores.per_class)} "
        f"macro {scores.macro:.4f}"
    )
    return EXIT_OK


def _cmd_shap(args) -> int:
    _require_files(os.path.join(args.params, "manifest.txt"), args.features, args.labels)
    params = ann.load_params(args.params)
    features = _load_pooled(args.features)
    labels = read_labels_csv(args.labels)
    x = features.data
    rng = np.random.default_rng(args.seed)
    bg_idx = rng.choice(x.shape[0], size=min(args.background, x.shape[0]), replace=False)
    background = x[bg_idx]
    count = min(args.instances, x.shape[0])
    model = lambda rows: ann.predict(params, rows)[1]  # noqa: E731

    os.makedirs(args.out, exist_ok=True)
    explanations = []
    predicted, _ = ann.predict(params, x[:count])
    for i in range(count):
        # Attribute the class the model actually predicts for the instance.
        target = int(predicted[i])
        exp = explain.kernel_shap(
            model, background, x[i], target,
            samples=args.samples, seed=args.seed + i, instance_index=i,
        )
        explanations.append(exp)
        explain.write_explanation_csv(
            exp, os.path.join(args.out, f"explanation_{i:04d}.csv")
        )
    gi = explain.global_importance(explanations)
    explain.write_global_csv(gi, os.path.join(args.out, "global_importance.csv"))
    report = explain.extreme_value_report(gi, features, k=min(5, x.shape[0] // 2))
    with open(os.path.join(args.out, "extreme_values.txt"), "w") as fh:
        fh.write(f"top_feature {report.feature}\n")
        for tag, pairs in (("high", report.high), ("low", report.low)):
            for sample_id, value in pairs:
                fh.write(f"{tag} {sample_id} {value!r}\n")
    print(f"explained {count} instances; top feature {gi.top_feature}")
    return EXIT_OK


def _cmd_grid(args) -> int:
    _require_files(args.config)
    config = ExperimentConfig.from_file(args.config)
    report = run_grid(config, args.out, jobs=args.jobs)
    ok = sum(1 for r in report.rows if r["macro_f1"] != "nan")
    print(f"grid complete: {ok}/{len(report.rows)} rows ok -> {args.out}")
    if report.failures:
        for failure in report.failures:
            print(f"cell failed: {failure}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellsift",
        description="token-feature classification pipeline with feature "
        "selection and Shapley explanations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory")
        return p

    p = add("synth", _cmd_synth, "generate synthetic pooled features + labels")
    p.add_argument("--n-per-class", type=_counts, default=(100, 100, 100))
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--informative", type=int, default=4)
    p.add_argument("--kind", choices=["gaussian", "xor"], default="gaussian")

    p = add("finetune-toy", _cmd_finetune_toy, "fine-tune the toy encoder on toy images")
    p.add_argument("--n-per-class", type=_counts, default=(40, 40, 40))
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--learning-rate", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--weighted", action="store_true")

    p = add("extract", _cmd_extract, "extract token tensors from a saved encoder")
    p.add_argument("--state", required=True, help="encoder state directory")
    p.add_argument("--mode", choices=["class", "image", "all"], required=True)
    p.add_argument("--n-per-class", type=_counts, default=(40, 40, 40))

    p = add("pool", _cmd_pool, "mean-pool a token tensor to (N, E)")
    p.add_argument("--tensor", required=True)

    p = add("rank", _cmd_rank, "train a ranker and emit importance scores")
    p.add_argument("--features", required=True, help="pooled TNSR file")
    p.add_argument("--labels", required=True)
    p.add_argument("--method", choices=["logreg", "forest", "boosting", "all"],
                   required=True)
    p.add_argument("--threshold", type=float, default=None)

    p = add("select", _cmd_select, "apply a threshold rule and project features")
    p.add_argument("--features", required=True)
    p.add_argument("--ranking", required=True, help="ranking.csv from rank")
    p.add_argument("--method", choices=["logreg", "forest", "boosting", "all"],
                   required=True)
    p.add_argument("--threshold", type=float, default=None)

    p = add("train-ann", _cmd_train_ann, "train the classifier on pooled features")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--baseline", action="store_true",
                   help="single linear layer instead of the deep network")

    p = add("eval", _cmd_eval, "evaluate saved params: per-class and macro F1")
    p.add_argument("--params", required=True, help="params directory")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--tag-extraction", default="custom")
    p.add_argument("--tag-selection", default="custom")
    p.add_argument("--tag-weighting", default="unweighted")

    p = add("shap", _cmd_shap, "kernel SHAP explanations for saved params")
    p.add_argument("--params", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--background", type=int, default=100)
    p.add_argument("--samples", type=int, default=None)

    p = add("grid", _cmd_grid, "run the full experiment grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (FileNotFoundError, KeyError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
