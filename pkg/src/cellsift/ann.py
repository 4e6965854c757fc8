"""Feed-forward classifier with optional class-weighted cross-entropy.

The main network has three hidden ReLU layers (1024, 512, 256) on top of
the pooled features; the baseline is the same trainer with no hidden
layers, i.e. a single affine map. Training runs for a fixed number of
epochs and keeps the checkpoint with the lowest validation loss.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .tensors import (
    Dataset,
    ExtractionMode,
    LabelVector,
    NUM_CLASSES,
    PooledFeatures,
    SplitTag,
    TokenTensor,
    read_tensor_file,
    write_tensor_file,
)

DEFAULT_HIDDEN = (1024, 512, 256)


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights w_c = max(counts) / counts_c."""

    counts: tuple[int, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def compute_class_weights(counts) -> ClassWeights:
    counts = tuple(int(c) for c in counts)
    if any(c <= 0 for c in counts):
        raise ValueError(f"every class count must be > 0, got {counts}")
    weights = max(counts) / np.asarray(counts, dtype=np.float64)
    return ClassWeights(counts, weights)


def weighted_cross_entropy(logits, label: int, class_weights: ClassWeights | None = None) -> float:
    """Loss for a single instance: -w_label * log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=np.float64)[None, :]
    w = None if class_weights is None else class_weights.weights
    loss, _ = layers.weighted_ce_loss_and_grad(logits, np.array([label]), w)
    return float(loss)


@dataclass
class MLPParams:
    sizes: tuple[int, ...]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)
    activation: str = "relu"

    def copy(self) -> "MLPParams":
        return MLPParams(
            self.sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    @property
    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    best_params: MLPParams


def init_mlp(input_dim: int, hidden=DEFAULT_HIDDEN, num_classes: int = NUM_CLASSES,
             seed: int = 0) -> MLPParams:
    """He-style uniform fan-in init, zero biases."""
    sizes = (input_dim, *hidden, num_classes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(sizes, weights, biases)


def _forward(params: MLPParams, x: np.ndarray):
    """Returns logits and the post-activation values needed for backward."""
    acts = [x]
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts[-1], acts


def loss_and_gradients(params: MLPParams, x: np.ndarray, y: np.ndarray,
                       class_weights=None):
    """Batch weighted cross-entropy and gradients for all layers."""
    w_arr = None
    if class_weights is not None:
        w_arr = np.asarray(getattr(class_weights, "weights", class_weights))
    logits, acts = _forward(params, x)
    loss, dlogits = layers.weighted_ce_loss_and_grad(logits, y, w_arr)
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    delta = dlogits
    for i in reversed(range(len(params.weights))):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params.weights[i].T
            delta = delta * (acts[i] > 0)  # ReLU mask on the post-activation
    return loss, grad_w, grad_b


def batch_loss(params: MLPParams, x: np.ndarray, y: np.ndarray, class_weights=None) -> float:
    w_arr = None
    if class_weights is not None:
        w_arr = np.asarray(getattr(class_weights, "weights", class_weights))
    logits, _ = _forward(params, x)
    loss, _ = layers.weighted_ce_loss_and_grad(logits, y, w_arr)
    return float(loss)


def _as_array(features) -> np.ndarray:
    if isinstance(features, PooledFeatures):
        return features.data
    return np.asarray(features, dtype=np.float64)


def train_mlp(
    data: Dataset,
    val: Dataset,
    epochs: int = 100,
    class_weights: ClassWeights | None = None,
    seed: int = 0,
    hidden=DEFAULT_HIDDEN,
    learning_rate: float = 1e-3,
    batch_size: int = 128,
) -> TrainReport:
    """Mini-batch Adam training; checkpoint = lowest validation loss.

    Deterministic for a fixed seed: initialization and the per-epoch
    shuffle come from the same seeded generator.
    """
    if epochs < 1:
        raise ValueError("training needs at least 1 epoch")
    x_train = _as_array(data.features)
    x_val = _as_array(val.features)
    if x_train.shape[1] != x_val.shape[1]:
        raise ValueError(
            f"train width {x_train.shape[1]} != validation width {x_val.shape[1]}"
        )
    y_train = data.labels.labels
    y_val = val.labels.labels

    rng = np.random.default_rng(seed)
    params = init_mlp(x_train.shape[1], hidden=hidden, seed=seed)
    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]
    scratch_w = [np.empty_like(w) for w in params.weights]
    scratch_b = [np.empty_like(b) for b in params.biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    def adam_step(p, g, m, v, tmp, lr_eff, bc2):
        # In-place Adam update; g is consumed as scratch for g*g.
        m *= beta1
        np.multiply(g, 1.0 - beta1, out=tmp)
        m += tmp
        v *= beta2
        np.multiply(g, g, out=g)
        g *= 1.0 - beta2
        v += g
        np.divide(v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr_eff
        p -= tmp

    n = x_train.shape[0]
    train_hist: list[float] = []
    val_hist: list[float] = []
    best_val = np.inf
    best_epoch = 0
    best_params = params.copy()

    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            loss, grad_w, grad_b = loss_and_gradients(
                params, x_train[idx], y_train[idx], class_weights
            )
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}"
                )
            step += 1
            lr_eff = learning_rate / (1.0 - beta1**step)
            bc2 = 1.0 - beta2**step
            for i in range(len(params.weights)):
                adam_step(params.weights[i], grad_w[i], m_w[i], v_w[i],
                          scratch_w[i], lr_eff, bc2)
                adam_step(params.biases[i], grad_b[i], m_b[i], v_b[i],
                          scratch_b[i], lr_eff, bc2)
            epoch_loss += loss * len(idx)
        train_hist.append(float(epoch_loss / n))

        val_loss = batch_loss(params, x_val, y_val, class_weights)
        val_hist.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = params.copy()

    return TrainReport(train_hist, val_hist, best_epoch, best_params)


def baseline_head(
    data: Dataset,
    val: Dataset,
    epochs: int = 100,
    class_weights: ClassWeights | None = None,
    seed: int = 0,
    learning_rate: float = 1e-3,
    batch_size: int = 128,
) -> TrainReport:
    """Single affine layer (E_in -> 3), trained exactly like the MLP."""
    return train_mlp(
        data,
        val,
        epochs=epochs,
        class_weights=class_weights,
        seed=seed,
        hidden=(),
        learning_rate=learning_rate,
        batch_size=batch_size,
    )


def predict(params: MLPParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Class per row (ties -> lowest class index) and softmax probabilities."""
    x = _as_array(x)
    if x.shape[1] != params.sizes[0]:
        raise ValueError(f"input width {x.shape[1]} != expected {params.sizes[0]}")
    logits, _ = _forward(params, x)
    probs = layers.softmax(logits, axis=-1)
    return probs.argmax(axis=1), probs


def stratified_split(data: Dataset, val_fraction: float = 0.1, seed: int = 0
                     ) -> tuple[Dataset, Dataset]:
    """Split off a validation set with per-class proportional sampling."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    x = _as_array(data.features)
    y = data.labels.labels
    rng = np.random.default_rng(seed)
    val_idx = []
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        k = max(1, int(round(len(members) * val_fraction)))
        val_idx.append(rng.permutation(members)[:k])
    val_mask = np.zeros(len(y), dtype=bool)
    val_mask[np.concatenate(val_idx)] = True
    train = Dataset(PooledFeatures(x[~val_mask]), LabelVector(y[~val_mask]), SplitTag.TRAIN)
    valid = Dataset(PooledFeatures(x[val_mask]), LabelVector(y[val_mask]), SplitTag.VALIDATION)
    return train, valid


def write_train_report_csv(report: TrainReport, path) -> None:
    """CSV rows (epoch, train_loss, val_loss) plus a trailing summary line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, va) in enumerate(zip(report.train_loss, report.val_loss)):
            writer.writerow([i, repr(tr), repr(va)])
        fh.write(
            f"# best_epoch={report.best_epoch} "
            f"best_val_loss={report.val_loss[report.best_epoch]!r}\n"
        )


_MANIFEST = "manifest.txt"


def save_params(params: MLPParams, directory) -> None:
    """Persist layer weights in the TNSR container with a manifest sidecar."""
    os.makedirs(directory, exist_ok=True)
    lines = [
        "sizes=" + ",".join(str(s) for s in params.sizes),
        f"activation={params.activation}",
        "---",
    ]
    tensors = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tensors[f"layer{i}_w"] = w
        tensors[f"layer{i}_b"] = b
    for name in sorted(tensors):
        value = tensors[name]
        padded = value.reshape((1,) + value.shape) if value.ndim == 2 else value.reshape(1, 1, -1)
        fname = name + ".tnsr"
        write_tensor_file(
            TokenTensor(padded.astype(np.float32), ExtractionMode.IMAGE_TOKENS),
            os.path.join(directory, fname),
        )
        dims = ",".join(str(d) for d in value.shape)
        lines.append(f"{name} {dims} {fname}")
    with open(os.path.join(directory, _MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(directory) -> MLPParams:
    with open(os.path.join(directory, _MANIFEST)) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    sep = lines.index("---")
    meta = dict(ln.split("=", 1) for ln in lines[:sep])
    sizes = tuple(int(s) for s in meta["sizes"].split(","))
    arrays = {}
    for ln in lines[sep + 1 :]:
        name, dims, fname = ln.split(" ")
        shape = tuple(int(d) for d in dims.split(","))
        arrays[name] = (
            read_tensor_file(os.path.join(directory, fname)).data.astype(np.float64).reshape(shape)
        )
    n_layers = len(sizes) - 1
    weights = [arrays[f"layer{i}_w"] for i in range(n_layers)]
    biases = [arrays[f"layer{i}_b"] for i in range(n_layers)]
    return MLPParams(sizes, weights, biases, meta["activation"])
