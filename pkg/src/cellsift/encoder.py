"""Miniature transformer encoder with extraction hooks.

Images are cut into patches, projected, prepended with a trainable class
token, and run through pre-norm transformer blocks. The classifier head
sees the mean of the image tokens only; the class token rides along in
attention but never reaches the head. Tokens can be pulled out after the
final block as class / image / all tokens.

Gradients are hand-derived and float64 end to end, so central finite
differences reproduce them to tight tolerance.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .tensors import (
    ExtractionMode,
    LabelVector,
    TokenTensor,
    read_tensor_file,
    write_tensor_file,
)

_BLOCK_KEYS = (
    "ln1_g", "ln1_b",
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln2_g", "ln2_b",
    "w1", "b1", "w2", "b2",
)


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 28
    patch_size: int = 7
    embed_dim: int = 32
    depth: int = 2
    heads: int = 4
    num_classes: int = 3
    channels: int = 1
    mlp_ratio: int = 4

    def __post_init__(self):
        for name in ("image_size", "patch_size", "embed_dim", "depth", "heads",
                     "num_classes", "channels", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def hidden_dim(self) -> int:
        return self.mlp_ratio * self.embed_dim


@dataclass
class EncoderState:
    config: EncoderConfig
    params: dict[str, np.ndarray] = field(repr=False)

    def copy(self) -> "EncoderState":
        return EncoderState(self.config, {k: v.copy() for k, v in self.params.items()})


@dataclass
class FineTuneReport:
    state: "EncoderState"
    history: list[float]
    lr_history: list[float]
    best_epoch: int


class ReduceOnPlateau:
    """Halve the learning rate after patience+1 consecutive non-improving
    epochs (strict improvement resets the streak)."""

    def __init__(self, lr: float, patience: int = 2, factor: float = 0.5):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = np.inf
        self.bad_epochs = 0

    def update(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


def init_encoder(config: EncoderConfig, seed: int = 0) -> EncoderState:
    """Fresh encoder state; weights ~ N(0, 0.02), biases zero, LN identity."""
    rng = np.random.default_rng(seed)
    e, f = config.embed_dim, config.hidden_dim
    std = 0.02

    def normal(*shape):
        return rng.standard_normal(shape) * std

    params: dict[str, np.ndarray] = {
        "patch_w": normal(config.patch_dim, e),
        "patch_b": np.zeros(e),
        "cls": normal(e),
        "pos": normal(config.num_patches + 1, e),
        "head_w": normal(e, config.num_classes),
        "head_b": np.zeros(config.num_classes),
    }
    for i in range(config.depth):
        p = f"blk{i}."
        params[p + "ln1_g"] = np.ones(e)
        params[p + "ln1_b"] = np.zeros(e)
        for w, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
            params[p + w] = normal(e, e)
            params[p + b] = np.zeros(e)
        params[p + "ln2_g"] = np.ones(e)
        params[p + "ln2_b"] = np.zeros(e)
        params[p + "w1"] = normal(e, f)
        params[p + "b1"] = np.zeros(f)
        params[p + "w2"] = normal(f, e)
        params[p + "b2"] = np.zeros(e)
    return EncoderState(config, params)


def _patchify(images: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """(B, H, W, C) -> (B, P, patch_dim) in raster patch order."""
    b, h, w, c = images.shape
    if (h, w, c) != (config.image_size, config.image_size, config.channels):
        raise ValueError(
            f"image shape {(h, w, c)} does not match config "
            f"({config.image_size}, {config.image_size}, {config.channels})"
        )
    p = config.patch_size
    g = h // p
    patches = images.reshape(b, g, p, g, p, c).transpose(0, 1, 3, 2, 4, 5)
    return patches.reshape(b, g * g, p * p * c)


def _forward_batch(state: EncoderState, images: np.ndarray, need_cache: bool = False):
    """Run the encoder; returns output dict and (optionally) caches."""
    cfg = state.config
    pr = state.params
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    patches = _patchify(images, cfg)
    b = patches.shape[0]

    emb, emb_cache = layers.linear_forward(patches, pr["patch_w"], pr["patch_b"])
    cls = np.broadcast_to(pr["cls"], (b, 1, cfg.embed_dim))
    t = np.concatenate([cls, emb], axis=1) + pr["pos"]

    block_caches = []
    attn_probs = []
    for i in range(cfg.depth):
        p = f"blk{i}."
        a_in, ln1_cache = layers.layer_norm_forward(t, pr[p + "ln1_g"], pr[p + "ln1_b"])
        att, probs, att_cache = layers.attention_forward(
            a_in,
            pr[p + "wq"], pr[p + "bq"], pr[p + "wk"], pr[p + "bk"],
            pr[p + "wv"], pr[p + "bv"], pr[p + "wo"], pr[p + "bo"],
            cfg.heads,
        )
        t = t + att
        f_in, ln2_cache = layers.layer_norm_forward(t, pr[p + "ln2_g"], pr[p + "ln2_b"])
        h, lin1_cache = layers.linear_forward(f_in, pr[p + "w1"], pr[p + "b1"])
        act, gelu_cache = layers.gelu_forward(h)
        ffn, lin2_cache = layers.linear_forward(act, pr[p + "w2"], pr[p + "b2"])
        t = t + ffn
        attn_probs.append(probs)
        if need_cache:
            block_caches.append(
                (ln1_cache, att_cache, ln2_cache, lin1_cache, gelu_cache, lin2_cache)
            )

    class_tokens = t[:, 0, :]
    image_tokens = t[:, 1:, :]
    pooled = image_tokens.mean(axis=1)
    logits, head_cache = layers.linear_forward(pooled, pr["head_w"], pr["head_b"])
    out = {
        "tokens": t,
        "class_tokens": class_tokens,
        "image_tokens": image_tokens,
        "pooled": pooled,
        "logits": logits,
        "attn_probs": attn_probs,
    }
    caches = (emb_cache, block_caches, head_cache) if need_cache else None
    return out, caches


def forward(state: EncoderState, image: np.ndarray):
    """Single-image forward: (class_token (E,), image_tokens (P, E), logits)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    out, _ = _forward_batch(state, image[None])
    return out["class_tokens"][0], out["image_tokens"][0], out["logits"][0]


def loss_and_gradients(
    state: EncoderState,
    images: np.ndarray,
    labels,
    class_weights=None,
):
    """Weighted cross-entropy over a batch plus gradients for every parameter."""
    cfg = state.config
    pr = state.params
    y = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    out, caches = _forward_batch(state, images, need_cache=True)
    emb_cache, block_caches, head_cache = caches
    loss, dlogits = layers.weighted_ce_loss_and_grad(out["logits"], y, class_weights)

    grads: dict[str, np.ndarray] = {}
    dpooled, grads["head_w"], grads["head_b"] = layers.linear_backward(
        dlogits, head_cache, pr["head_w"]
    )
    b, l, e = out["tokens"].shape
    p_count = l - 1
    dt = np.zeros((b, l, e))
    dt[:, 1:, :] = dpooled[:, None, :] / p_count

    for i in reversed(range(cfg.depth)):
        p = f"blk{i}."
        ln1_cache, att_cache, ln2_cache, lin1_cache, gelu_cache, lin2_cache = (
            block_caches[i]
        )
        dact, grads[p + "w2"], grads[p + "b2"] = layers.linear_backward(
            dt, lin2_cache, pr[p + "w2"]
        )
        dh = layers.gelu_backward(dact, gelu_cache)
        df_in, grads[p + "w1"], grads[p + "b1"] = layers.linear_backward(
            dh, lin1_cache, pr[p + "w1"]
        )
        dmid, grads[p + "ln2_g"], grads[p + "ln2_b"] = layers.layer_norm_backward(
            df_in, ln2_cache
        )
        dmid = dt + dmid
        da_in, att_grads = layers.attention_backward(
            dmid, att_cache, pr[p + "wq"], pr[p + "wk"], pr[p + "wv"], pr[p + "wo"]
        )
        for k, v in att_grads.items():
            grads[p + k] = v
        dres, grads[p + "ln1_g"], grads[p + "ln1_b"] = layers.layer_norm_backward(
            da_in, ln1_cache
        )
        dt = dmid + dres

    grads["pos"] = dt.sum(axis=0)
    grads["cls"] = dt[:, 0, :].sum(axis=0)
    _, grads["patch_w"], grads["patch_b"] = layers.linear_backward(
        dt[:, 1:, :], emb_cache, pr["patch_w"]
    )
    return loss, grads


def batch_loss(state: EncoderState, images, labels, class_weights=None) -> float:
    y = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    out, _ = _forward_batch(state, images)
    loss, _ = layers.weighted_ce_loss_and_grad(out["logits"], y, class_weights)
    return float(loss)


def fine_tune(
    state: EncoderState,
    images: np.ndarray,
    labels,
    epochs: int = 20,
    class_weights=None,
    learning_rate: float = 1e-5,
    weight_decay: float = 0.05,
    batch_size: int = 32,
    seed: int = 0,
    patience: int = 2,
    factor: float = 0.5,
    val: tuple[np.ndarray, LabelVector] | None = None,
) -> FineTuneReport:
    """AdamW fine-tuning with a reduce-on-plateau learning-rate schedule.

    Tracks one loss per epoch and returns the epoch snapshot with the
    lowest monitored loss (training loss, or validation loss when a
    validation pair is supplied). The learning rate is halved after the
    monitored loss fails to improve for `patience` + 1 consecutive epochs.
    """
    y = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    weights_arr = None
    if class_weights is not None:
        weights_arr = np.asarray(
            getattr(class_weights, "weights", class_weights), dtype=np.float64
        )
    if epochs == 0:
        return FineTuneReport(state.copy(), [], [], -1)

    n = len(y)
    rng = np.random.default_rng(seed)
    work = state.copy()
    m = {k: np.zeros_like(v) for k, v in work.params.items()}
    v = {k: np.zeros_like(p) for k, p in work.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    scheduler = ReduceOnPlateau(learning_rate, patience, factor)

    history: list[float] = []
    lr_history: list[float] = []
    best_metric = np.inf
    best_state = work.copy()
    best_epoch = 0

    for epoch in range(epochs):
        lr = scheduler.lr
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            loss, grads = loss_and_gradients(work, images[idx], y[idx], weights_arr)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}"
                )
            step += 1
            bc1 = 1.0 - beta1**step
            bc2 = 1.0 - beta2**step
            for key, g in grads.items():
                m[key] = beta1 * m[key] + (1 - beta1) * g
                v[key] = beta2 * v[key] + (1 - beta2) * g * g
                update = (m[key] / bc1) / (np.sqrt(v[key] / bc2) + eps)
                work.params[key] -= lr * update + lr * weight_decay * work.params[key]
            epoch_loss += loss * len(idx)
        epoch_loss /= n

        if val is not None:
            metric = batch_loss(work, val[0], val[1], weights_arr)
        else:
            metric = epoch_loss
        history.append(float(epoch_loss))
        lr_history.append(lr)

        if metric < best_metric:
            best_metric = metric
            best_state = work.copy()
            best_epoch = epoch
        scheduler.update(metric)

    return FineTuneReport(best_state, history, lr_history, best_epoch)


def extract_tokens(
    state: EncoderState,
    images: np.ndarray,
    mode: ExtractionMode,
    batch_size: int = 64,
) -> TokenTensor:
    """Post-final-block tokens for a stack of images, per extraction mode.

    All-tokens output keeps the class token at token index 0, so slicing
    it reproduces the other two modes bit for bit.
    """
    mode = ExtractionMode(mode)
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    chunks = []
    for start in range(0, images.shape[0], batch_size):
        out, _ = _forward_batch(state, images[start : start + batch_size])
        chunks.append(out["tokens"].astype(np.float32))
    tokens = np.concatenate(chunks, axis=0)
    if mode == ExtractionMode.CLASS_TOKEN:
        return TokenTensor(tokens[:, :1, :], mode)
    if mode == ExtractionMode.IMAGE_TOKENS:
        return TokenTensor(tokens[:, 1:, :], mode)
    return TokenTensor(tokens, mode)


_MANIFEST = "manifest.txt"


def save_state(state: EncoderState, directory) -> None:
    """Persist parameters as one TNSR file each plus a manifest sidecar."""
    os.makedirs(directory, exist_ok=True)
    cfg = state.config
    lines = [
        f"image_size={cfg.image_size}",
        f"patch_size={cfg.patch_size}",
        f"embed_dim={cfg.embed_dim}",
        f"depth={cfg.depth}",
        f"heads={cfg.heads}",
        f"num_classes={cfg.num_classes}",
        f"channels={cfg.channels}",
        f"mlp_ratio={cfg.mlp_ratio}",
        "---",
    ]
    for name in sorted(state.params):
        value = state.params[name]
        padded = value.reshape((1,) + value.shape) if value.ndim == 2 else value.reshape(1, 1, -1)
        fname = name.replace(".", "_") + ".tnsr"
        # Parameter tensors ride in the container with the unconstrained
        # image-tokens mode byte; true shape lives in the manifest.
        write_tensor_file(
            TokenTensor(padded.astype(np.float32), ExtractionMode.IMAGE_TOKENS),
            os.path.join(directory, fname),
        )
        dims = ",".join(str(d) for d in value.shape)
        lines.append(f"{name} {dims} {fname}")
    with open(os.path.join(directory, _MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_state(directory) -> EncoderState:
    path = os.path.join(directory, _MANIFEST)
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    sep = lines.index("---")
    cfg_kv = dict(ln.split("=", 1) for ln in lines[:sep])
    config = EncoderConfig(**{k: int(v) for k, v in cfg_kv.items()})
    params: dict[str, np.ndarray] = {}
    for ln in lines[sep + 1 :]:
        name, dims, fname = ln.split(" ")
        shape = tuple(int(d) for d in dims.split(","))
        tensor = read_tensor_file(os.path.join(directory, fname))
        params[name] = tensor.data.astype(np.float64).reshape(shape)
    return EncoderState(config, params)
