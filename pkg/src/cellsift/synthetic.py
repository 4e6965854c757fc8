"""Deterministic synthetic data for desk-scale verification.

Real cytology images and a pretrained encoder are out of reach for tests,
so every stage downstream of the encoder is exercised on seeded Gaussian
class clusters in feature space, plus an XOR-style variant that a linear
classifier provably cannot fit.
"""

from __future__ import annotations

import numpy as np

from .tensors import (
    Dataset,
    ExtractionMode,
    LabelVector,
    PooledFeatures,
    SplitTag,
    TokenTensor,
)

# Adjacent class means sit 4 standard deviations apart on every
# informative dimension (unit-variance noise), comfortably past the 3-sigma
# separability floor the tests rely on.
CLASS_SEPARATION = 4.0


def _class_means(num_classes: int, embed_dim: int, informative: int) -> np.ndarray:
    """Means matrix (C, E): informative dims carry +/- alternating offsets."""
    means = np.zeros((num_classes, embed_dim))
    for j in range(informative):
        sign = 1.0 if j % 2 == 0 else -1.0
        for c in range(num_classes):
            means[c, j] = sign * CLASS_SEPARATION * (c - 1)
    return means


def generate_synthetic(
    n_per_class: tuple[int, int, int],
    embed_dim: int,
    informative: int,
    seed: int,
    split_tag: SplitTag = SplitTag.TRAIN,
) -> Dataset:
    """Gaussian class clusters in pooled-feature space.

    Dimensions ``0..informative-1`` get class-dependent means separated by
    at least 3 sigma; the remaining dimensions are class-independent unit
    noise. Same seed, same bytes.
    """
    if informative > embed_dim:
        raise ValueError(
            f"informative dims ({informative}) cannot exceed embed_dim ({embed_dim})"
        )
    counts = [int(c) for c in n_per_class]
    if len(counts) != 3 or min(counts) < 0:
        raise ValueError("n_per_class must be three non-negative counts")
    rng = np.random.default_rng(seed)
    total = sum(counts)
    means = _class_means(3, embed_dim, informative)
    features = rng.standard_normal((total, embed_dim))
    labels = np.repeat(np.arange(3), counts)
    features += means[labels]
    return Dataset(PooledFeatures(features), LabelVector(labels), split_tag)


def generate_xor(
    n_per_class: tuple[int, int, int],
    embed_dim: int,
    seed: int,
    scale: float = 3.0,
    split_tag: SplitTag = SplitTag.TRAIN,
) -> Dataset:
    """XOR-style clusters on dims 0 and 1; no linear separator exists.

    Class 0 occupies the (+,+) and (-,-) quadrant corners, class 1 the
    (+,-) and (-,+) corners, class 2 a blob at the origin. Remaining
    dimensions are pure noise.
    """
    if embed_dim < 2:
        raise ValueError("XOR data needs embed_dim >= 2")
    counts = [int(c) for c in n_per_class]
    if len(counts) != 3 or min(counts) < 0:
        raise ValueError("n_per_class must be three non-negative counts")
    rng = np.random.default_rng(seed)
    total = sum(counts)
    features = rng.standard_normal((total, embed_dim))
    labels = np.repeat(np.arange(3), counts)
    corner = np.where(rng.random(total) < 0.5, 1.0, -1.0)
    x0 = np.where(labels == 2, 0.0, corner * scale)
    x1 = np.where(labels == 2, 0.0, np.where(labels == 0, corner, -corner) * scale)
    features[:, 0] += x0
    features[:, 1] += x1
    return Dataset(PooledFeatures(features), LabelVector(labels), split_tag)


def synthesize_token_tensors(
    pooled: PooledFeatures, image_tokens: int, seed: int, jitter_scale: float = 0.5
) -> dict[ExtractionMode, TokenTensor]:
    """Expand pooled vectors into per-mode token tensors for grid runs.

    The image tokens are the pooled vector plus zero-mean jitter, so mean
    pooling recovers the original signal; the class token is the pooled
    vector itself; all-tokens is their concatenation with the class token
    at index 0 (the same slicing identities the encoder guarantees).
    """
    if image_tokens < 1:
        raise ValueError("need at least one image token")
    rng = np.random.default_rng(seed)
    base = pooled.data
    n, e = base.shape
    jitter = rng.standard_normal((n, image_tokens, e)) * jitter_scale
    jitter -= jitter.mean(axis=1, keepdims=True)
    cls = base[:, None, :].astype(np.float32)
    img = (base[:, None, :] + jitter).astype(np.float32)
    return {
        ExtractionMode.CLASS_TOKEN: TokenTensor(cls, ExtractionMode.CLASS_TOKEN),
        ExtractionMode.IMAGE_TOKENS: TokenTensor(img, ExtractionMode.IMAGE_TOKENS),
        ExtractionMode.ALL_TOKENS: TokenTensor(
            np.concatenate([cls, img], axis=1), ExtractionMode.ALL_TOKENS
        ),
    }


def toy_image_dataset(
    n_per_class: tuple[int, int, int],
    image_size: int,
    channels: int = 1,
    seed: int = 0,
    noise: float = 0.1,
) -> tuple[np.ndarray, LabelVector]:
    """Solid-intensity class images with additive noise, (N, H, W, C).

    Linearly separable by construction; enough for the toy encoder to show
    loss descent within a handful of epochs.
    """
    counts = [int(c) for c in n_per_class]
    rng = np.random.default_rng(seed)
    total = sum(counts)
    labels = np.repeat(np.arange(3), counts)
    intensity = np.array([0.2, 0.5, 0.8])[labels]
    images = intensity[:, None, None, None] + noise * rng.standard_normal(
        (total, image_size, image_size, channels)
    )
    return images, LabelVector(labels)
