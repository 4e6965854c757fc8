"""Core data model and binary serialization.

Defines the token tensor / pooled feature / label containers shared by the
whole pipeline, the 4-to-3 class merge applied at ingestion, and the TNSR
binary tensor format (little-endian, 32-bit float payload).
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import BinaryIO, Union

import numpy as np

# Canonical class codes. Raw data may additionally carry BOTH_CELLS, which
# is merged into UNHEALTHY before anything downstream sees it.
RUBBISH = 0
HEALTHY = 1
UNHEALTHY = 2
BOTH_CELLS = 3

CLASS_NAMES = ("rubbish", "healthy", "unhealthy")
RAW_CLASS_NAMES = ("rubbish", "healthy", "unhealthy", "both")
NUM_CLASSES = 3

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1
_HEADER = struct.Struct("<4sIB3xQQQ")  # magic, version, mode, pad, N, L, E


class ExtractionMode(IntEnum):
    """Where tokens were taken from the encoder output."""

    CLASS_TOKEN = 0
    IMAGE_TOKENS = 1
    ALL_TOKENS = 2


class SplitTag(IntEnum):
    TRAIN = 0
    VALIDATION = 1
    TEST = 2


class TensorFormatError(ValueError):
    """Base class for malformed TNSR streams."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class NonFiniteError(TensorFormatError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TokenTensor:
    """Rank-3 feature array of shape (N, L, E), stored as float32.

    N is the number of samples, L the token count per sample, E the
    embedding width. The extraction mode pins L's meaning: a class-token
    tensor has L = 1, an all-tokens tensor has L = image tokens + 1.
    """

    data: np.ndarray
    extraction_mode: ExtractionMode

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"token tensor must be rank 3, got shape {data.shape}")
        n, l, e = data.shape
        if n < 1 or l < 1 or e < 1:
            raise ValueError(f"all dims must be >= 1, got {data.shape}")
        mode = ExtractionMode(self.extraction_mode)
        if mode == ExtractionMode.CLASS_TOKEN and l != 1:
            raise ValueError(f"class-token tensor requires L=1, got L={l}")
        if mode == ExtractionMode.ALL_TOKENS and l < 2:
            raise ValueError(f"all-tokens tensor requires L>=2, got L={l}")
        if not np.isfinite(data).all():
            raise ValueError("token tensor contains non-finite values")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "extraction_mode", mode)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def token_count(self) -> int:
        return self.data.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class PooledFeatures:
    """Rank-2 feature array of shape (N, E): one vector per sample."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"pooled features must be rank 2, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("pooled features contain non-finite values")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelVector:
    """Integer labels in {0, 1, 2} = {rubbish, healthy, unhealthy}."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be a 1-D array")
        bad = (labels < 0) | (labels >= NUM_CLASSES)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(
                f"label {labels[i]} at index {i} outside merged alphabet {{0,1,2}}"
            )
        object.__setattr__(self, "labels", _freeze(labels))

    def __len__(self) -> int:
        return self.labels.shape[0]

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)


Features = Union[PooledFeatures, TokenTensor]


@dataclass(frozen=True)
class Dataset:
    """Features paired with labels; row counts must agree."""

    features: Features
    labels: LabelVector
    split_tag: SplitTag = SplitTag.TRAIN

    def __post_init__(self):
        if self.features.n != len(self.labels):
            raise ValueError(
                f"feature rows ({self.features.n}) != label count ({len(self.labels)})"
            )
        object.__setattr__(self, "split_tag", SplitTag(self.split_tag))

    @property
    def n(self) -> int:
        return self.features.n


def merge_labels(raw) -> LabelVector:
    """Map the raw 4-category labels onto the merged 3-class alphabet.

    The training-only "both cells" category (code 3) becomes "unhealthy"
    (code 2); the other categories pass through. Idempotent on already
    merged labels.
    """
    raw = np.asarray(raw, dtype=np.int64)
    if raw.ndim != 1:
        raise ValueError("raw labels must be a 1-D array")
    bad = (raw < 0) | (raw > BOTH_CELLS)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(f"unknown category code {raw[i]} at index {i}")
    merged = np.where(raw == BOTH_CELLS, UNHEALTHY, raw)
    return LabelVector(merged)


def write_tensor(t: TokenTensor, sink: BinaryIO) -> int:
    """Serialize a token tensor to the TNSR format; returns bytes written.

    Layout (little-endian): magic "TNSR" | version u32 | mode u8 |
    3 reserved zero bytes | N u64 | L u64 | E u64 | N*L*E float32 payload
    in row-major (n, l, e) index order.
    """
    n, l, e = t.data.shape
    header = _HEADER.pack(TNSR_MAGIC, TNSR_VERSION, int(t.extraction_mode), n, l, e)
    payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def read_tensor(source: BinaryIO) -> TokenTensor:
    """Deserialize a TNSR stream back into a TokenTensor.

    Raises BadMagicError, UnsupportedVersionError, TruncatedPayloadError or
    NonFiniteError depending on what is wrong with the stream.
    """
    header = source.read(_HEADER.size)
    if len(header) >= 4 and header[:4] != TNSR_MAGIC:
        raise BadMagicError(f"expected magic {TNSR_MAGIC!r}, got {header[:4]!r}")
    if len(header) < _HEADER.size:
        raise TruncatedPayloadError(
            f"header truncated: got {len(header)} of {_HEADER.size} bytes"
        )
    magic, version, mode, n, l, e = _HEADER.unpack(header)
    if version != TNSR_VERSION:
        raise UnsupportedVersionError(f"unsupported TNSR version {version}")
    try:
        mode = ExtractionMode(mode)
    except ValueError:
        raise TensorFormatError(f"unknown extraction mode byte {mode}") from None
    if min(n, l, e) < 1:
        raise TensorFormatError(f"invalid dims ({n}, {l}, {e}); all must be >= 1")
    expected = n * l * e * 4
    payload = source.read(expected)
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"payload truncated: got {len(payload)} of {expected} bytes"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(n, l, e)
    if not np.isfinite(data).all():
        raise NonFiniteError("payload contains NaN or Inf values")
    try:
        return TokenTensor(data, mode)
    except ValueError as exc:
        raise TensorFormatError(str(exc)) from None


def write_tensor_file(t: TokenTensor, path) -> int:
    with open(path, "wb") as fh:
        return write_tensor(t, fh)


def read_tensor_file(path) -> TokenTensor:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def tensor_to_bytes(t: TokenTensor) -> bytes:
    buf = io.BytesIO()
    write_tensor(t, buf)
    return buf.getvalue()


def tensor_from_bytes(raw: bytes) -> TokenTensor:
    return read_tensor(io.BytesIO(raw))


def write_labels_csv(labels, path) -> None:
    """Write labels as CSV with header ``index,label``.

    Accepts a LabelVector (merged names) or a raw integer array that may
    still contain the "both" category.
    """
    values = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label"])
        for i, v in enumerate(values):
            writer.writerow([i, RAW_CLASS_NAMES[int(v)]])


def read_labels_csv(path) -> LabelVector:
    """Read an ``index,label`` CSV and merge to the 3-class alphabet."""
    name_to_code = {name: code for code, name in enumerate(RAW_CLASS_NAMES)}
    raw = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"index", "label"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected CSV header 'index,label'")
        for row in reader:
            name = row["label"].strip().lower()
            if name not in name_to_code:
                raise ValueError(
                    f"{path}: unknown label {row['label']!r} at index {row['index']}"
                )
            raw.append(name_to_code[name])
    return merge_labels(np.asarray(raw, dtype=np.int64))
