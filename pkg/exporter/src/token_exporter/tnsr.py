"""TNSR container I/O, implemented against the published byte layout.

Little-endian: magic "TNSR" | version u32 = 1 | mode u8 (0=class,
1=image, 2=all) | 3 reserved zero bytes | N u64 | L u64 | E u64 |
N*L*E float32 payload in row-major (n, l, e) order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
_HEADER = struct.Struct("<4sIB3xQQQ")

MODE_BYTES = {"class": 0, "image": 1, "all": 2}


def write_tnsr(data: np.ndarray, mode: str, path) -> int:
    """Write one rank-3 float32 tensor; returns bytes written."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError(f"tensor must be rank 3, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("tensor contains non-finite values")
    n, l, e = data.shape
    header = _HEADER.pack(MAGIC, VERSION, MODE_BYTES[mode], n, l, e)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
    return _HEADER.size + data.nbytes


def read_tnsr(path) -> tuple[np.ndarray, int]:
    """Read back one tensor; returns (array, mode byte). Validation only
    covers what the tests need; the pipeline package is the authority."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        magic, version, mode, n, l, e = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"unsupported version {version}")
        payload = fh.read(n * l * e * 4)
    if len(payload) < n * l * e * 4:
        raise ValueError("truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(n, l, e), mode
