"""Data model, label merging, TNSR serialization, synthetic generation."""

import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellsift.tensors import (
    BadMagicError,
    Dataset,
    ExtractionMode,
    LabelVector,
    NonFiniteError,
    PooledFeatures,
    TensorFormatError,
    TokenTensor,
    TruncatedPayloadError,
    UnsupportedVersionError,
    merge_labels,
    read_labels_csv,
    read_tensor,
    tensor_from_bytes,
    tensor_to_bytes,
    write_labels_csv,
    write_tensor,
)
from cellsift.synthetic import generate_synthetic, generate_xor


class TestMergeLabels:
    def test_merge_rule(self):
        # rubbish, both -> unhealthy, healthy
        out = merge_labels(np.array([0, 3, 1]))
        assert out.labels.tolist() == [0, 2, 1]

    def test_empty(self):
        assert merge_labels(np.array([], dtype=int)).labels.tolist() == []

    def test_identity_on_merged(self):
        out = merge_labels(np.array([2, 2]))
        assert out.labels.tolist() == [2, 2]

    def test_unknown_code_names_index(self):
        with pytest.raises(ValueError, match="index 2"):
            merge_labels(np.array([0, 1, 7]))

    @given(st.lists(st.integers(min_value=0, max_value=3), max_size=50))
    def test_idempotent(self, raw):
        once = merge_labels(np.array(raw, dtype=int))
        twice = merge_labels(once.labels)
        assert np.array_equal(once.labels, twice.labels)


class TestTypes:
    def test_class_token_requires_l1(self):
        with pytest.raises(ValueError, match="L=1"):
            TokenTensor(np.zeros((2, 3, 4)), ExtractionMode.CLASS_TOKEN)

    def test_all_tokens_requires_l2(self):
        with pytest.raises(ValueError, match="L>=2"):
            TokenTensor(np.zeros((2, 1, 4)), ExtractionMode.ALL_TOKENS)

    def test_non_finite_rejected(self):
        data = np.zeros((1, 1, 2))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            TokenTensor(data, ExtractionMode.CLASS_TOKEN)

    def test_label_alphabet(self):
        with pytest.raises(ValueError, match="index 1"):
            LabelVector(np.array([0, 3]))

    def test_dataset_row_mismatch(self):
        with pytest.raises(ValueError, match="feature rows"):
            Dataset(PooledFeatures(np.zeros((3, 2))), LabelVector(np.array([0, 1])))

    def test_immutability(self):
        t = TokenTensor(np.zeros((1, 1, 2)), ExtractionMode.CLASS_TOKEN)
        with pytest.raises(ValueError):
            t.data[0, 0, 0] = 1.0


class TestTnsrFormat:
    def test_byte_count_and_payload_size(self):
        t = TokenTensor(np.zeros((1, 1, 4)), ExtractionMode.CLASS_TOKEN)
        sink = io.BytesIO()
        n = write_tensor(t, sink)
        raw = sink.getvalue()
        assert n == len(raw)
        assert len(raw) - 36 == 16  # 4 values x 4 bytes after the header

    def test_header_fields_byte_level(self):
        t = TokenTensor(np.arange(30, dtype=np.float32).reshape(2, 3, 5),
                        ExtractionMode.IMAGE_TOKENS)
        raw = tensor_to_bytes(t)
        assert raw[:4] == b"TNSR"
        assert struct.unpack("<I", raw[4:8])[0] == 1
        assert raw[8] == 1  # image-tokens mode byte
        assert raw[9:12] == b"\x00\x00\x00"
        assert struct.unpack("<QQQ", raw[12:36]) == (2, 3, 5)
        payload = np.frombuffer(raw[36:], dtype="<f4")
        assert np.array_equal(payload, np.arange(30, dtype=np.float32))

    @settings(max_examples=60, deadline=None)
    @given(
        n=st.integers(1, 8),
        l=st.integers(1, 17),
        e=st.integers(1, 16),
        seed=st.integers(0, 2**31),
    )
    def test_round_trip_identity(self, n, l, e, seed):
        rng = np.random.default_rng(seed)
        mode = ExtractionMode.IMAGE_TOKENS
        if l == 1 and seed % 2:
            mode = ExtractionMode.CLASS_TOKEN
        t = TokenTensor(rng.standard_normal((n, l, e)).astype(np.float32), mode)
        back = tensor_from_bytes(tensor_to_bytes(t))
        assert np.array_equal(back.data, t.data)
        assert back.extraction_mode == t.extraction_mode

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            read_tensor(io.BytesIO(b"NOPE" + b"\x00" * 40))

    def test_unsupported_version(self):
        t = TokenTensor(np.zeros((1, 1, 1)), ExtractionMode.CLASS_TOKEN)
        raw = bytearray(tensor_to_bytes(t))
        raw[4:8] = struct.pack("<I", 9)
        with pytest.raises(UnsupportedVersionError):
            tensor_from_bytes(bytes(raw))

    def test_truncated_payload(self):
        t = TokenTensor(np.zeros((2, 2, 2)), ExtractionMode.IMAGE_TOKENS)
        raw = tensor_to_bytes(t)
        with pytest.raises(TruncatedPayloadError):
            tensor_from_bytes(raw[:-5])

    def test_truncated_header(self):
        t = TokenTensor(np.zeros((1, 1, 1)), ExtractionMode.CLASS_TOKEN)
        raw = tensor_to_bytes(t)
        with pytest.raises(TruncatedPayloadError):
            tensor_from_bytes(raw[:20])

    def test_non_finite_payload(self):
        t = TokenTensor(np.zeros((1, 1, 2)), ExtractionMode.CLASS_TOKEN)
        raw = bytearray(tensor_to_bytes(t))
        raw[36:40] = struct.pack("<f", np.nan)
        with pytest.raises(NonFiniteError):
            tensor_from_bytes(bytes(raw))

    def test_bad_mode_byte(self):
        t = TokenTensor(np.zeros((1, 1, 1)), ExtractionMode.CLASS_TOKEN)
        raw = bytearray(tensor_to_bytes(t))
        raw[8] = 7
        with pytest.raises(TensorFormatError):
            tensor_from_bytes(bytes(raw))

    def test_zero_dims_rejected(self):
        header = struct.pack("<4sIB3xQQQ", b"TNSR", 1, 0, 0, 1, 1)
        with pytest.raises(TensorFormatError):
            read_tensor(io.BytesIO(header))


class TestLabelCsv:
    def test_round_trip_with_merge(self, tmp_path):
        path = tmp_path / "labels.csv"
        write_labels_csv(np.array([0, 1, 2, 3]), path)  # raw, includes "both"
        merged = read_labels_csv(path)
        assert merged.labels.tolist() == [0, 1, 2, 2]

    def test_unknown_label_rejected(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("index,label\n0,weird\n")
        with pytest.raises(ValueError, match="weird"):
            read_labels_csv(path)


class TestGenerateSynthetic:
    def test_empty(self):
        data = generate_synthetic((0, 0, 0), 8, 2, seed=0)
        assert data.n == 0
        assert data.features.data.shape == (0, 8)

    def test_informative_cap(self):
        with pytest.raises(ValueError, match="informative"):
            generate_synthetic((1, 1, 1), 4, 5, seed=0)

    def test_same_seed_identical_bytes(self):
        a = generate_synthetic((10, 10, 10), 8, 2, seed=42)
        b = generate_synthetic((10, 10, 10), 8, 2, seed=42)
        assert a.features.data.tobytes() == b.features.data.tobytes()
        assert np.array_equal(a.labels.labels, b.labels.labels)

    def test_linear_separability_oracle(self):
        # Independent check: nearest class centroid on the informative dims
        # is a linear decision rule; it must get >= 0.95 accuracy.
        data = generate_synthetic((100, 100, 100), 32, 4, seed=7)
        x = data.features.data[:, :4]
        y = data.labels.labels
        centroids = np.stack([x[y == c].mean(axis=0) for c in range(3)])
        d2 = ((x[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        accuracy = float((d2.argmin(axis=1) == y).mean())
        assert accuracy >= 0.95

    def test_xor_not_linearly_separable(self):
        data = generate_xor((80, 80, 80), 4, seed=5)
        x = data.features.data[:, :2]
        y = data.labels.labels
        # centroid rule (linear) should fail badly on XOR-style layout
        centroids = np.stack([x[y == c].mean(axis=0) for c in range(3)])
        d2 = ((x[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        accuracy = float((d2.argmin(axis=1) == y).mean())
        assert accuracy < 0.75
