"""Exporter contract: TNSR validity, mode slicing, label merging."""

import csv
import shutil
import struct
import subprocess

import numpy as np
import pytest
import torch
import torchvision
from PIL import Image

from token_exporter.export import ExportSpec, export_tokens, save_checkpoint
from token_exporter.tnsr import read_tnsr

ARCH = dict(image_size=32, patch_size=8, num_layers=1, num_heads=2,
            hidden_dim=16, mlp_dim=32, num_classes=3)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("export")
    torch.manual_seed(0)
    model = torchvision.models.VisionTransformer(**ARCH)
    ckpt = root / "vit_tiny.pt"
    save_checkpoint(model, ARCH, ckpt, preprocess={"image_size": 32})

    images = root / "images"
    images.mkdir()
    rng = np.random.default_rng(0)
    for i in range(4):
        array = rng.integers(0, 255, size=(40, 40, 3), dtype=np.uint8)
        Image.fromarray(array).save(images / f"img_{i:02d}.png")

    labels = root / "labels.csv"
    with open(labels, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label"])
        for i, name in enumerate(["rubbish", "healthy", "both", "unhealthy"]):
            writer.writerow([i, name])
    return root


def _export(workspace, mode, out_name, **overrides):
    spec = ExportSpec(
        checkpoint=str(workspace / "vit_tiny.pt"),
        image_dir=str(overrides.pop("image_dir", workspace / "images")),
        labels_csv=str(overrides.pop("labels_csv", workspace / "labels.csv")),
        mode=mode,
        output_path=str(workspace / out_name),
        **overrides,
    )
    return export_tokens(spec)


def test_class_mode_shape_and_header(workspace):
    tnsr_path, _ = _export(workspace, "class", "class.tnsr")
    data, mode = read_tnsr(tnsr_path)
    assert data.shape == (4, 1, 16)
    assert mode == 0
    raw = open(tnsr_path, "rb").read()
    assert raw[:4] == b"TNSR"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    assert struct.unpack("<QQQ", raw[12:36]) == (4, 1, 16)
    assert len(raw) == 36 + 4 * 1 * 16 * 4


def test_mode_slicing_identities(workspace):
    all_path, _ = _export(workspace, "all", "all.tnsr", batch_size=3)
    cls_path, _ = _export(workspace, "class", "class2.tnsr", batch_size=2)
    img_path, _ = _export(workspace, "image", "image.tnsr")
    all_data, all_mode = read_tnsr(all_path)
    cls_data, _ = read_tnsr(cls_path)
    img_data, _ = read_tnsr(img_path)
    p = (32 // 8) ** 2
    assert all_mode == 2
    assert all_data.shape == (4, p + 1, 16)
    assert np.array_equal(all_data[:, :1, :], cls_data)
    assert np.array_equal(all_data[:, 1:, :], img_data)


def test_labels_merged(workspace):
    _, labels_path = _export(workspace, "class", "merge.tnsr")
    rows = list(csv.DictReader(open(labels_path)))
    assert [r["label"] for r in rows] == ["rubbish", "healthy", "unhealthy", "unhealthy"]
    assert [r["index"] for r in rows] == ["0", "1", "2", "3"]


def test_unreadable_image_skipped_and_logged(workspace, caplog, tmp_path):
    broken_dir = tmp_path / "images"
    shutil.copytree(workspace / "images", broken_dir)
    (broken_dir / "img_01.png").write_bytes(b"this is not a png")
    with caplog.at_level("WARNING", logger="token_exporter"):
        tnsr_path, labels_path = _export(
            workspace, "class", "skipped.tnsr", image_dir=broken_dir
        )
    assert "skipping unreadable image 1" in caplog.text
    data, _ = read_tnsr(tnsr_path)
    assert data.shape[0] == 3
    rows = list(csv.DictReader(open(labels_path)))
    # image 1 (healthy) dropped; remaining labels renumbered
    assert [r["label"] for r in rows] == ["rubbish", "unhealthy", "unhealthy"]


def test_checkpoint_mismatch_aborts(workspace, tmp_path):
    model = torchvision.models.VisionTransformer(
        **{**ARCH, "hidden_dim": 32, "num_heads": 4, "mlp_dim": 64}
    )
    bad = tmp_path / "bad.pt"
    # architecture kwargs claim hidden_dim 16 but the weights are 32-wide
    torch.save({"arch": ARCH, "state_dict": model.state_dict()}, bad)
    spec = ExportSpec(
        checkpoint=str(bad),
        image_dir=str(workspace / "images"),
        labels_csv=str(workspace / "labels.csv"),
        mode="class",
        output_path=str(tmp_path / "out.tnsr"),
    )
    with pytest.raises(RuntimeError, match="checkpoint mismatch"):
        export_tokens(spec)


def test_missing_label_rejected(workspace, tmp_path):
    short = tmp_path / "short.csv"
    short.write_text("index,label\n0,rubbish\n")
    with pytest.raises(ValueError, match="no label for image index 1"):
        _export(workspace, "class", "nolabel.tnsr", labels_csv=short)


def test_deterministic_output(workspace):
    a, _ = _export(workspace, "class", "det_a.tnsr")
    b, _ = _export(workspace, "class", "det_b.tnsr")
    assert open(a, "rb").read() == open(b, "rb").read()


def test_cli_entry(workspace, tmp_path):
    from token_exporter.cli import main

    out = tmp_path / "cli.tnsr"
    code = main([
        "--model", str(workspace / "vit_tiny.pt"),
        "--images", str(workspace / "images"),
        "--labels", str(workspace / "labels.csv"),
        "--mode", "all", "--out", str(out),
    ])
    assert code == 0
    data, mode = read_tnsr(out)
    assert data.shape == (4, 17, 16)
    assert mode == 2

    missing = main([
        "--model", str(workspace / "vit_tiny.pt"),
        "--images", str(tmp_path / "nowhere"),
        "--labels", str(workspace / "labels.csv"),
        "--mode", "all", "--out", str(out),
    ])
    assert missing == 3


@pytest.mark.skipif(shutil.which("cellsift") is None,
                    reason="pipeline CLI not installed")
def test_primary_pipeline_accepts_export(workspace, tmp_path):
    # the produced file must pass the pipeline's own TNSR validation;
    # pooling is the cheapest command that fully reads the tensor
    tnsr_path, _ = _export(workspace, "all", "roundtrip.tnsr")
    result = subprocess.run(
        ["cellsift", "pool", "--tensor", tnsr_path, "--out", str(tmp_path / "pooled")],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    assert (tmp_path / "pooled" / "pooled.tnsr").exists()
