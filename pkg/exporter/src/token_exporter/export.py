"""Export class/image/all tokens from a ViT-family checkpoint to TNSR.

The checkpoint is either a torchvision model name (optionally with
pretrained weights, network permitting) or a local ``.pt`` container with
the architecture kwargs, state dict, and preprocessing settings. Tokens
come from a forward hook on the transformer encoder, whose output keeps
the class token at sequence position 0, so slicing yields the three
extraction modes consistently.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np
import torch
import torchvision
from PIL import Image

from .tnsr import write_tnsr

log = logging.getLogger("token_exporter")

MODES = ("class", "image", "all")

# 4-category alphabet; "both" merges into "unhealthy" on export.
RAW_LABELS = {"rubbish": 0, "healthy": 1, "unhealthy": 2, "both": 3}
MERGED_NAMES = ("rubbish", "healthy", "unhealthy")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"}


@dataclass
class ExportSpec:
    checkpoint: str
    image_dir: str
    labels_csv: str
    mode: str
    output_path: str
    batch_size: int = 16
    weights: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class Preprocess:
    image_size: int
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __call__(self, image: Image.Image) -> torch.Tensor:
        image = image.convert("RGB").resize(
            (self.image_size, self.image_size), Image.BILINEAR
        )
        array = np.asarray(image, dtype=np.float32) / 255.0
        array = (array - np.asarray(self.mean, dtype=np.float32)) / np.asarray(
            self.std, dtype=np.float32
        )
        return torch.from_numpy(array.transpose(2, 0, 1))


def save_checkpoint(model, arch: dict, path, preprocess: dict | None = None) -> None:
    """Write the local checkpoint container the exporter can reload."""
    torch.save(
        {
            "arch": arch,
            "state_dict": model.state_dict(),
            "preprocess": preprocess or {"image_size": arch["image_size"]},
        },
        path,
    )


def load_checkpoint(spec: ExportSpec):
    """Resolve the checkpoint identifier to (model, preprocess).

    A path loads the container format above; anything else is treated as
    a torchvision ViT builder name (pretrained weights by name when
    requested, random initialization otherwise).
    """
    if os.path.exists(spec.checkpoint):
        payload = torch.load(spec.checkpoint, map_location="cpu")
        model = torchvision.models.VisionTransformer(**payload["arch"])
        try:
            model.load_state_dict(payload["state_dict"], strict=True)
        except RuntimeError as exc:
            raise RuntimeError(
                f"checkpoint mismatch for {spec.checkpoint}: {exc}"
            ) from exc
        pp = payload.get("preprocess", {})
        preprocess = Preprocess(
            image_size=int(pp.get("image_size", model.image_size)),
            mean=tuple(pp.get("mean", IMAGENET_MEAN)),
            std=tuple(pp.get("std", IMAGENET_STD)),
        )
        return model, preprocess

    builder = getattr(torchvision.models, spec.checkpoint, None)
    if builder is None:
        raise ValueError(
            f"unknown checkpoint {spec.checkpoint!r}: not a file and not a "
            "torchvision model name"
        )
    weights = None
    if spec.weights is not None:
        weights = torchvision.models.get_model_weights(spec.checkpoint)[spec.weights]
    model = builder(weights=weights)
    if weights is not None:
        tf = weights.transforms()
        preprocess = Preprocess(
            image_size=tf.crop_size[0], mean=tuple(tf.mean), std=tuple(tf.std)
        )
    else:
        preprocess = Preprocess(image_size=model.image_size)
    return model, preprocess


def _require_vit(model) -> None:
    if not hasattr(model, "encoder") or not hasattr(model, "class_token"):
        raise RuntimeError(
            "checkpoint mismatch: model does not expose a ViT encoder with a "
            "class token"
        )


def list_images(image_dir) -> list[str]:
    names = sorted(
        f for f in os.listdir(image_dir)
        if os.path.splitext(f)[1].lower() in IMAGE_EXTENSIONS
    )
    if not names:
        raise ValueError(f"no images found in {image_dir}")
    return names


def read_raw_labels(path) -> dict[int, int]:
    labels = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"index", "label"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected CSV header 'index,label'")
        for row in reader:
            name = row["label"].strip().lower()
            if name not in RAW_LABELS:
                raise ValueError(f"{path}: unknown label {row['label']!r}")
            labels[int(row["index"])] = RAW_LABELS[name]
    return labels


def extract_all_tokens(model, batches) -> np.ndarray:
    """Run batches through the model, capturing the encoder output."""
    captured: list[torch.Tensor] = []

    def hook(module, inputs, output):
        captured.append(output.detach())

    handle = model.encoder.register_forward_hook(hook)
    model.eval()
    try:
        with torch.no_grad():
            for batch in batches:
                model(batch)
    finally:
        handle.remove()
    return torch.cat(captured, dim=0).cpu().numpy().astype(np.float32)


def export_tokens(spec: ExportSpec) -> tuple[str, str]:
    """Produce the TNSR file and merged-label CSV; returns both paths.

    Unreadable images are skipped and logged with their index; the output
    rows are renumbered over the surviving images.
    """
    model, preprocess = load_checkpoint(spec)
    _require_vit(model)

    names = list_images(spec.image_dir)
    raw_labels = read_raw_labels(spec.labels_csv)

    tensors: list[torch.Tensor] = []
    kept: list[int] = []
    for i, name in enumerate(names):
        if i not in raw_labels:
            raise ValueError(f"no label for image index {i} ({name})")
        try:
            with Image.open(os.path.join(spec.image_dir, name)) as img:
                tensors.append(preprocess(img))
        except Exception as exc:
            log.warning("skipping unreadable image %d (%s): %s", i, name, exc)
            continue
        kept.append(i)
    if not tensors:
        raise ValueError("no readable images to export")

    batches = (
        torch.stack(tensors[s : s + spec.batch_size])
        for s in range(0, len(tensors), spec.batch_size)
    )
    tokens = extract_all_tokens(model, batches)  # (N, 1+P, E)
    if tokens.shape[2] != model.hidden_dim:
        raise RuntimeError(
            f"embedding width {tokens.shape[2]} does not match the "
            f"checkpoint's hidden_dim {model.hidden_dim}"
        )

    if spec.mode == "class":
        out = tokens[:, :1, :]
    elif spec.mode == "image":
        out = tokens[:, 1:, :]
    else:
        out = tokens
    write_tnsr(out, spec.mode, spec.output_path)

    labels_out = os.path.splitext(spec.output_path)[0] + "_labels.csv"
    with open(labels_out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label"])
        for new_index, original in enumerate(kept):
            merged = min(raw_labels[original], 2)  # both -> unhealthy
            writer.writerow([new_index, MERGED_NAMES[merged]])
    return spec.output_path, labels_out
