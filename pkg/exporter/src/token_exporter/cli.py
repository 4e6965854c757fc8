"""Command line: export tokens from a checkpoint to a TNSR file."""

from __future__ import annotations

import argparse
import logging
import sys

from .export import ExportSpec, export_tokens


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="token-export",
        description="dump class/image/all tokens from a ViT-family "
        "checkpoint into the TNSR format",
    )
    parser.add_argument("--model", required=True,
                        help="checkpoint path or torchvision model name")
    parser.add_argument("--images", required=True, help="image directory")
    parser.add_argument("--labels", required=True, help="index,label CSV")
    parser.add_argument("--mode", choices=["class", "image", "all"], required=True)
    parser.add_argument("--out", required=True, help="output TNSR path")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--weights", default=None,
                        help="torchvision weights name, e.g. DEFAULT")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        checkpoint=args.model,
        image_dir=args.images,
        labels_csv=args.labels,
        mode=args.mode,
        output_path=args.out,
        batch_size=args.batch_size,
        weights=args.weights,
    )
    try:
        tnsr_path, labels_path = export_tokens(spec)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 4
    print(f"wrote {tnsr_path} and {labels_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
