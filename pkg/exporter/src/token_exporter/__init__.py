"""token_exporter: ViT-family token dumps in the TNSR container format."""

from .export import ExportSpec, Preprocess, export_tokens, load_checkpoint, save_checkpoint
from .tnsr import read_tnsr, write_tnsr

__version__ = "0.1.0"
