"""Modality-gap diagnostics, gap-closing alignment and lightweight fusion
heads for precomputed image/text embeddings."""

from .alignment import AlignmentConfig, apply_pipeline, shift_align
from .config import RunConfig, load_config
from .embedding_store import EmbeddingMatrix, PairedDataset, load_csv, load_manifest, make_paired
from .fusion_models import FusionModel, build
from .geometry import GapReport, measure_gap
from .synthetic_data import SynthSpec, generate, general_preset, medical_preset
from .training import RunReport, fit, sweep, train

__version__ = "0.1.0"
