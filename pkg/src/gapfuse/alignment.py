"""Closing the modality gap: noise injection, lambda-controlled shift with
renormalization, and the paired-feature regularizer used by late-joint heads."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .embedding_store import EmbeddingMatrix, PairedDataset
from .errors import ConfigurationError, InputError
from .geometry import gap_from_arrays, normalize_array

PHASES = ("train", "eval")


@dataclass(frozen=True)
class AlignmentConfig:
    noise_std: float = 0.01
    lambda_shift: float = 0.0
    renormalize: bool = True
    reg_weight: float = 0.0
    noise_at_eval: bool = False

    def __post_init__(self):
        if self.noise_std < 0:
            raise ConfigurationError(f"noise_std must be nonnegative, got {self.noise_std}")
        if self.reg_weight < 0:
            raise ConfigurationError(f"reg_weight must be nonnegative, got {self.reg_weight}")
        if not -1.0 <= self.lambda_shift <= 1.0:
            warnings.warn(f"lambda_shift={self.lambda_shift} lies outside the usual [-1, 1] sweep range",
                          stacklevel=3)

    @property
    def is_identity(self) -> bool:
        return self.noise_std == 0 and self.lambda_shift == 0 and not self.renormalize

    def to_dict(self) -> dict:
        return asdict(self)


def inject_noise(m, noise_std: float, seed: int):
    """Add i.i.d. ``N(0, noise_std**2)`` noise to every coordinate."""
    if noise_std < 0:
        raise ConfigurationError(f"noise_std must be nonnegative, got {noise_std}")
    values = m.values if isinstance(m, EmbeddingMatrix) else np.asarray(m)
    if noise_std == 0:
        return m
    rng = np.random.default_rng(seed)
    noisy = (values.astype(np.float64) + rng.normal(0.0, noise_std, size=values.shape)).astype(values.dtype)
    return m.with_values(noisy) if isinstance(m, EmbeddingMatrix) else noisy


def train_gap_vector(ds: PairedDataset) -> np.ndarray:
    """mean(text) - mean(image) over normalized training rows only."""
    idx = ds.train_idx
    return gap_from_arrays(ds.text.values[idx], ds.image.values[idx], normalize=True).gap_vector


def shift_arrays(text: np.ndarray, image: np.ndarray, gap_vector: np.ndarray, lambda_shift: float,
                 renormalize: bool = False):
    """The raw opposing-sign shift on arrays; no input normalization.

    Without renormalization, shifting by ``lambda`` then ``-lambda`` with the
    same ``gap_vector`` is the identity.
    """
    half = 0.5 * lambda_shift * gap_vector
    t = text.astype(np.float64) - half
    i = image.astype(np.float64) + half
    if renormalize:
        for name, arr in (("text", t), ("image", i)):
            zero = np.flatnonzero(np.linalg.norm(arr, axis=1) == 0)
            if zero.size:
                raise InputError(f"{name} row {zero[0]} has zero norm after the shift")
        t, i = normalize_array(t), normalize_array(i)
    return t, i


def shift_align(ds: PairedDataset, lambda_shift: float, renormalize: bool = True,
                gap_vector: Optional[np.ndarray] = None) -> PairedDataset:
    """Move text by ``-(lambda/2) g`` and image by ``+(lambda/2) g``.

    ``g`` defaults to the training-split gap vector of the row-normalized
    embeddings; rows are normalized before shifting. ``lambda = 1`` makes
    both modality means coincide (before renormalization), negative values
    widen the gap.
    """
    if _dims_differ(ds):
        raise ConfigurationError("shift alignment needs text and image embeddings of equal dimension")
    if lambda_shift == 0 and not renormalize:
        return ds
    g = train_gap_vector(ds) if gap_vector is None else np.asarray(gap_vector, dtype=np.float64)
    t, i = shift_arrays(normalize_array(ds.text.values), normalize_array(ds.image.values), g, lambda_shift,
                  renormalize)
    return ds.with_embeddings(i.astype(np.float32), t.astype(np.float32))


def _dims_differ(ds: PairedDataset) -> bool:
    return ds.text.dim != ds.image.dim


def reg_loss(text_features: np.ndarray, image_features: np.ndarray):
    """``(1 / 2N) * sum_j ||t_j - i_j||^2`` with gradients for both arguments.

    Returns ``(loss, grad_text, grad_image)``.
    """
    t = np.asarray(text_features)
    i = np.asarray(image_features)
    if t.shape != i.shape:
        raise ConfigurationError(f"reg_loss shape mismatch: text {t.shape}, image {i.shape}")
    n = t.shape[0]
    diff = t.astype(np.float64) - i.astype(np.float64)
    loss = float((diff ** 2).sum() / (2 * n))
    grad_t = (diff / n).astype(t.dtype)
    return loss, grad_t, -grad_t


def apply_pipeline(ds: PairedDataset, cfg: AlignmentConfig, phase: str, seed: int,
                   gap_vector: Optional[np.ndarray] = None) -> PairedDataset:
    """Noise (train phase only, unless ``noise_at_eval``), shift, then renormalize.

    Rows are normalized before anything else. The shift direction comes
    from the clean training rows, so the same vector is used in both
    phases and test rows never influence it. An all-zero config returns
    ``ds`` untouched.
    """
    if phase not in PHASES:
        raise ConfigurationError(f"phase must be one of {PHASES}, got {phase!r}")
    if cfg.is_identity:
        return ds
    if cfg.lambda_shift != 0 and _dims_differ(ds):
        raise ConfigurationError("shift alignment needs text and image embeddings of equal dimension")
    t = normalize_array(ds.text.values).astype(np.float64)
    i = normalize_array(ds.image.values).astype(np.float64)
    if cfg.lambda_shift != 0 and gap_vector is None:
        gap_vector = train_gap_vector(ds)
    if cfg.noise_std > 0 and (phase == "train" or cfg.noise_at_eval):
        ss = np.random.SeedSequence(seed).spawn(2)
        t = inject_noise(t, cfg.noise_std, int(ss[0].generate_state(1)[0]))
        i = inject_noise(i, cfg.noise_std, int(ss[1].generate_state(1)[0]))
    if cfg.lambda_shift != 0:
        t, i = shift_arrays(t, i, gap_vector, cfg.lambda_shift, renormalize=False)
    if cfg.renormalize:
        t, i = normalize_array(t), normalize_array(i)
    return ds.with_embeddings(i.astype(np.float32), t.astype(np.float32))
