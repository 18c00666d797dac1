"""Paired image/text embedding sets with controllable variance, modality gap
and class structure.

Construction, per sample with class ``c``:

    image = normalize(b + s_img * (center_c + rho * z + sqrt(1 - rho^2) * z_img))
    text  = R_phi normalize(b + s_txt * (center_c + rho * z + sqrt(1 - rho^2) * z_txt))

``b`` is a random unit base direction, ``z``/``z_img``/``z_txt`` are
``N(0, I/D)`` draws, ``center_c`` are orthogonal class offsets whose pairwise
distance is ``class_separation`` noise standard deviations, and ``R_phi``
rotates the text cloud away from the image cloud. The scales ``s_img``,
``s_txt`` are bisected to hit the requested per-dimension variances and
``phi`` is bisected to hit the requested mean pair distance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from .embedding_store import EmbeddingMatrix, PairedDataset, make_paired
from .errors import ConfigurationError, InputError

REGIMES = ("medical", "general")


@dataclass(frozen=True)
class SynthSpec:
    n_samples: int = 1000
    dim: int = 64
    n_classes: int = 2
    regime: str = "medical"
    text_variance: float = 5.4e-4
    image_variance: float = 7.9e-5
    gap_magnitude: float = 1.0
    class_separation: float = 3.0
    label_skew: Optional[Tuple[float, ...]] = None
    shared_noise: float = 0.0
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2 or self.dim < 2 or self.n_classes < 2:
            raise ConfigurationError("n_samples, dim and n_classes must be at least 2")
        if self.n_classes > self.dim:
            raise ConfigurationError(f"cannot place {self.n_classes} orthogonal class offsets in {self.dim} dims")
        if self.regime not in REGIMES:
            raise ConfigurationError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not 0.0 <= self.gap_magnitude <= 2.0:
            raise InputError(f"gap_magnitude must lie in [0, 2] for unit vectors, got {self.gap_magnitude}")
        for name in ("text_variance", "image_variance"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0 / self.dim:
                raise InputError(f"{name}={v} is infeasible for unit vectors in {self.dim} dims "
                                 f"(must lie in (0, {1.0 / self.dim:.3g}))")
        if not 0.0 <= self.shared_noise <= 1.0:
            raise ConfigurationError("shared_noise must lie in [0, 1]")
        if self.label_skew is not None:
            p = np.asarray(self.label_skew, dtype=float)
            if p.shape != (self.n_classes,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ConfigurationError("label_skew must be a probability vector with one entry per class")

    def to_dict(self) -> dict:
        return asdict(self)


def medical_preset(**overrides) -> SynthSpec:
    """Low variance, wide gap (BRSET-like magnitudes)."""
    base = dict(regime="medical", text_variance=5.4e-4, image_variance=7.9e-5, gap_magnitude=1.0)
    base.update(overrides)
    return SynthSpec(**base)


def general_preset(**overrides) -> SynthSpec:
    """Natural-image-like variance, narrower gap."""
    base = dict(regime="general", text_variance=3e-3, image_variance=1.7e-3, gap_magnitude=0.7)
    base.update(overrides)
    return SynthSpec(**base)


PRESETS = {"medical": medical_preset, "general": general_preset}


def _normalize(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _mean_variance(unit_rows) -> float:
    return float(unit_rows.var(axis=0).mean())


def _fit_scale(base, dev, target, tol=1e-4):
    """Bisect (in log space) the deviation scale that gives ``target`` mean variance."""
    def var_at(s):
        return _mean_variance(_normalize(base + s * dev))

    lo, hi = 1e-8, 1e4
    if var_at(hi) <= target:
        raise InputError(f"variance target {target:g} is not reachable with this construction")
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        v = var_at(mid)
        if abs(v - target) <= tol * target:
            return mid
        if v < target:
            lo = mid
        else:
            hi = mid
    return np.sqrt(lo * hi)


def _rotate(x, b, q, phi):
    """Rotate rows of ``x`` by ``phi`` in the plane spanned by orthonormal ``b``, ``q``."""
    xb = x @ b
    xq = x @ q
    c, s = np.cos(phi), np.sin(phi)
    return x + np.outer(xb * (c - 1) - xq * s, b) + np.outer(xb * s + xq * (c - 1), q)


def _mean_distance(a, b) -> float:
    return float(np.linalg.norm(a - b, axis=1).mean())


def generate_with_stats(spec: SynthSpec):
    """Return ``(dataset, achieved)`` where ``achieved`` reports measured statistics."""
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_samples, spec.dim
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    b, q = basis[:, 0], basis[:, 1]
    class_dirs = np.linalg.qr(rng.standard_normal((d, spec.n_classes)))[0].T
    centers = class_dirs * spec.class_separation / np.sqrt(2.0 * d)

    p = None if spec.label_skew is None else np.asarray(spec.label_skew, dtype=float)
    labels = rng.choice(spec.n_classes, size=n, p=p)
    # make sure every class appears at least twice so the split has each class
    for c in range(spec.n_classes):
        if np.sum(labels == c) < 2:
            labels[rng.choice(n, size=2, replace=False)] = c

    rho = spec.shared_noise
    scale = 1.0 / np.sqrt(d)
    shared = rng.standard_normal((n, d)) * scale
    dev_img = centers[labels] + rho * shared + np.sqrt(1 - rho ** 2) * rng.standard_normal((n, d)) * scale
    dev_txt = centers[labels] + rho * shared + np.sqrt(1 - rho ** 2) * rng.standard_normal((n, d)) * scale

    s_img = _fit_scale(b, dev_img, spec.image_variance)
    image = _normalize(b + s_img * dev_img)

    if spec.gap_magnitude == 0:
        text = image.copy()
        phi = 0.0
        s_txt = s_img
    else:
        s_txt = _fit_scale(b, dev_txt, spec.text_variance)
        text0 = _normalize(b + s_txt * dev_txt)

        def gap_at(angle):
            return _mean_distance(_rotate(text0, b, q, angle), image)

        lo, hi = 0.0, np.pi
        if gap_at(lo) > spec.gap_magnitude or gap_at(hi) < spec.gap_magnitude:
            raise InputError(
                f"gap_magnitude {spec.gap_magnitude} is unreachable for these variances "
                f"(achievable range [{gap_at(lo):.3f}, {gap_at(hi):.3f}])"
            )
        for _ in range(100):
            phi = 0.5 * (lo + hi)
            g = gap_at(phi)
            if abs(g - spec.gap_magnitude) < 1e-4:
                break
            lo, hi = (phi, hi) if g < spec.gap_magnitude else (lo, phi)
        text = _rotate(text0, b, q, phi)

    tag = f"synthetic-{spec.regime}-seed{spec.seed}"
    ds = make_paired(
        EmbeddingMatrix("image", image.astype(np.float32), tag),
        EmbeddingMatrix("text", text.astype(np.float32), tag),
        labels, seed=spec.seed, train_fraction=spec.train_fraction, n_classes=spec.n_classes,
    )
    achieved = {
        "image_variance": _mean_variance(image),
        "text_variance": _mean_variance(text),
        "gap_scalar": _mean_distance(text, image),
        "rotation_angle": float(phi),
        "image_scale": float(s_img),
        "text_scale": float(s_txt),
    }
    return ds, achieved


def generate(spec: SynthSpec) -> PairedDataset:
    return generate_with_stats(spec)[0]
