"""Embedding-space diagnostics: normalization, cosine, modality gap,
variance decomposition over random initializations, cone probe and PCA."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .embedding_store import EmbeddingMatrix, PairedDataset
from .errors import ConfigurationError, InputError
from .numeric_core import LayerSpec, Sequential

ArrayOrMatrix = Union[np.ndarray, EmbeddingMatrix]


def _values(m: ArrayOrMatrix) -> np.ndarray:
    return m.values if isinstance(m, EmbeddingMatrix) else np.asarray(m)


def normalize_array(x: np.ndarray) -> np.ndarray:
    """Row-normalize a 2-D array (computed in float64, returned in the input's float dtype)."""
    x = np.asarray(x)
    norms = np.linalg.norm(x.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise InputError(f"row {zero[0]} has zero norm and cannot be normalized")
    out = x.astype(np.float64) / norms[:, None]
    return out.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64)


def normalize_rows(m: ArrayOrMatrix) -> ArrayOrMatrix:
    if isinstance(m, EmbeddingMatrix):
        return m.with_values(normalize_array(m.values))
    return normalize_array(m)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise InputError("cosine similarity is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine between matching rows; NaN where either row is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (a * b).sum(axis=-1) / denom
    c[denom == 0] = np.nan
    return np.clip(c, -1.0, 1.0)


# ---------------------------------------------------------------------------
# modality gap


@dataclass
class GapReport:
    gap_vector: np.ndarray
    gap_scalar: float
    per_modality_variance: dict
    mean_cross_modal_cosine: float

    def to_dict(self) -> dict:
        return {
            "gap_vector": [float(x) for x in self.gap_vector],
            "gap_vector_norm": float(np.linalg.norm(self.gap_vector)),
            "gap_scalar": self.gap_scalar,
            "per_modality_variance": dict(self.per_modality_variance),
            "mean_cross_modal_cosine": self.mean_cross_modal_cosine,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def gap_from_arrays(text: np.ndarray, image: np.ndarray, normalize: bool = True) -> GapReport:
    t = np.asarray(text, dtype=np.float64)
    i = np.asarray(image, dtype=np.float64)
    if t.shape != i.shape:
        raise ConfigurationError(f"paired modalities differ in shape: text {t.shape}, image {i.shape}")
    if normalize:
        t, i = normalize_array(t), normalize_array(i)
    return GapReport(
        gap_vector=t.mean(axis=0) - i.mean(axis=0),
        gap_scalar=float(np.linalg.norm(t - i, axis=1).mean()),
        per_modality_variance={"text": float(t.var(axis=0).mean()), "image": float(i.var(axis=0).mean())},
        mean_cross_modal_cosine=float(np.nanmean(rowwise_cosine(t, i))),
    )


def measure_gap(ds: PairedDataset, normalize: bool = True, rows: Optional[np.ndarray] = None) -> GapReport:
    """Gap between the text and image clouds of a paired dataset.

    ``gap_vector`` is mean(text) - mean(image); ``gap_scalar`` is the mean
    per-pair Euclidean distance. ``rows`` restricts the computation to a
    subset (e.g. ``ds.train_idx``).
    """
    t, i = ds.text.values, ds.image.values
    if rows is not None:
        t, i = t[rows], i[rows]
    if ds.text.dim != ds.image.dim:
        raise ConfigurationError(
            f"gap needs a shared embedding space; text dim {ds.text.dim} != image dim {ds.image.dim}"
        )
    return gap_from_arrays(t, i, normalize=normalize)


# ---------------------------------------------------------------------------
# variance decomposition and cone probe


def _init_rngs(seed: int, n: int, same_init: bool):
    if same_init:
        return [np.random.default_rng(seed) for _ in range(n)]
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def variance_decomposition(layers: Sequence[LayerSpec], inputs: ArrayOrMatrix, n_inits: int,
                           seed: int, same_init: bool = False):
    """Split output variance of a randomly initialized network into data and weight parts.

    For each of ``n_inits`` independent initializations the network maps every
    input row; per output coordinate, ``total`` is the pooled variance,
    ``data`` the mean over inits of the within-init variance and ``weights``
    the variance over inits of the within-init mean. Each is averaged over
    coordinates and returned as ``(total, data, weights)``.
    """
    x = np.asarray(_values(inputs), dtype=np.float64)
    if n_inits < 2 or x.shape[0] < 2:
        raise ConfigurationError("variance_decomposition needs n_inits >= 2 and at least 2 input rows")
    outs = []
    for rng in _init_rngs(seed, n_inits, same_init):
        net = Sequential(layers, rng=rng, dtype=np.float64)
        outs.append(net.forward(x, training=False))
    y = np.stack(outs)  # (inits, rows, out_dim)
    total = y.reshape(-1, y.shape[-1]).var(axis=0).mean()
    data = y.var(axis=1).mean(axis=0).mean()
    weights = y.mean(axis=1).var(axis=0).mean()
    return float(total), float(data), float(weights)


@dataclass
class ConeCurve:
    depths: np.ndarray
    mean_cosine: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    per_init: np.ndarray  # (n_inits, depth + 1)

    def to_dict(self) -> dict:
        return {
            "depth": self.depths.tolist(),
            "mean_cosine": self.mean_cosine.tolist(),
            "ci_low": self.ci_low.tolist(),
            "ci_high": self.ci_high.tolist(),
        }


def random_orthogonal_pairs(n_pairs: int, dim: int, rng: np.random.Generator):
    """Pairs of orthogonal unit vectors, via QR of a Gaussian ``dim x 2`` block."""
    u = np.empty((n_pairs, dim))
    v = np.empty((n_pairs, dim))
    for k in range(n_pairs):
        q, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
        u[k], v[k] = q[:, 0], q[:, 1]
    return u, v


def cone_probe(depth: int, width: int, input_pairs, n_inits: int, seed: int,
               nonnegative: bool = False, n_boot: int = 1000, ci: float = 0.95) -> ConeCurve:
    """Mean pairwise cosine after each layer of random dense+ReLU stacks.

    ``input_pairs`` is ``(u, v)`` with two ``(P, width)`` arrays. Entry ``d``
    of the curve is the mean over inits of the mean cosine between the
    depth-``d`` representations of each pair (``d = 0`` is the raw input).
    With ``nonnegative`` the weights and biases are replaced by their
    absolute values.
    """
    if depth < 0:
        raise ConfigurationError("depth must be nonnegative")
    u, v = (np.asarray(a, dtype=np.float64) for a in input_pairs)
    if u.shape != v.shape or u.ndim != 2 or u.shape[1] != width:
        raise ConfigurationError(f"input pairs must be two (P, {width}) arrays, got {u.shape} and {v.shape}")
    if nonnegative:
        u, v = np.abs(u), np.abs(v)
    n_pairs = u.shape[0]
    per_init = np.empty((n_inits, depth + 1))
    for k, rng in enumerate(_init_rngs(seed, n_inits, False)):
        h = np.concatenate([u, v])
        per_init[k, 0] = np.nanmean(rowwise_cosine(u, v))
        bound = 1.0 / np.sqrt(width)
        for d in range(1, depth + 1):
            w = rng.uniform(-bound, bound, size=(width, width))
            b = rng.uniform(-bound, bound, size=width)
            if nonnegative:
                w, b = np.abs(w), np.abs(b)
            h = np.maximum(h @ w.T + b, 0.0)
            c = rowwise_cosine(h[:n_pairs], h[n_pairs:])
            per_init[k, d] = np.nanmean(c) if np.any(np.isfinite(c)) else np.nan
    mean = np.nanmean(per_init, axis=0)
    brng = np.random.default_rng(np.random.SeedSequence(seed).spawn(n_inits + 1)[-1])
    idx = brng.integers(0, n_inits, size=(n_boot, n_inits))
    boots = np.nanmean(per_init[idx], axis=1)
    alpha = (1.0 - ci) / 2
    return ConeCurve(
        depths=np.arange(depth + 1),
        mean_cosine=mean,
        ci_low=np.quantile(boots, alpha, axis=0),
        ci_high=np.quantile(boots, 1 - alpha, axis=0),
        per_init=per_init,
    )


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PCAResult:
    coords: List[np.ndarray]
    components: np.ndarray  # (k, D)
    explained_variance_ratio: np.ndarray
    mean: np.ndarray

    def to_csv(self, path, labels: Optional[Sequence[str]] = None) -> None:
        labels = labels or [f"set{i}" for i in range(len(self.coords))]
        k = self.components.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "row"] + [f"pc{j + 1}" for j in range(k)])
            for name, c in zip(labels, self.coords):
                for r, row in enumerate(c):
                    w.writerow([name, r] + [f"{x:.9g}" for x in row])


def pca_project(matrices: Sequence[ArrayOrMatrix], k: int = 2) -> PCAResult:
    """Fit one PCA on the stacked matrices and project each onto the shared axes.

    Uses a thin SVD of the pooled-mean-centered data. Each component's sign
    is fixed so its largest-magnitude loading is positive.
    """
    arrays = [np.asarray(_values(m), dtype=np.float64) for m in matrices]
    if not arrays:
        raise ConfigurationError("pca_project needs at least one matrix")
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise ConfigurationError(f"all matrices must share a dimension, got {sorted(dims)}")
    d = dims.pop()
    if k > d:
        raise ConfigurationError(f"cannot keep {k} components of {d}-dimensional data")
    x = np.concatenate(arrays)
    if x.shape[0] < k:
        raise ConfigurationError(f"need at least {k} rows, got {x.shape[0]}")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:k]
    flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    var = s ** 2
    total = var.sum()
    ratio = var[:k] / total if total > 0 else np.zeros(k)
    return PCAResult(
        coords=[(a - mean) @ comps.T for a in arrays],
        components=comps,
        explained_variance_ratio=ratio,
        mean=mean,
    )
