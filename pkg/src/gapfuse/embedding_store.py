"""Paired embedding datasets: CSV I/O, train/test splitting and class weights."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputError, ParseError

MODALITIES = ("image", "text")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmbeddingMatrix:
    modality: str
    values: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigurationError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ConfigurationError(f"embedding matrix must be 2-D, got shape {v.shape}")
        bad = np.argwhere(~np.isfinite(v))
        if bad.size:
            r, c = bad[0]
            raise InputError(f"non-finite {self.modality} embedding value at row {r}, column {c}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def take(self, idx) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.modality, self.values[idx], self.source_tag)

    def with_values(self, values) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.modality, values, self.source_tag)


# ---------------------------------------------------------------------------
# CSV


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _read_rows(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not _is_number(rows[0][0].strip()):
        rows = rows[1:]
    return rows


def load_csv(path, modality: str, expected_dim: Optional[int] = None, source_tag: str = "") -> EmbeddingMatrix:
    """Read one embedding per row; a non-numeric first cell marks a header row."""
    rows = _read_rows(path)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0])
    data = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: data row {i + 1} has {len(row)} columns, expected {width}")
        try:
            data[i] = [float(c) for c in row]
        except ValueError as exc:
            raise ParseError(f"{path}: data row {i + 1}: {exc}") from None
        if not np.all(np.isfinite(data[i])):
            j = int(np.argmax(~np.isfinite(data[i])))
            raise ParseError(f"{path}: non-finite value at data row {i + 1}, column {j + 1}")
    if expected_dim is not None and width != expected_dim:
        raise ConfigurationError(f"{path}: embedding dim {width} does not match expected {expected_dim}")
    return EmbeddingMatrix(modality, data.astype(np.float32), source_tag or os.path.basename(str(path)))


def save_csv(m: EmbeddingMatrix, path, header: bool = True) -> None:
    # 9 significant digits round-trip any float32 exactly
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(",".join(f"e{j}" for j in range(m.dim)) + "\n")
        np.savetxt(fh, m.values, fmt="%.9g", delimiter=",")


def load_labels(path) -> np.ndarray:
    rows = _read_rows(path)
    labels = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) != 1:
            raise ParseError(f"{path}: label row {i + 1} has {len(row)} columns, expected 1")
        try:
            val = float(row[0])
        except ValueError:
            raise ParseError(f"{path}: label row {i + 1} is not numeric: {row[0]!r}") from None
        if val != int(val) or val < 0:
            raise ParseError(f"{path}: label row {i + 1} is not a nonnegative integer: {row[0]!r}")
        labels[i] = int(val)
    return labels


def save_labels(labels, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("label\n")
        for y in np.asarray(labels, dtype=np.int64):
            fh.write(f"{y}\n")


# ---------------------------------------------------------------------------
# paired datasets


def class_weights_from_labels(labels, n_classes: int) -> np.ndarray:
    """Inverse-frequency weights rescaled so their mean is 1."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)[:n_classes]
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise InputError(f"class(es) {missing.tolist()} absent from the training split; class weight undefined")
    inv = 1.0 / counts
    return (inv * n_classes / inv.sum()).astype(np.float32)


@dataclass(frozen=True)
class PairedDataset:
    image: EmbeddingMatrix
    text: EmbeddingMatrix
    labels: np.ndarray
    n_classes: int
    is_train: np.ndarray
    class_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if not (self.image.rows == self.text.rows == labels.shape[0]):
            raise ConfigurationError(
                f"row counts disagree: image {self.image.rows}, text {self.text.rows}, labels {labels.shape[0]}"
            )
        if self.n_classes < 2:
            raise ConfigurationError("need at least 2 classes")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise InputError(f"labels must lie in [0, {self.n_classes})")
        is_train = np.asarray(self.is_train, dtype=bool)
        if is_train.shape != labels.shape:
            raise ConfigurationError("split mask must have one entry per row")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "is_train", _frozen(is_train))
        cw = self.class_weights
        if cw is None:
            cw = class_weights_from_labels(labels[is_train], self.n_classes)
        object.__setattr__(self, "class_weights", _frozen(np.asarray(cw, dtype=np.float32)))

    @property
    def n_rows(self) -> int:
        return self.labels.shape[0]

    @property
    def train_idx(self) -> np.ndarray:
        return np.flatnonzero(self.is_train)

    @property
    def test_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.is_train)

    def with_embeddings(self, image_values, text_values) -> "PairedDataset":
        return PairedDataset(
            self.image.with_values(image_values),
            self.text.with_values(text_values),
            self.labels,
            self.n_classes,
            self.is_train,
            self.class_weights,
        )

    def split(self, which: str):
        """Return ``(image, text, labels)`` arrays for ``"train"`` or ``"test"`` rows."""
        idx = {"train": self.train_idx, "test": self.test_idx}[which]
        return self.image.values[idx], self.text.values[idx], self.labels[idx]


def make_paired(image: EmbeddingMatrix, text: EmbeddingMatrix, labels, seed: int,
                train_fraction: float = 0.8, n_classes: Optional[int] = None,
                stratify: bool = False) -> PairedDataset:
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if not (image.rows == text.rows == n):
        raise ConfigurationError(f"row counts disagree: image {image.rows}, text {text.rows}, labels {n}")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if n_classes is None:
        n_classes = max(int(labels.max()) + 1, 2) if n else 2
    rng = np.random.default_rng(seed)
    is_train = np.zeros(n, dtype=bool)
    if stratify:
        for c in range(n_classes):
            idx = np.flatnonzero(labels == c)
            rng.shuffle(idx)
            is_train[idx[: int(round(train_fraction * idx.size))]] = True
    else:
        perm = rng.permutation(n)
        is_train[perm[: int(round(train_fraction * n))]] = True
    return PairedDataset(image, text, labels, n_classes, is_train)


def _row_normalize(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def dataset_stats(ds: PairedDataset) -> Dict[str, dict]:
    """Per-modality variance summary computed on unit-normalized rows.

    ``mean_variance`` is the mean over dimensions of the per-dimension
    (population) variance.
    """
    if ds.n_rows < 2:
        raise InputError("dataset_stats needs at least 2 rows")
    out = {}
    for m in (ds.image, ds.text):
        norms = np.linalg.norm(m.values.astype(np.float64), axis=1)
        unit = _row_normalize(m.values)
        per_dim = unit.var(axis=0)
        out[m.modality] = {
            "per_dim_variance": per_dim,
            "mean_variance": float(per_dim.mean()),
            "mean_norm": float(norms.mean()),
            "min_norm": float(norms.min()),
            "max_norm": float(norms.max()),
        }
    return out


# ---------------------------------------------------------------------------
# manifests


def read_keyvalue(path) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_keyvalue(pairs: Dict[str, object], path) -> None:
    with open(path, "w") as fh:
        for k, v in pairs.items():
            fh.write(f"{k} = {v}\n")


def load_manifest(path) -> PairedDataset:
    kv = read_keyvalue(path)
    base = os.path.dirname(os.path.abspath(path))
    for key in ("image_csv", "text_csv", "label_csv"):
        if key not in kv:
            raise ConfigurationError(f"{path}: manifest is missing {key!r}")

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    image = load_csv(resolve(kv["image_csv"]), "image",
                     int(kv["image_dim"]) if "image_dim" in kv else None)
    text = load_csv(resolve(kv["text_csv"]), "text",
                    int(kv["text_dim"]) if "text_dim" in kv else None)
    labels = load_labels(resolve(kv["label_csv"]))
    n_classes = int(kv["n_classes"]) if "n_classes" in kv else None
    return make_paired(
        image, text, labels,
        seed=int(kv.get("seed", 0)),
        train_fraction=float(kv.get("train_fraction", 0.8)),
        n_classes=n_classes,
        stratify=kv.get("stratify", "false").lower() in ("1", "true", "yes"),
    )


def save_dataset(ds: PairedDataset, directory, seed: int, stem: str = "") -> str:
    """Write image/text/label CSVs plus a manifest; returns the manifest path.

    The manifest re-derives the split from ``seed``, so pass the seed the
    dataset was split with to reproduce the same assignment.
    """
    os.makedirs(directory, exist_ok=True)
    names = {k: f"{stem}{k}.csv" for k in ("image", "text", "labels")}
    save_csv(ds.image, os.path.join(directory, names["image"]))
    save_csv(ds.text, os.path.join(directory, names["text"]))
    save_labels(ds.labels, os.path.join(directory, names["labels"]))
    path = os.path.join(directory, f"{stem}manifest.txt")
    write_keyvalue({
        "image_csv": names["image"],
        "text_csv": names["text"],
        "label_csv": names["labels"],
        "n_classes": ds.n_classes,
        "seed": seed,
        "train_fraction": round(float(ds.is_train.mean()), 6),
    }, path)
    return path
