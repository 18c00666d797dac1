"""Memory accounting by element counts, wall-clock epoch timing, and
plain-text/JSON efficiency tables.

Memory here is arithmetic on tensor shapes (elements x bytes per
element), never an allocator measurement, so it is exact and identical on
every platform.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterable, List, Sequence, Union

import numpy as np

from .fusion_models import FusionModel, build

ELEMENT_SIZE = 4  # float32
MIB = 2 ** 20
MB_SI = 10 ** 6

# Embedding widths per extractor family (image, text).
EMBEDDING_DIMS = {
    "clip": (512, 512),
    "dinov2_llama2": (768, 4096),
}

# Raw-input baseline: BERT-base (110M) + ViT-base (86M) parameters, one
# 3x224x224 float image tensor per sample (token ids are not counted).
RAW_PARAM_COUNT = 196_000_000
RAW_IMAGE_ELEMENTS = 3 * 224 * 224

# (train samples, test samples, n_classes)
DATASET_SPLITS = {
    "brset": (13012, 3254, 2),
    "ham10000": (8012, 2003, 7),
    "satellitebench": (936, 312, 2),
}


def batch_memory(tensors: Union[Dict[str, np.ndarray], Iterable[np.ndarray]],
                 element_size: int = ELEMENT_SIZE) -> int:
    """Sum of ``numel * element_size`` over every tensor in the batch."""
    values = tensors.values() if isinstance(tensors, dict) else tensors
    return int(sum(np.asarray(t).size for t in values) * element_size)


def dataset_memory(n_samples: int, image_dim: int, text_dim: int, label_width: int = 1,
                   element_size: int = ELEMENT_SIZE) -> int:
    """Bytes for one pass over ``n_samples`` paired rows plus their label tensor."""
    return int(n_samples * (image_dim + text_dim + label_width) * element_size)


def label_width(n_classes: int) -> int:
    # multiclass targets are carried one-hot, binary ones as a single column
    return 1 if n_classes == 2 else n_classes


def model_memory(model: Union[FusionModel, int], element_size: int = ELEMENT_SIZE) -> int:
    n = model if isinstance(model, (int, np.integer)) else model.n_params
    return int(n * element_size)


def format_mb(n_bytes: float, si: bool = False) -> str:
    """Bytes as "x.xx MB"; binary megabytes unless ``si``."""
    return f"{n_bytes / (MB_SI if si else MIB):.2f} MB"


def to_mb(n_bytes: float, si: bool = False) -> float:
    return n_bytes / (MB_SI if si else MIB)


# ---------------------------------------------------------------------------
# timing


class Timer:
    """Monotonic wall-clock timer usable as a context manager (nests freely)."""

    def __init__(self):
        self.start = None
        self.elapsed = 0.0

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


def timed_epoch(run: Callable[[], object]) -> float:
    with Timer() as t:
        run()
    return t.elapsed


# ---------------------------------------------------------------------------
# reports


@dataclass
class EfficiencyReport:
    model_size_bytes: int
    train_set_bytes_per_epoch: int
    test_set_bytes_per_epoch: int
    avg_train_seconds_per_epoch: float = 0.0
    avg_inference_seconds_per_epoch: float = 0.0
    element_size: int = ELEMENT_SIZE
    label: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EfficiencyReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "EfficiencyReport":
        return cls.from_dict(json.loads(s))


def accounting_report(kind: str, image_dim: int, text_dim: int, n_classes: int, n_train: int, n_test: int,
                      label: str = "") -> EfficiencyReport:
    model = build(kind, image_dim, text_dim, n_classes)
    lw = label_width(n_classes)
    return EfficiencyReport(
        model_size_bytes=model_memory(model),
        train_set_bytes_per_epoch=dataset_memory(n_train, image_dim, text_dim, lw),
        test_set_bytes_per_epoch=dataset_memory(n_test, image_dim, text_dim, lw),
        label=label,
    )


def reference_memory_rows(include_raw: bool = True) -> List[EfficiencyReport]:
    """Accounting for every (dataset, extractor, fusion) combination in the reference setup."""
    rows = []
    for ds_name, (n_train, n_test, n_classes) in DATASET_SPLITS.items():
        for family, (di, dt) in EMBEDDING_DIMS.items():
            for kind in ("early", "late_joint"):
                rows.append(accounting_report(kind, di, dt, n_classes, n_train, n_test,
                                              label=f"{ds_name}/{family}/{kind}"))
        if include_raw:
            for kind in ("early", "late_joint"):
                rows.append(EfficiencyReport(
                    model_size_bytes=model_memory(RAW_PARAM_COUNT),
                    train_set_bytes_per_epoch=n_train * RAW_IMAGE_ELEMENTS * ELEMENT_SIZE,
                    test_set_bytes_per_epoch=n_test * RAW_IMAGE_ELEMENTS * ELEMENT_SIZE,
                    label=f"{ds_name}/raw/{kind}",
                ))
    return rows


def format_table(reports: Sequence[EfficiencyReport], si: bool = False, timing: bool = True) -> str:
    """Aligned plain-text table, one report per row."""
    header = ["Run", "Model Size", "Train Set / Epoch", "Test Set / Epoch"]
    if timing:
        header += ["Train s / Epoch", "Infer s / Epoch"]
    body = []
    for r in reports:
        row = [r.label or "-", format_mb(r.model_size_bytes, si), format_mb(r.train_set_bytes_per_epoch, si),
               format_mb(r.test_set_bytes_per_epoch, si)]
        if timing:
            row += [f"{r.avg_train_seconds_per_epoch:.3f}", f"{r.avg_inference_seconds_per_epoch:.3f}"]
        body.append(row)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(str(x).ljust(w) for x, w in zip(row, widths)) for row in body]
    return "\n".join(lines)
