"""Early-fusion and late-joint-fusion classifier heads over precomputed embeddings.

Early fusion concatenates the two embeddings and runs one feature block
(dense 128 -> ReLU -> dropout -> batchnorm) before the output layer.
Late-joint fusion gives each modality its own 64-wide block, concatenates
the two block outputs and feeds them to the output layer. Binary tasks
use a single logit; multiclass tasks use one logit per class.
"""

from __future__ import annotations

import json
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ParseError, UsageError
from .numeric_core import DEFAULT_DTYPE, BatchNorm, Dense, Sequential, block_specs

CHECKPOINT_HEADER = "gapfuse-ckpt-v1"
KINDS = ("early", "late_joint")
HIDDEN_EARLY = 128
HIDDEN_LATE = 64


def output_dim(n_classes: int) -> int:
    return 1 if n_classes == 2 else n_classes


class FusionModel:
    def __init__(self, kind: str, image_dim: int, text_dim: int, n_classes: int, dropout: float = 0.0,
                 seed: int = 0, dtype=DEFAULT_DTYPE):
        if kind not in KINDS:
            raise ConfigurationError(f"model kind must be one of {KINDS}, got {kind!r}")
        if image_dim < 1 or text_dim < 1:
            raise ConfigurationError(f"embedding dims must be positive, got image {image_dim}, text {text_dim}")
        if n_classes < 2:
            raise ConfigurationError(f"need at least 2 classes, got {n_classes}")
        self.kind = kind
        self.image_dim, self.text_dim = image_dim, text_dim
        self.n_classes = n_classes
        self.dropout = dropout
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.out_dim = output_dim(n_classes)
        rng = np.random.default_rng(seed)
        if kind == "early":
            self.blocks = {"fusion": Sequential(block_specs(image_dim + text_dim, HIDDEN_EARLY, dropout),
                                                rng=rng, dtype=dtype)}
            head_in = HIDDEN_EARLY
        else:
            self.blocks = {
                "image": Sequential(block_specs(image_dim, HIDDEN_LATE, dropout), rng=rng, dtype=dtype),
                "text": Sequential(block_specs(text_dim, HIDDEN_LATE, dropout), rng=rng, dtype=dtype),
            }
            head_in = 2 * HIDDEN_LATE
        self.head = Dense(head_in, self.out_dim, rng=rng, dtype=dtype)
        self._taped = False

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, block in self.blocks.items():
            out.update(block.named_parameters(prefix=f"{name}."))
        for k, v in self.head.params.items():
            out[f"head.dense.{k}"] = v
        return out

    def named_grads(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, block in self.blocks.items():
            out.update(block.named_grads(prefix=f"{name}."))
        for k, v in self.head.grads.items():
            out[f"head.dense.{k}"] = v
        return out

    def named_buffers(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, block in self.blocks.items():
            for i, layer in enumerate(block.layers):
                if isinstance(layer, BatchNorm):
                    out[f"{name}.{i}.batchnorm.running_mean"] = layer.running_mean
                    out[f"{name}.{i}.batchnorm.running_var"] = layer.running_var
        return out

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.named_parameters().values()))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.named_parameters().values()]).astype(np.float32)

    def config(self) -> dict:
        return {"kind": self.kind, "image_dim": self.image_dim, "text_dim": self.text_dim,
                "n_classes": self.n_classes, "dropout": self.dropout, "seed": self.seed}

    # -- forward / backward -------------------------------------------------

    def forward(self, image: np.ndarray, text: np.ndarray, training: bool = False
                ) -> Tuple[np.ndarray, Optional[Dict[str, np.ndarray]]]:
        """Return ``(logits, branch_features)``; features are ``None`` for early fusion."""
        image = np.asarray(image, dtype=self.dtype)
        text = np.asarray(text, dtype=self.dtype)
        for name, arr, dim in (("image", image, self.image_dim), ("text", text, self.text_dim)):
            if arr.ndim != 2 or arr.shape[1] != dim:
                raise ConfigurationError(f"{name} embeddings must have shape (N, {dim}), got {arr.shape}")
        if image.shape[0] != text.shape[0]:
            raise ConfigurationError(f"batch sizes differ: image {image.shape[0]}, text {text.shape[0]}")
        if self.kind == "early":
            h = self.blocks["fusion"].forward(np.concatenate([image, text], axis=1), training=training)
            feats = None
        else:
            fi = self.blocks["image"].forward(image, training=training)
            ft = self.blocks["text"].forward(text, training=training)
            h = np.concatenate([fi, ft], axis=1)
            feats = {"image": fi, "text": ft}
        logits = self.head.forward(h, training=training)
        self._taped = training
        return logits, feats

    def backward(self, grad_logits: np.ndarray,
                 grad_features: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, np.ndarray]:
        """Backpropagate from logit gradients (plus optional branch-feature gradients).

        Requires a preceding training-mode ``forward``. Returns the gradient
        dict keyed like ``named_parameters``.
        """
        if not self._taped:
            raise UsageError("backward() needs a preceding forward(..., training=True)")
        grad_h = self.head.backward(np.asarray(grad_logits, dtype=self.dtype).reshape(-1, self.out_dim))
        if self.kind == "early":
            if grad_features:
                raise ConfigurationError("early fusion has no branch features to take gradients for")
            self.blocks["fusion"].backward(grad_h)
        else:
            gi = grad_h[:, :HIDDEN_LATE]
            gt = grad_h[:, HIDDEN_LATE:]
            if grad_features:
                gi = gi + grad_features.get("image", 0)
                gt = gt + grad_features.get("text", 0)
            self.blocks["image"].backward(gi)
            self.blocks["text"].backward(gt)
        self._taped = False
        return self.named_grads()


def build(kind: str, image_dim: int, text_dim: int, n_classes: int, dropout: float = 0.0, seed: int = 0,
          dtype=DEFAULT_DTYPE) -> FusionModel:
    return FusionModel(kind, image_dim, text_dim, n_classes, dropout=dropout, seed=seed, dtype=dtype)


def forward(model: FusionModel, image_emb, text_emb, phase: str = "eval"):
    return model.forward(image_emb, text_emb, training=(phase == "train"))


def backward(model: FusionModel, grad_logits, grad_features=None):
    return model.backward(grad_logits, grad_features)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: FusionModel, path, extra: Optional[dict] = None) -> None:
    arrays = {f"param:{k}": v.astype(np.float32) for k, v in model.named_parameters().items()}
    arrays.update({f"buffer:{k}": v.astype(np.float32) for k, v in model.named_buffers().items()})
    meta = {"header": CHECKPOINT_HEADER, "config": model.config(), "extra": extra or {}}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> FusionModel:
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise ParseError(f"{path}: not a gapfuse checkpoint")
        meta = json.loads(str(z["__meta__"]))
        if meta.get("header") != CHECKPOINT_HEADER:
            raise ParseError(f"{path}: unsupported checkpoint header {meta.get('header')!r}")
        model = build(**meta["config"])
        params = model.named_parameters()
        buffers = model.named_buffers()
        for key in z.files:
            if key == "__meta__":
                continue
            section, name = key.split(":", 1)
            target = params if section == "param" else buffers
            if name not in target or target[name].shape != z[key].shape:
                raise ParseError(f"{path}: unexpected tensor {name} with shape {z[key].shape}")
            target[name][...] = z[key]
    return model
