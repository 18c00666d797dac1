"""Dense layers, losses and AdamW with hand-written reverse-mode gradients.

Only the handful of pieces the fusion heads need are here: affine maps,
ReLU, dropout, 1-d batch normalization, the two weighted classification
losses and the AdamW update. Every layer caches what its ``backward``
needs during ``forward`` and exposes ``params`` / ``grads`` dicts keyed by
short names (``weight``, ``bias``, ``gamma``, ``beta``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from .errors import ConfigurationError, InputError, UsageError

DEFAULT_DTYPE = np.float32

LAYER_KINDS = ("dense", "relu", "dropout", "batchnorm")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    dropout_rate: float = 0.0
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigurationError(f"{self.kind} layer needs positive dims, got {self.in_dim}->{self.out_dim}")
        if self.kind != "dense" and self.in_dim != self.out_dim:
            raise ConfigurationError(f"{self.kind} preserves dimension but got {self.in_dim}->{self.out_dim}")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigurationError(f"dropout_rate must lie in [0, 1], got {self.dropout_rate}")
        if self.bn_epsilon <= 0:
            raise ConfigurationError("bn_epsilon must be positive")
        if not 0.0 <= self.bn_momentum <= 1.0:
            raise ConfigurationError("bn_momentum must lie in [0, 1]")

    @property
    def n_params(self) -> int:
        if self.kind == "dense":
            return self.in_dim * self.out_dim + self.out_dim
        if self.kind == "batchnorm":
            return 2 * self.out_dim
        return 0


# ---------------------------------------------------------------------------
# functional forms


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``x @ weight.T + bias`` for a batch of row vectors."""
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if weight.ndim != 2 or x.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ConfigurationError(
            f"dense shape mismatch: input {x.shape}, weights {weight.shape}, bias {bias.shape}"
        )
    return x @ weight.T + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_grad(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# layers


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng: Optional[np.random.Generator] = None,
                 dtype=DEFAULT_DTYPE):
        if out_dim < 1 or in_dim < 1:
            raise ConfigurationError(f"dense layer needs positive dims, got {in_dim}->{out_dim}")
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_dim)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params = {
            "weight": rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype),
            "bias": rng.uniform(-bound, bound, size=out_dim).astype(dtype),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._x = None

    def forward(self, x, training=True):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigurationError(f"dense expects (N, {self.in_dim}) input, got {x.shape}")
        self._x = x
        return dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        if self._x is None:
            raise UsageError("Dense.backward called before forward")
        self.grads["weight"] = grad_out.T @ self._x
        self.grads["bias"] = grad_out.sum(axis=0)
        return grad_out @ self.params["weight"]


class ReLU:
    def __init__(self):
        self.params, self.grads = {}, {}
        self._x = None

    def forward(self, x, training=True):
        self._x = x
        return relu(x)

    def backward(self, grad_out):
        if self._x is None:
            raise UsageError("ReLU.backward called before forward")
        return relu_grad(self._x, grad_out)


class Dropout:
    """Inverted dropout; identity at eval time and whenever ``rate == 0``."""

    def __init__(self, rate: float = 0.0, rng: Optional[np.random.Generator] = None):
        if not 0.0 <= rate <= 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1], got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.params, self.grads = {}, {}
        self._mask = None

    def forward(self, x, training=True):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if self.rate == 1.0:
            self._mask = np.zeros_like(x)
        else:
            keep = self.rng.random(x.shape) >= self.rate
            self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_out):
        return grad_out if self._mask is None else grad_out * self._mask


class BatchNorm:
    """Per-feature batch normalization over the batch axis.

    Running statistics follow ``running = (1 - momentum) * running + momentum * batch``
    with the unbiased batch variance, and are what eval mode normalizes with.
    """

    def __init__(self, dim: int, epsilon: float = 1e-5, momentum: float = 0.1, dtype=DEFAULT_DTYPE):
        self.dim, self.epsilon, self.momentum = dim, epsilon, momentum
        self.params = {"gamma": np.ones(dim, dtype=dtype), "beta": np.zeros(dim, dtype=dtype)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self._cache = None

    def forward(self, x, training=True):
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ConfigurationError(f"batchnorm expects (N, {self.dim}) input, got {x.shape}")
        if training:
            n = x.shape[0]
            if n < 2:
                raise InputError("batchnorm in training mode needs at least 2 rows (batch variance undefined for N=1)")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            x_hat = (x - mean) * inv_std
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(self.running_mean.dtype)
            unbiased = var * n / (n - 1)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
            self._cache = (x_hat, inv_std)
        else:
            x_hat = (x - self.running_mean) / np.sqrt(self.running_var + self.epsilon)
            self._cache = None
        return self.params["gamma"] * x_hat + self.params["beta"]

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError("BatchNorm.backward needs a preceding training-mode forward")
        x_hat, inv_std = self._cache
        n = grad_out.shape[0]
        self.grads["gamma"] = (grad_out * x_hat).sum(axis=0)
        self.grads["beta"] = grad_out.sum(axis=0)
        g = grad_out * self.params["gamma"]
        return inv_std / n * (n * g - g.sum(axis=0) - x_hat * (g * x_hat).sum(axis=0))


def batchnorm_forward(x: np.ndarray, state: BatchNorm, training: bool = True) -> np.ndarray:
    return state.forward(x, training=training)


def build_layer(spec: LayerSpec, rng: Optional[np.random.Generator] = None, dtype=DEFAULT_DTYPE):
    if spec.kind == "dense":
        return Dense(spec.in_dim, spec.out_dim, rng=rng, dtype=dtype)
    if spec.kind == "relu":
        return ReLU()
    if spec.kind == "dropout":
        return Dropout(spec.dropout_rate, rng=rng)
    return BatchNorm(spec.out_dim, epsilon=spec.bn_epsilon, momentum=spec.bn_momentum, dtype=dtype)


def block_specs(in_dim: int, width: int, dropout: float = 0.0) -> List[LayerSpec]:
    """Feature-extraction block: dense -> relu -> dropout -> batchnorm."""
    return [
        LayerSpec("dense", in_dim, width),
        LayerSpec("relu", width, width),
        LayerSpec("dropout", width, width, dropout_rate=dropout),
        LayerSpec("batchnorm", width, width),
    ]


class Sequential:
    def __init__(self, specs: Iterable[LayerSpec], rng: Optional[np.random.Generator] = None,
                 dtype=DEFAULT_DTYPE):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.specs = list(specs)
        self.layers = [build_layer(s, rng=rng, dtype=dtype) for s in self.specs]

    def forward(self, x, training=True):
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def named_parameters(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out = {}
        for i, (spec, layer) in enumerate(zip(self.specs, self.layers)):
            for name, value in layer.params.items():
                out[f"{prefix}{i}.{spec.kind}.{name}"] = value
        return out

    def named_grads(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out = {}
        for i, (spec, layer) in enumerate(zip(self.specs, self.layers)):
            for name, value in layer.grads.items():
                out[f"{prefix}{i}.{spec.kind}.{name}"] = value
        return out

    @property
    def n_params(self) -> int:
        return sum(s.n_params for s in self.specs)


# ---------------------------------------------------------------------------
# losses


def weighted_bce_with_logits(logits, targets, class_weights):
    """Class-weighted binary cross-entropy on raw logits.

    Returns ``(loss, grad)`` where ``loss`` is the batch mean of
    ``w[y] * (log(1 + e^z) - y z)`` and ``grad`` has the shape of ``logits``.
    """
    logits = np.asarray(logits)
    z = logits.reshape(-1).astype(np.float64)
    y = np.asarray(targets).reshape(-1)
    if y.shape[0] != z.shape[0]:
        raise ConfigurationError(f"{z.shape[0]} logits but {y.shape[0]} targets")
    if not np.all((y == 0) | (y == 1)):
        raise InputError("binary cross-entropy targets must be 0 or 1")
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (2,):
        raise ConfigurationError(f"binary loss needs 2 class weights, got shape {w.shape}")
    yf = y.astype(np.float64)
    wy = w[y.astype(int)]
    per_sample = np.maximum(z, 0) - z * yf + np.log1p(np.exp(-np.abs(z)))
    n = z.shape[0]
    loss = float((wy * per_sample).sum() / n)
    grad = (wy * (sigmoid(z) - yf) / n).reshape(logits.shape).astype(logits.dtype)
    return loss, grad


def weighted_cross_entropy(logits, targets, class_weights):
    """Class-weighted softmax cross-entropy, normalized by the sum of sampled weights."""
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ConfigurationError(f"cross-entropy needs (N, C>=2) logits, got {logits.shape}")
    n, c = logits.shape
    y = np.asarray(targets).reshape(-1)
    if y.shape[0] != n:
        raise ConfigurationError(f"{n} logit rows but {y.shape[0]} targets")
    if np.any(y < 0) or np.any(y >= c) or not np.all(np.equal(np.mod(y, 1), 0)):
        raise InputError(f"target class indices must be integers in [0, {c})")
    y = y.astype(int)
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (c,):
        raise ConfigurationError(f"expected {c} class weights, got shape {w.shape}")
    logp = log_softmax(logits.astype(np.float64))
    wy = w[y]
    total_w = wy.sum()
    loss = float(-(wy * logp[np.arange(n), y]).sum() / total_w)
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    grad *= (wy / total_w)[:, None]
    return loss, grad.astype(logits.dtype)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("AdamW betas must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight decay must be nonnegative")


def adamw_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamWState):
    """One AdamW update, applied in place to ``params`` (which is also returned)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        v = state.second_moment[name]
        p *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
    return params
