"""Run configuration as a flat ``section.key = value`` file.

Sections: ``data``, ``synth``, ``model``, ``align``, ``train``, ``optim``,
``out``. Every key can be overridden on the command line with a flag of
the same dotted name, e.g. ``--train.epochs 10``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

from .alignment import AlignmentConfig
from .embedding_store import load_manifest, read_keyvalue
from .errors import ConfigurationError
from .synthetic_data import PRESETS, SynthSpec, generate


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-2


@dataclass(frozen=True)
class RunConfig:
    manifest: Optional[str] = None
    synth_preset: Optional[str] = None
    synth_overrides: Dict[str, str] = field(default_factory=dict)
    model_kind: str = "early"
    dropout: float = 0.0
    align: AlignmentConfig = field(default_factory=AlignmentConfig)
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    eval_train: bool = False
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    out_dir: str = "runs"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigurationError(f"train.batch_size must be >= 2 (batchnorm), got {self.batch_size}")
        if self.model_kind not in ("early", "late_joint"):
            raise ConfigurationError(f"model.kind must be 'early' or 'late_joint', got {self.model_kind!r}")
        if self.manifest and self.synth_preset:
            raise ConfigurationError("set either data.manifest or synth.preset, not both")
        if self.synth_preset and self.synth_preset not in PRESETS:
            raise ConfigurationError(f"synth.preset must be one of {sorted(PRESETS)}, got {self.synth_preset!r}")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_lambda(self, lam: float) -> "RunConfig":
        return self.replace(align=dataclasses.replace(self.align, lambda_shift=float(lam)))

    def synth_spec(self) -> SynthSpec:
        base = PRESETS[self.synth_preset]()
        kw = {}
        for key, raw in self.synth_overrides.items():
            kw[key] = _coerce(raw, type(getattr(base, key)) if getattr(base, key) is not None else tuple,
                              f"synth.{key}")
        return dataclasses.replace(base, **kw)

    def load_dataset(self):
        if self.manifest:
            return load_manifest(self.manifest)
        if self.synth_preset:
            return generate(self.synth_spec())
        raise ConfigurationError("no dataset configured: set data.manifest or synth.preset")

    def to_pairs(self) -> Dict[str, object]:
        pairs = {}
        if self.manifest:
            pairs["data.manifest"] = self.manifest
        if self.synth_preset:
            pairs["synth.preset"] = self.synth_preset
            for k, v in self.synth_overrides.items():
                pairs[f"synth.{k}"] = v
        pairs["model.kind"] = self.model_kind
        pairs["model.dropout"] = self.dropout
        for k, v in dataclasses.asdict(self.align).items():
            pairs[f"align.{k}"] = v
        pairs["train.epochs"] = self.epochs
        pairs["train.batch_size"] = self.batch_size
        pairs["train.seed"] = self.seed
        pairs["train.eval_train"] = self.eval_train
        for k, v in dataclasses.asdict(self.optim).items():
            pairs[f"optim.{k}"] = v
        pairs["out.dir"] = self.out_dir
        return pairs


_TOP_KEYS = {
    "data.manifest": ("manifest", str),
    "synth.preset": ("synth_preset", str),
    "model.kind": ("model_kind", str),
    "model.dropout": ("dropout", float),
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.seed": ("seed", int),
    "train.eval_train": ("eval_train", bool),
    "out.dir": ("out_dir", str),
}
_ALIGN_TYPES = {f.name: f.type for f in dataclasses.fields(AlignmentConfig)}
_OPTIM_TYPES = {f.name: f.type for f in dataclasses.fields(OptimizerConfig)}
_TYPES = {"float": float, "int": int, "bool": bool, "str": str}


def _coerce(raw, typ, key):
    if isinstance(typ, str):
        typ = _TYPES.get(typ, str)
    if not isinstance(raw, str):
        return raw
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is tuple:
            return tuple(float(x) for x in raw.replace(",", " ").split())
        return typ(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot interpret {raw!r} as {getattr(typ, '__name__', typ)}") from None


def config_from_pairs(pairs: Dict[str, str]) -> RunConfig:
    top, align, optim, synth = {}, {}, {}, {}
    for key, raw in pairs.items():
        if key in _TOP_KEYS:
            attr, typ = _TOP_KEYS[key]
            top[attr] = _coerce(raw, typ, key)
        elif key.startswith("align.") and key[6:] in _ALIGN_TYPES:
            align[key[6:]] = _coerce(raw, _ALIGN_TYPES[key[6:]], key)
        elif key.startswith("optim.") and key[6:] in _OPTIM_TYPES:
            optim[key[6:]] = _coerce(raw, _OPTIM_TYPES[key[6:]], key)
        elif key.startswith("synth."):
            name = key[6:]
            if name not in {f.name for f in dataclasses.fields(SynthSpec)}:
                raise ConfigurationError(f"unknown config key {key!r}")
            synth[name] = raw
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    return RunConfig(align=AlignmentConfig(**align), optim=OptimizerConfig(**optim),
                     synth_overrides=synth, **top)


def load_config(path: Optional[str], overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    pairs = read_keyvalue(path) if path else {}
    pairs.update(overrides or {})
    cfg = config_from_pairs(pairs)
    if cfg.manifest and path and not cfg.manifest.startswith("/"):
        if "data.manifest" not in (overrides or {}):
            cfg = cfg.replace(manifest=os.path.join(os.path.dirname(os.path.abspath(path)), cfg.manifest))
    return cfg
