"""Training protocol for the fusion heads: class-weighted loss, AdamW,
per-epoch test metrics, best-epoch tracking, timing and memory accounting,
and lambda sweeps."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .alignment import apply_pipeline, reg_loss, train_gap_vector
from .config import RunConfig
from .efficiency import EfficiencyReport, Timer, dataset_memory, label_width, model_memory
from .embedding_store import PairedDataset
from .fusion_models import FusionModel, build
from .geometry import gap_from_arrays
from .metrics import accuracy, f1_score
from .numeric_core import AdamWState, adamw_step, weighted_bce_with_logits, weighted_cross_entropy

log = logging.getLogger(__name__)

REPORT_SCHEMA = "gapfuse-report-v1"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float
    test_f1: float
    train_accuracy: Optional[float] = None
    reg_loss: Optional[float] = None
    train_seconds: float = 0.0
    inference_seconds: float = 0.0


@dataclass
class RunReport:
    epochs: List[EpochRecord]
    best_epoch: int
    best_accuracy: float
    best_f1: float
    accuracy_at_best_epoch: float
    gap_before: Optional[dict]
    gap_after: Optional[dict]
    efficiency: EfficiencyReport
    config: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA

    def to_dict(self) -> dict:
        d = asdict(self)
        d["efficiency"] = self.efficiency.to_dict()
        return d

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def numerics(self) -> dict:
        """Everything except wall-clock fields (the deterministic part of the report)."""
        d = self.to_dict()
        for rec in d["epochs"]:
            rec.pop("train_seconds")
            rec.pop("inference_seconds")
        d["efficiency"].pop("avg_train_seconds_per_epoch")
        d["efficiency"].pop("avg_inference_seconds_per_epoch")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d["epochs"] = [EpochRecord(**e) for e in d["epochs"]]
        d["efficiency"] = EfficiencyReport.from_dict(d["efficiency"])
        return cls(**d)


def _gap_summary(text, image) -> Optional[dict]:
    if text.shape[1] != image.shape[1] or text.shape[0] == 0:
        return None
    g = gap_from_arrays(text, image, normalize=False)
    return {"gap_scalar": g.gap_scalar, "gap_vector_norm": float(np.linalg.norm(g.gap_vector)),
            "mean_cross_modal_cosine": g.mean_cross_modal_cosine}


def predict(model: FusionModel, image, text, batch_size: int = 64) -> np.ndarray:
    preds = []
    for start in range(0, image.shape[0], batch_size):
        logits, _ = model.forward(image[start:start + batch_size], text[start:start + batch_size], training=False)
        if model.out_dim == 1:
            preds.append((logits[:, 0] > 0).astype(np.int64))
        else:
            preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _loss(model: FusionModel, logits, labels, class_weights):
    if model.out_dim == 1:
        return weighted_bce_with_logits(logits, labels, class_weights)
    return weighted_cross_entropy(logits, labels, class_weights)


def _snapshot(model: FusionModel) -> Dict[str, np.ndarray]:
    state = {f"param:{k}": v.copy() for k, v in model.named_parameters().items()}
    state.update({f"buffer:{k}": v.copy() for k, v in model.named_buffers().items()})
    return state


def restore(model: FusionModel, state: Dict[str, np.ndarray]) -> FusionModel:
    params, buffers = model.named_parameters(), model.named_buffers()
    for key, value in state.items():
        section, name = key.split(":", 1)
        (params if section == "param" else buffers)[name][...] = value
    return model


def fit(ds: PairedDataset, cfg: RunConfig,
        on_epoch_end: Optional[Callable[[FusionModel, int], None]] = None):
    """Train one model under ``cfg``; returns ``(model, report, best_state)``.

    The alignment pipeline runs in train phase on the training rows (fresh
    noise every epoch) and in eval phase on the test rows, both with the
    gap vector estimated from the clean training rows.
    """
    ss = np.random.SeedSequence(cfg.seed).spawn(3)
    init_seed = int(ss[0].generate_state(1)[0])
    shuffle_rng = np.random.default_rng(ss[1])
    noise_seeds = ss[2].spawn(cfg.epochs)
    align = cfg.align
    same_dims = ds.text.dim == ds.image.dim
    gap_vec = train_gap_vector(ds) if (align.lambda_shift != 0 and same_dims) else None

    train_idx, test_idx = ds.train_idx, ds.test_idx
    y_train, y_test = ds.labels[train_idx], ds.labels[test_idx]
    eval_ds = apply_pipeline(ds, align, "eval", seed=0, gap_vector=gap_vec)
    te_img, te_txt = eval_ds.image.values[test_idx], eval_ds.text.values[test_idx]

    model = build(cfg.model_kind, ds.image.dim, ds.text.dim, ds.n_classes, dropout=cfg.dropout, seed=init_seed)
    opt = AdamWState(lr=cfg.optim.lr, beta1=cfg.optim.beta1, beta2=cfg.optim.beta2,
                     epsilon=cfg.optim.epsilon, weight_decay=cfg.optim.weight_decay)
    params = model.named_parameters()
    use_reg = model.kind == "late_joint" and align.reg_weight > 0

    records: List[EpochRecord] = []
    best_state, best_f1, train_view = None, -1.0, None
    for epoch in range(1, cfg.epochs + 1):
        train_view = apply_pipeline(ds, align, "train", seed=int(noise_seeds[epoch - 1].generate_state(1)[0]),
                                    gap_vector=gap_vec)
        tr_img = train_view.image.values[train_idx]
        tr_txt = train_view.text.values[train_idx]
        order = shuffle_rng.permutation(train_idx.size)
        losses, regs, weights = [], [], []
        with Timer() as t_train:
            for start in range(0, order.size, cfg.batch_size):
                b = order[start:start + cfg.batch_size]
                if b.size < 2:
                    # batchnorm cannot normalize a single row
                    continue
                logits, feats = model.forward(tr_img[b], tr_txt[b], training=True)
                loss, grad = _loss(model, logits, y_train[b], ds.class_weights)
                grad_feats = None
                if use_reg:
                    r, g_t, g_i = reg_loss(feats["text"], feats["image"])
                    loss += align.reg_weight * r
                    regs.append(r)
                    grad_feats = {"text": align.reg_weight * g_t, "image": align.reg_weight * g_i}
                grads = model.backward(grad, grad_feats)
                adamw_step(params, grads, opt)
                losses.append(loss)
                weights.append(b.size)
        with Timer() as t_infer:
            pred = predict(model, te_img, te_txt, cfg.batch_size)
            acc = accuracy(y_test, pred)
            f1 = f1_score(y_test, pred, ds.n_classes)
        rec = EpochRecord(
            epoch=epoch,
            train_loss=float(np.average(losses, weights=weights)) if losses else float("nan"),
            test_accuracy=acc,
            test_f1=f1,
            reg_loss=float(np.mean(regs)) if regs else None,
            train_seconds=t_train.elapsed,
            inference_seconds=t_infer.elapsed,
        )
        if cfg.eval_train:
            clean = eval_ds  # train accuracy is measured on noise-free aligned rows
            rec.train_accuracy = accuracy(
                y_train, predict(model, clean.image.values[train_idx], clean.text.values[train_idx], cfg.batch_size))
        records.append(rec)
        if f1 > best_f1:
            best_f1, best_state = f1, _snapshot(model)
        log.debug("epoch %d loss %.4f acc %.4f f1 %.4f", epoch, rec.train_loss, acc, f1)
        if on_epoch_end is not None:
            on_epoch_end(model, epoch)

    f1s = np.array([r.test_f1 for r in records])
    best_i = int(np.argmax(f1s))
    lw = label_width(ds.n_classes)
    eff = EfficiencyReport(
        model_size_bytes=model_memory(model),
        train_set_bytes_per_epoch=dataset_memory(train_idx.size, ds.image.dim, ds.text.dim, lw),
        test_set_bytes_per_epoch=dataset_memory(test_idx.size, ds.image.dim, ds.text.dim, lw),
        avg_train_seconds_per_epoch=float(np.mean([r.train_seconds for r in records])),
        avg_inference_seconds_per_epoch=float(np.mean([r.inference_seconds for r in records])),
        label=f"{cfg.model_kind}",
    )
    report = RunReport(
        epochs=records,
        best_epoch=records[best_i].epoch,
        best_accuracy=float(max(r.test_accuracy for r in records)),
        best_f1=float(f1s[best_i]),
        accuracy_at_best_epoch=records[best_i].test_accuracy,
        gap_before=_gap_summary(ds.text.values[test_idx], ds.image.values[test_idx]) if same_dims else None,
        gap_after=_gap_summary(te_txt, te_img) if same_dims else None,
        efficiency=eff,
        config={k: v for k, v in cfg.to_pairs().items()},
    )
    return model, report, best_state


def train(ds: PairedDataset, cfg: RunConfig) -> RunReport:
    return fit(ds, cfg)[1]


# ---------------------------------------------------------------------------
# lambda sweeps


def lambda_grid(start: float = -1.0, stop: float = 1.0, step: float = 0.1) -> np.ndarray:
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 10)


@dataclass
class SweepPoint:
    lambda_shift: float
    best_accuracy: float
    best_f1: float
    best_epoch: int
    accuracy_at_best_epoch: float


def _sweep_one(args):
    ds, cfg, lam = args
    rep = train(ds, cfg.with_lambda(lam))
    return SweepPoint(float(lam), rep.best_accuracy, rep.best_f1, rep.best_epoch, rep.accuracy_at_best_epoch)


def sweep(ds: PairedDataset, cfg: RunConfig, lambdas: Sequence[float], retrain: bool = True,
          workers: int = 1) -> List[SweepPoint]:
    """Best-epoch metrics for each lambda, in grid order.

    With ``retrain`` a fresh model is trained per lambda (same seed).
    Otherwise one model is trained on the configured lambda and the test
    rows are re-aligned with every grid value at the end of each epoch.
    """
    lambdas = [float(x) for x in lambdas]
    if retrain:
        jobs = [(ds, cfg, lam) for lam in lambdas]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(_sweep_one, jobs))
        return [_sweep_one(j) for j in jobs]

    same_dims = ds.text.dim == ds.image.dim
    gap_vec = train_gap_vector(ds) if same_dims else None
    test_idx = ds.test_idx
    y_test = ds.labels[test_idx]
    views = {}
    for lam in lambdas:
        a = cfg.with_lambda(lam).align
        v = apply_pipeline(ds, a, "eval", seed=0, gap_vector=gap_vec if lam != 0 else None)
        views[lam] = (v.image.values[test_idx], v.text.values[test_idx])
    history = {lam: [] for lam in lambdas}

    def evaluate(model, epoch):
        for lam, (img, txt) in views.items():
            pred = predict(model, img, txt, cfg.batch_size)
            history[lam].append((accuracy(y_test, pred), f1_score(y_test, pred, ds.n_classes)))

    fit(ds, cfg, on_epoch_end=evaluate)
    out = []
    for lam in lambdas:
        accs = np.array([h[0] for h in history[lam]])
        f1s = np.array([h[1] for h in history[lam]])
        i = int(np.argmax(f1s))
        out.append(SweepPoint(lam, float(accs.max()), float(f1s[i]), i + 1, float(accs[i])))
    return out


def write_sweep_csv(points: Sequence[SweepPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "accuracy", "f1", "best_epoch", "accuracy_at_best_epoch"])
        for p in points:
            w.writerow([f"{p.lambda_shift:g}", f"{p.best_accuracy:.6f}", f"{p.best_f1:.6f}", p.best_epoch,
                        f"{p.accuracy_at_best_epoch:.6f}"])
