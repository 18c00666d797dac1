"""``gapfuse`` command-line entry point.

Every config key can be set with ``--config FILE`` and overridden with a
flag of the same dotted name (``--train.epochs 5``, ``--align.noise_std=0``).
Artifacts are written to a temporary name and moved into place, so a zero
exit status means every requested file is complete.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from typing import Dict, List, Optional

import numpy as np

from .config import RunConfig, load_config
from .efficiency import format_table, reference_memory_rows, to_mb
from .embedding_store import save_dataset
from .errors import GapfuseError
from .fusion_models import save_checkpoint
from .geometry import measure_gap, normalize_rows, pca_project
from .training import fit, lambda_grid, restore, sweep, write_sweep_csv

log = logging.getLogger("gapfuse")


def _atomic(path, write):
    """Call ``write(tmp_path)`` then rename onto ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    suffix = os.path.splitext(path)[1]
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=suffix)
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def _write_json(obj, path):
    def w(tmp):
        with open(tmp, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
    return _atomic(path, w)


def _write_text(text, path):
    def w(tmp):
        with open(tmp, "w") as fh:
            fh.write(text)
    return _atomic(path, w)


def _parse_overrides(extra: List[str], allow_positional: bool = True) -> Dict[str, str]:
    """Dotted ``--key value`` / ``--key=value`` pairs; one bare token is the manifest."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            if not allow_positional or "data.manifest" in out:
                raise GapfuseError(f"unexpected argument {tok!r}")
            out["data.manifest"] = tok
            i += 1
            continue
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise GapfuseError(f"flag --{key} needs a value")
            i += 1
            value = extra[i]
        if "." not in key:
            raise GapfuseError(f"unrecognized flag --{key}")
        out[key] = value
        i += 1
    return out


def _parse_lambdas(raw: Optional[str]) -> np.ndarray:
    """``None`` -> full grid; ``a:b:step`` -> range; ``x,y,z`` -> list."""
    if raw is None:
        return lambda_grid()
    if ":" in raw:
        a, b, s = (float(x) for x in raw.split(":"))
        return lambda_grid(a, b, s)
    return np.array([float(x) for x in raw.split(",") if x.strip()])


def _config(args, extra) -> RunConfig:
    overrides = _parse_overrides(extra, allow_positional=args.command != "synth")
    if args.seed is not None:
        overrides["synth.seed" if args.command == "synth" else "train.seed"] = str(args.seed)
    if args.out is not None:
        overrides["out.dir"] = args.out
    if getattr(args, "lambda_", None) is not None and args.command == "train":
        overrides["align.lambda_shift"] = args.lambda_
    return load_config(args.config, overrides)


def _load(cfg: RunConfig):
    if cfg.manifest and not os.path.exists(cfg.manifest):
        raise FileNotFoundError(f"manifest not found: {cfg.manifest}")
    return cfg.load_dataset()


# ---------------------------------------------------------------------------
# commands


def cmd_gap(cfg: RunConfig, k: int = 2) -> dict:
    ds = _load(cfg)
    out = cfg.out_dir
    report = measure_gap(ds)
    payload = report.to_dict()
    payload["train_split"] = measure_gap(ds, rows=ds.train_idx).to_dict() if ds.text.dim == ds.image.dim else None
    _write_json(payload, os.path.join(out, "gap_report.json"))
    if ds.text.dim == ds.image.dim:
        cmd_pca(cfg, k, ds=ds)
    return payload


def cmd_pca(cfg: RunConfig, k: int = 2, ds=None):
    ds = ds if ds is not None else _load(cfg)
    # rows go onto the unit sphere before the shared projection
    res = pca_project([normalize_rows(ds.image), normalize_rows(ds.text)], k=k)
    _atomic(os.path.join(cfg.out_dir, "pca_coords.csv"), lambda p: res.to_csv(p, ["image", "text"]))
    return res


def cmd_train(cfg: RunConfig):
    ds = _load(cfg)
    model, report, best_state = fit(ds, cfg)
    restore(model, best_state)
    _write_json(report.to_dict(), os.path.join(cfg.out_dir, "report.json"))
    _atomic(os.path.join(cfg.out_dir, "model.npz"),
            lambda p: save_checkpoint(model, p, extra={"best_epoch": report.best_epoch}))
    return report


def cmd_sweep(cfg: RunConfig, lambdas, retrain: bool = True, workers: int = 1):
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.abs(lambdas) > 1):
        log.warning("lambda grid extends beyond [-1, 1]; the shift then overshoots the other modality")
    ds = _load(cfg)
    points = sweep(ds, cfg, lambdas, retrain=retrain, workers=workers)
    _atomic(os.path.join(cfg.out_dir, "sweep.csv"), lambda p: write_sweep_csv(points, p))
    _write_json({"retrain": retrain, "points": [vars(p) for p in points], "config": cfg.to_pairs()},
                os.path.join(cfg.out_dir, "sweep.json"))
    return points


def cmd_benchmark(cfg: RunConfig, reference: bool = False, si: bool = False):
    if reference:
        rows = reference_memory_rows()
        table = format_table(rows, si=si, timing=False)
    else:
        ds = _load(cfg)
        _, report, _ = fit(ds, cfg)
        eff = report.efficiency
        eff.label = f"{cfg.manifest or cfg.synth_preset}/{cfg.model_kind}"
        rows = [eff]
        table = format_table(rows, si=si, timing=True)
    payload = {"unit": "MB (10^6 bytes)" if si else "MiB", "rows": [r.to_dict() for r in rows],
               "rows_mb": [{"label": r.label,
                            "model_size": to_mb(r.model_size_bytes, si),
                            "train_set_per_epoch": to_mb(r.train_set_bytes_per_epoch, si),
                            "test_set_per_epoch": to_mb(r.test_set_bytes_per_epoch, si)} for r in rows]}
    _write_json(payload, os.path.join(cfg.out_dir, "benchmark.json"))
    _write_text(table + "\n", os.path.join(cfg.out_dir, "benchmark.txt"))
    return rows, table


def cmd_synth(cfg: RunConfig) -> str:
    if not cfg.synth_preset:
        cfg = cfg.replace(synth_preset="medical")
    spec = cfg.synth_spec()
    ds = cfg.load_dataset()
    parent = os.path.dirname(os.path.abspath(cfg.out_dir))
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(dir=parent, prefix=".tmp-synth-")
    try:
        save_dataset(ds, tmp, seed=spec.seed)
        os.makedirs(cfg.out_dir, exist_ok=True)
        for name in os.listdir(tmp):
            os.replace(os.path.join(tmp, name), os.path.join(cfg.out_dir, name))
    finally:
        if os.path.isdir(tmp):
            for name in os.listdir(tmp):
                os.remove(os.path.join(tmp, name))
            os.rmdir(tmp)
    return os.path.join(cfg.out_dir, "manifest.txt")


# ---------------------------------------------------------------------------
# argument parsing


def _sub(sub, name, **kw):
    return sub.add_parser(name, allow_abbrev=False, usage=f"gapfuse {name} [options] [MANIFEST] [--section.key VALUE ...]",
                          **kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gapfuse", description="Modality-gap diagnostics and fusion training on "
                                                            "precomputed embeddings.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        # a bare MANIFEST argument and any --section.key flags are parsed separately
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (out.dir)")
        return sp

    sp = common(_sub(sub, "gap", help="gap report and PCA export"))
    sp.add_argument("--k", type=int, default=2)
    sp = common(_sub(sub, "pca", help="shared PCA projection of both modalities"))
    sp.add_argument("--k", type=int, default=2)
    sp = common(_sub(sub, "train", help="train one fusion model"))
    sp.add_argument("--lambda", dest="lambda_", help="shift coefficient (align.lambda_shift)")
    sp = common(_sub(sub, "sweep", help="best-epoch metrics over a lambda grid"))
    sp.add_argument("--lambda", dest="lambda_", help="grid as start:stop:step or a comma list, e.g. "
                                                     "--lambda=-1:1:0.1 (the default)")
    sp.add_argument("--retrain", dest="retrain", action="store_true", default=True,
                    help="train a fresh model per lambda (default)")
    sp.add_argument("--no-retrain", dest="retrain", action="store_false",
                    help="train once and re-align only the test rows per lambda")
    sp.add_argument("--workers", type=int, default=1)
    sp = common(_sub(sub, "benchmark", help="memory accounting and epoch timing"))
    sp.add_argument("--si", action="store_true", help="report 10^6-byte megabytes instead of MiB")
    sp.add_argument("--reference", action="store_true",
                    help="accounting for the reference dataset/extractor grid (no training)")
    common(_sub(sub, "synth", help="write a synthetic dataset and manifest"))
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args, extra)
        if args.command == "gap":
            payload = cmd_gap(cfg, args.k)
            print(f"gap_scalar {payload['gap_scalar']:.6f}  "
                  f"mean_cross_modal_cosine {payload['mean_cross_modal_cosine']:.6f}")
        elif args.command == "pca":
            res = cmd_pca(cfg, args.k)
            print("explained variance ratio", " ".join(f"{x:.4f}" for x in res.explained_variance_ratio))
        elif args.command == "train":
            rep = cmd_train(cfg)
            print(f"best epoch {rep.best_epoch}  accuracy {rep.accuracy_at_best_epoch:.4f}  f1 {rep.best_f1:.4f}")
        elif args.command == "sweep":
            points = cmd_sweep(cfg, _parse_lambdas(args.lambda_), args.retrain, args.workers)
            for pt in points:
                print(f"{pt.lambda_shift:+.2f}  acc {pt.best_accuracy:.4f}  f1 {pt.best_f1:.4f}")
        elif args.command == "benchmark":
            _, table = cmd_benchmark(cfg, args.reference, args.si)
            print(table)
        elif args.command == "synth":
            print(cmd_synth(cfg))
    except (GapfuseError, ValueError, OSError) as exc:
        print(f"gapfuse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
