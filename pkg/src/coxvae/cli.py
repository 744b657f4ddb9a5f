"""Command-line entry point: ``coxvae <gen-data|train|eval|embed|traverse|tau-sweep>``.

Exit codes: 0 ok, 2 configuration error, 3 I/O or format error,
4 numerical abort during training, 5 undefined metric.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .analysis import encode_dataset, export_embedding, pc1_time_correlation, pca, write_traversals
from .data import SyntheticConfig, generate_blob_dataset, read_dataset, split, write_dataset
from .errors import ConfigError, FormatError, TrainingError, UndefinedMetricError
from .training import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_METRIC = 0, 2, 3, 4, 5
LOCK_NAME = "config.lock.json"


@dataclass
class RunConfig:
    """Flat union of the synthetic-data and training settings (one shared seed)."""

    image_side: int = 16
    n_samples: int = 2000
    blob_count_range: tuple = (0, 4)
    blob_radius_range: tuple = (1.0, 3.0)
    hazard_slope: float = 3.0
    baseline_rate: float = 1.0 / 365.0
    censor_rate_target: float = 0.17
    tau: float = 0.2
    beta: float = 1.0
    lr_vae: float = 1e-4
    lr_cox: float = 1e-5
    batch_size: int = 16
    total_steps: int = 16000
    latent_dim: int = 8
    eval_every: int = 500
    full_batch_cox: bool = False
    width: int = 128
    n_blocks: int = 4
    likelihood: str = "bernoulli"
    val_fraction: float = 0.2
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}", key)
        d = dict(d)
        for key in ("blob_count_range", "blob_radius_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def synthetic(self):
        keys = {f.name for f in fields(SyntheticConfig)}
        return SyntheticConfig(**{k: v for k, v in asdict(self).items() if k in keys})

    def training(self):
        keys = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in keys})

    def validate(self):
        self.synthetic().validate()
        self.training().validate()
        return self

    def to_json(self):
        d = asdict(self)
        for key in ("blob_count_range", "blob_radius_range"):
            d[key] = list(d[key])
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def load_run_config(path=None, seed=None, fallback_dir=None):
    """Read a JSON config (or the lock file in ``fallback_dir``), then apply ``--seed``."""
    if path is None and fallback_dir is not None and (Path(fallback_dir) / LOCK_NAME).exists():
        path = Path(fallback_dir) / LOCK_NAME
    if path is None:
        cfg = RunConfig()
    else:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = RunConfig.from_dict(raw)
    if seed is not None:
        cfg.seed = seed
    try:
        return cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"config value has the wrong type ({exc})") from exc


def _write_lock(cfg, out_dir):
    (Path(out_dir) / LOCK_NAME).write_text(cfg.to_json(), encoding="utf-8")


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    cfg = load_run_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_blob_dataset(cfg.synthetic())
    write_dataset(ds, out)
    _write_lock(cfg, out)
    print(f"wrote {len(ds)} records to {out} (censored fraction {1 - ds.table.event.mean():.3f})")
    return EXIT_OK


def _train_one(cfg, train_ds, val_ds, out):
    out.mkdir(parents=True, exist_ok=True)
    _write_lock(cfg, out)
    try:
        ckpt, history = train(cfg.training(), train_ds, val_ds)
    except TrainingError as exc:
        if exc.checkpoint is not None:
            save_checkpoint(exc.checkpoint, out / "model.svck")
        raise
    save_checkpoint(ckpt, out / "model.svck")
    write_history(history, out / "history.csv")
    metrics = evaluate(ckpt, val_ds, train_ds)
    metrics["step"] = ckpt.step
    _write_json(metrics, out / "metrics.json")
    return ckpt, history, metrics


def cmd_train(args):
    cfg = load_run_config(args.config, args.seed, fallback_dir=args.data)
    ds = read_dataset(args.data)
    train_ds, val_ds = split(ds, cfg.val_fraction, cfg.seed)
    _, _, metrics = _train_one(cfg, train_ds, val_ds, Path(args.out))
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    tcfg = ckpt.train_config
    ds = read_dataset(args.data)
    train_ds, val_ds = split(ds, tcfg.val_fraction, tcfg.seed)
    metrics = evaluate(ckpt, val_ds, train_ds)
    for key in sorted(metrics):
        print(f"{key}={metrics[key]}", file=sys.stderr)
    print(json.dumps(metrics, sort_keys=True))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    _write_json(metrics, out / "eval.json")
    return EXIT_OK


def cmd_embed(args):
    ckpt = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.data)
    emb = encode_dataset(ckpt, ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_embedding(emb, pca(emb.mu, 2), out / "embedding.csv")
    print(f"wrote {len(ds)} embedded records to {out / 'embedding.csv'}")
    return EXIT_OK


def cmd_traverse(args):
    ckpt = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    travs = write_traversals(ckpt, out, args.lo, args.hi, args.steps)
    for t in travs:
        print(f"dim {t.dim}: weight {t.weight:+.3f}, hazard ratio {t.hazard_ratio:.4f} ({t.annotation})")
    return EXIT_OK


def cmd_tau_sweep(args):
    cfg = load_run_config(args.config, args.seed, fallback_dir=args.data)
    taus = [float(v) for v in args.taus.split(",")]
    ds = read_dataset(args.data)
    train_ds, val_ds = split(ds, cfg.val_fraction, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for tau in taus:
        run_cfg = RunConfig.from_dict({**asdict(cfg), "tau": tau}).validate()
        run_dir = out / f"tau_{tau:g}"
        ckpt, _, metrics = _train_one(run_cfg, train_ds, val_ds, run_dir)
        emb = encode_dataset(ckpt, val_ds)
        proj = pca(emb.mu, 2)
        export_embedding(emb, proj, run_dir / "embedding.csv")
        rho = pc1_time_correlation(emb, proj)
        rows.append((tau, rho, metrics["cindex"]))
        print(f"tau={tau:g}: |spearman(PC1, time)|={rho:.4f} val C-index={metrics['cindex']:.4f}")
    with open(out / "tau_report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "abs_spearman_pc1_time", "val_cindex"])
        for tau, rho, c in rows:
            w.writerow([repr(tau), repr(rho), repr(c)])
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the configured seed")

    parser = argparse.ArgumentParser(prog="coxvae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    p.set_defaults(func=cmd_gen_data, out_required=True)

    p = sub.add_parser("train", parents=[common], help="train a CoxVAE")
    p.add_argument("--data", required=True, help="dataset directory")
    p.set_defaults(func=cmd_train, out_required=True)

    p = sub.add_parser("eval", parents=[common], help="C-index and IBS on the validation split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval, out_required=False)

    p = sub.add_parser("embed", parents=[common], help="export the PCA embedding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_embed, out_required=True)

    p = sub.add_parser("traverse", parents=[common], help="decode latent traversals to PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="unused; accepted for symmetry with embed")
    p.add_argument("--lo", type=float, default=-4.0)
    p.add_argument("--hi", type=float, default=4.0)
    p.add_argument("--steps", type=int, default=9)
    p.set_defaults(func=cmd_traverse, out_required=True)

    p = sub.add_parser("tau-sweep", parents=[common], help="train one model per tau")
    p.add_argument("--data", required=True)
    p.add_argument("--taus", default="0.01,0.5,0.99")
    p.set_defaults(func=cmd_tau_sweep, out_required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out_required and not args.out:
        print(f"error: {args.command} requires --out", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        field = f" [field: {exc.field}]" if exc.field else ""
        print(f"config error{field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training aborted at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UndefinedMetricError as exc:
        print(f"undefined metric: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
