"""Joint CoxVAE training with two Adam optimizers, checkpoints and evaluation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, FormatError, TrainingError
from .model import CoxVAE, LatentGaussian, SurvivalBatch, kl_divergence
from .network import AdamState
from .survstats import (
    breslow_baseline,
    censoring_km,
    concordance_index,
    default_ibs_grid,
    integrated_brier,
    kaplan_meier,
)

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"SVCK"
CKPT_VERSION = 1
FULL_BATCH_LIMIT = 512
HISTORY_HEADER = ["step", "total", "recon", "kl", "cox", "n_events", "val_cindex"]


@dataclass
class TrainConfig:
    tau: float = 0.2
    beta: float = 1.0
    lr_vae: float = 1e-4
    lr_cox: float = 1e-5
    batch_size: int = 16
    total_steps: int = 16000
    latent_dim: int = 8
    seed: int = 0
    eval_every: int = 500
    full_batch_cox: bool = False
    width: int = 128
    n_blocks: int = 4
    likelihood: str = "bernoulli"
    val_fraction: float = 0.2

    def validate(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}", "tau")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}", "beta")
        for name in ("lr_vae", "lr_cox"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", name)
        for name in ("batch_size", "total_steps", "latent_dim", "eval_every", "width"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive", name)
        if self.n_blocks < 0:
            raise ConfigError("n_blocks must be >= 0", "n_blocks")
        if self.likelihood not in ("bernoulli", "gaussian"):
            raise ConfigError(f"unknown likelihood {self.likelihood!r}", "likelihood")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}", "val_fraction")
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}", sorted(unknown)[0])
        return cls(**d)


@dataclass
class HistoryRow:
    step: int
    total: float
    recon: float
    kl: float
    cox: float
    n_events: int
    val_cindex: float | None = None


@dataclass
class Checkpoint:
    config: dict
    params: OrderedDict
    optimizers: dict
    step: int
    rng_state: bytes
    version: int = CKPT_VERSION

    @property
    def train_config(self):
        cfg = {k: v for k, v in self.config.items() if k != "n_pixels"}
        return TrainConfig.from_dict(cfg)

    @property
    def n_pixels(self):
        return int(self.config["n_pixels"])

    def build_model(self):
        model = build_model(self.train_config, self.n_pixels)
        for name, p in model.named_parameters().items():
            p.data[...] = self.params[name]
        return model

    @property
    def cox_weights(self):
        return self.params["cox.weight"][0].copy()


def build_model(cfg, n_pixels):
    return CoxVAE(n_pixels, cfg.latent_dim, cfg.width, cfg.n_blocks, seed=cfg.seed,
                  likelihood=cfg.likelihood)


# ---------------------------------------------------------------------------
# sampling state


class _BatchSampler:
    """Epoch-shuffled sampling without replacement; a short tail starts a new epoch."""

    def __init__(self, n, batch_size, rng):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self.order = None
        self.cursor = 0

    def next(self):
        if self.order is None or self.cursor + self.batch_size > self.n:
            self.order = self.rng.permutation(self.n)
            self.cursor = 0
        idx = self.order[self.cursor:self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return np.sort(idx)

    def state(self):
        return self.rng.bit_generator.state, self.order, self.cursor

    def state_bytes(self, state=None):
        bitgen, order, cursor = state or self.state()
        payload = {
            "bit_generator": bitgen,
            "order": None if order is None else order.tolist(),
            "cursor": cursor,
        }
        return json.dumps(payload, sort_keys=True).encode("utf-8")

    def restore(self, raw):
        state = json.loads(raw.decode("utf-8"))
        self.rng.bit_generator.state = state["bit_generator"]
        self.order = None if state["order"] is None else np.asarray(state["order"], dtype=np.int64)
        self.cursor = state["cursor"]


def _snapshot(model, opt_vae, opt_cox, cfg, n_pixels, step, rng_bytes):
    config = asdict(cfg)
    config["n_pixels"] = n_pixels
    params = OrderedDict((k, p.data.copy()) for k, p in model.named_parameters().items())
    optimizers = {"vae": _adam_to_dict(opt_vae), "cox": _adam_to_dict(opt_cox)}
    return Checkpoint(config, params, optimizers, step, rng_bytes)


def _adam_to_dict(opt):
    return {
        "t": opt.t,
        "m": OrderedDict((k, v.copy()) for k, v in opt.m.items()),
        "v": OrderedDict((k, v.copy()) for k, v in opt.v.items()),
    }


def _adam_from_dict(d, lr):
    opt = AdamState(lr)
    opt.t = int(d["t"])
    opt.m = OrderedDict((k, v.copy()) for k, v in d["m"].items())
    opt.v = OrderedDict((k, v.copy()) for k, v in d["v"].items())
    return opt


# ---------------------------------------------------------------------------
# training loop


def train(cfg, train_ds, val_ds=None, resume=None):
    """Train a CoxVAE; returns ``(checkpoint, history)``.

    With ``resume`` (a :class:`Checkpoint`) training continues from its
    step up to ``cfg.total_steps`` and only the new history rows are
    returned.
    """
    cfg.validate()
    n = len(train_ds)
    n_pixels = train_ds.n_pixels
    if cfg.full_batch_cox:
        if n > FULL_BATCH_LIMIT:
            raise ConfigError(f"full-batch mode supports at most {FULL_BATCH_LIMIT} samples, got {n}",
                              "full_batch_cox")
    elif cfg.batch_size > n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds training set size {n}", "batch_size")

    sampler = _BatchSampler(n, cfg.batch_size, np.random.default_rng([cfg.seed, 1]))
    if resume is None:
        model = build_model(cfg, n_pixels)
        opt_vae, opt_cox = AdamState(cfg.lr_vae), AdamState(cfg.lr_cox)
        start = 0
    else:
        if resume.n_pixels != n_pixels:
            raise ConfigError(f"checkpoint expects {resume.n_pixels} pixels, data has {n_pixels}", "n_pixels")
        model = resume.build_model()
        opt_vae = _adam_from_dict(resume.optimizers["vae"], cfg.lr_vae)
        opt_cox = _adam_from_dict(resume.optimizers["cox"], cfg.lr_cox)
        sampler.restore(resume.rng_state)
        start = resume.step

    vae_params = model.vae_parameters()
    cox_params = model.cox_parameters()
    all_params = list(vae_params.values()) + list(cox_params.values())
    history = []
    for step in range(start + 1, cfg.total_steps + 1):
        state_before = sampler.state()
        idx = np.arange(n) if cfg.full_batch_cox else sampler.next()
        batch = SurvivalBatch(train_ds.images[idx], train_ds.table.time[idx], train_ds.table.event[idx])
        eps = sampler.rng.standard_normal((len(idx), cfg.latent_dim))
        total, report = model.loss(batch, eps, cfg.tau, cfg.beta)
        if not math.isfinite(report.total):
            good = _snapshot(model, opt_vae, opt_cox, cfg, n_pixels, step - 1,
                             sampler.state_bytes(state_before))
            raise TrainingError(f"non-finite loss at step {step}", step=step, checkpoint=good)
        ad.zero_grad(all_params)
        ad.backward(total)
        try:
            opt_vae.step(vae_params)
            opt_cox.step(cox_params)
        except TrainingError as exc:
            good = _snapshot(model, opt_vae, opt_cox, cfg, n_pixels, step - 1,
                             sampler.state_bytes(state_before))
            raise TrainingError(f"{exc} at step {step}", step=step, checkpoint=good, param=exc.param) from exc

        row = HistoryRow(step, report.total, report.recon_nll, report.kl, report.cox_nll,
                         report.n_events_in_batch)
        if val_ds is not None and step % cfg.eval_every == 0:
            row.val_cindex = _val_cindex(model, val_ds)
            logger.info("step %d total %.4f val C-index %.4f", step, report.total, row.val_cindex)
        history.append(row)

    ckpt = _snapshot(model, opt_vae, opt_cox, cfg, n_pixels, max(start, cfg.total_steps),
                     sampler.state_bytes())
    return ckpt, history


def _val_cindex(model, ds):
    mu = model.encode(ds.images).mu
    r = model.risk(mu).data
    try:
        return concordance_index(ds.table, r)
    except ValueError:
        return float("nan")


# ---------------------------------------------------------------------------
# evaluation


def encode_mean(model, images):
    """Posterior means (no sampling) and matching log-variances."""
    lg = model.encode(images)
    return lg.mu.data.copy(), lg.logvar.data.copy()


def _check_bounds(cindex, ibs, kl, km, H0):
    if not 0.0 <= cindex <= 1.0:
        raise ContractError(f"C-index {cindex} outside [0, 1]")
    if not 0.0 <= ibs <= 1.0:
        raise ContractError(f"IBS {ibs} outside [0, 1]")
    if kl < 0:
        raise ContractError(f"KL divergence {kl} is negative")
    if np.any(np.diff(np.concatenate([[km.value_before_first], km.values])) > 0):
        raise ContractError("Kaplan-Meier estimate is not nonincreasing")
    if np.any(np.diff(np.concatenate([[H0.value_before_first], H0.values])) < 0):
        raise ContractError("Breslow estimate is not nondecreasing")


def evaluate(ckpt, ds, train_ds=None):
    """Model's own risk score on ``ds``: C-index and integrated Brier score.

    The Breslow baseline is fitted on ``train_ds`` (defaults to ``ds``).
    Encoding uses the posterior mean, so the result is deterministic.
    """
    model = ckpt.build_model() if isinstance(ckpt, Checkpoint) else ckpt
    train_ds = ds if train_ds is None else train_ds
    mu, logvar = encode_mean(model, ds.images)
    r = model.risk(mu).data
    cindex = concordance_index(ds.table, r)

    mu_train, _ = encode_mean(model, train_ds.images)
    r_train = model.risk(mu_train).data
    H0 = breslow_baseline(train_ds.table, r_train)
    grid = default_ibs_grid(ds.table)
    risk = np.exp(r)

    def predict(t):
        return np.exp(-H0(t) * risk)

    ibs = integrated_brier(grid, ds.table, predict, censoring_km(ds.table))
    kl = kl_divergence_value(mu, logvar)
    _check_bounds(cindex, ibs, kl, kaplan_meier(ds.table), H0)
    return {"cindex": cindex, "ibs": ibs, "n": len(ds), "n_events": int(ds.table.event.sum())}


def kl_divergence_value(mu, logvar):
    return kl_divergence(LatentGaussian(ad.Tensor(mu), ad.Tensor(logvar))).item()


# ---------------------------------------------------------------------------
# checkpoint file


def _pack_record(name, array):
    array = np.asarray(array, dtype="<f8")
    raw_name = name.encode("utf-8")
    out = struct.pack("<I", len(raw_name)) + raw_name + struct.pack("<I", array.ndim)
    out += struct.pack("<" + "I" * array.ndim, *array.shape)
    return out + array.tobytes()


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise FormatError("checkpoint truncated", offset=self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def record(self, expected_shapes=None):
        name = self.take(self.u32()).decode("utf-8")
        rank = self.u32()
        dims = tuple(struct.unpack("<" + "I" * rank, self.take(4 * rank)))
        if expected_shapes is not None:
            want = expected_shapes.get(name)
            if want is None:
                raise FormatError(f"unexpected parameter {name!r}", offset=self.pos)
            if dims != want:
                raise FormatError(f"parameter {name!r} has shape {dims}, architecture needs {want}",
                                  offset=self.pos)
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        return name, data


def checkpoint_bytes(ckpt):
    parts = [CKPT_MAGIC, struct.pack("<I", ckpt.version)]
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg]
    parts.append(struct.pack("<I", len(ckpt.params)))
    parts += [_pack_record(k, v) for k, v in ckpt.params.items()]
    opt_records = []
    for opt_name in ("vae", "cox"):
        st = ckpt.optimizers[opt_name]
        opt_records.append(_pack_record(f"{opt_name}.t", np.array(float(st["t"]))))
        for kind in ("m", "v"):
            opt_records += [_pack_record(f"{opt_name}.{kind}.{k}", v) for k, v in st[kind].items()]
    parts += [struct.pack("<I", len(opt_records))] + opt_records
    parts += [struct.pack("<Q", ckpt.step), struct.pack("<I", len(ckpt.rng_state)), ckpt.rng_state]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(ckpt, path):
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {raw[:4]!r})", offset=0)
    rd = _Reader(raw)
    rd.take(4)
    version = rd.u32()
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version} is incompatible with {CKPT_VERSION}",
                          offset=4)
    config = json.loads(rd.take(rd.u32()).decode("utf-8"))
    cfg = TrainConfig.from_dict({k: v for k, v in config.items() if k != "n_pixels"})
    reference = build_model(cfg, int(config["n_pixels"]))
    shapes = {k: p.shape for k, p in reference.named_parameters().items()}

    params = OrderedDict()
    for _ in range(rd.u32()):
        name, data = rd.record(shapes)
        params[name] = data
    missing = set(shapes) - set(params)
    if missing:
        raise FormatError(f"{path}: missing parameters {sorted(missing)}")

    optimizers = {"vae": {"t": 0, "m": OrderedDict(), "v": OrderedDict()},
                  "cox": {"t": 0, "m": OrderedDict(), "v": OrderedDict()}}
    for _ in range(rd.u32()):
        name, data = rd.record()
        opt_name, kind, *rest = name.split(".", 2)
        if opt_name not in optimizers or kind not in ("t", "m", "v"):
            raise FormatError(f"{path}: unknown optimizer record {name!r}", offset=rd.pos)
        if kind == "t":
            optimizers[opt_name]["t"] = int(data)
        else:
            pname = rest[0]
            if shapes.get(pname) != data.shape:
                raise FormatError(f"{path}: optimizer buffer for {pname!r} has shape {data.shape}",
                                  offset=rd.pos)
            optimizers[opt_name][kind][pname] = data
    step = rd.u64()
    rng_state = rd.take(rd.u32())
    body_end = rd.pos
    (crc,) = struct.unpack("<I", rd.take(4))
    if rd.pos != len(raw):
        raise FormatError(f"{path}: trailing bytes after checksum", offset=rd.pos)
    if zlib.crc32(raw[:body_end]) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: checksum mismatch", offset=body_end)
    return Checkpoint(config, params, optimizers, step, rng_state, version)


# ---------------------------------------------------------------------------
# history file


def _fmt(v):
    return "" if v is None else repr(float(v))


def history_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for row in history:
        w.writerow([row.step, _fmt(row.total), _fmt(row.recon), _fmt(row.kl), _fmt(row.cox),
                    row.n_events, _fmt(row.val_cindex)])
    return buf.getvalue()


def write_history(history, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(history_csv(history))


def read_history(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != HISTORY_HEADER:
        raise FormatError(f"{path}: unexpected header {rows[0]}")
    out = []
    for r in rows[1:]:
        out.append(HistoryRow(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]),
                              int(r[5]), float(r[6]) if r[6] else None))
    return out
