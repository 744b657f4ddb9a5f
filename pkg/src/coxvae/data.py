"""Synthetic survival images, IDX ingestion, dataset files and splits."""

from __future__ import annotations

import csv
import io
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, FormatError
from .survstats import SurvivalTable

SVI_MAGIC = b"SVIM"
SVI_VERSION = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SURVIVAL_HEADER = ["id", "time_days", "event", "true_loghazard"]


@dataclass
class SyntheticConfig:
    image_side: int = 16
    n_samples: int = 2000
    blob_count_range: tuple = (0, 4)
    blob_radius_range: tuple = (1.0, 3.0)
    hazard_slope: float = 3.0
    baseline_rate: float = 1.0 / 365.0
    censor_rate_target: float = 0.17
    seed: int = 0

    def validate(self):
        if self.image_side < 8:
            raise ConfigError(f"image_side must be >= 8, got {self.image_side}", "image_side")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive", "n_samples")
        lo, hi = self.blob_count_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad blob_count_range {self.blob_count_range}", "blob_count_range")
        rlo, rhi = self.blob_radius_range
        if rlo <= 0 or rhi < rlo:
            raise ConfigError(f"bad blob_radius_range {self.blob_radius_range}", "blob_radius_range")
        if not self.hazard_slope > 0:
            raise ConfigError("hazard_slope must be positive", "hazard_slope")
        if not self.baseline_rate > 0:
            raise ConfigError("baseline_rate must be positive", "baseline_rate")
        if not 0.0 < self.censor_rate_target < 1.0:
            raise ConfigError(
                f"censor_rate_target must lie in (0, 1), got {self.censor_rate_target}",
                "censor_rate_target",
            )
        return self


@dataclass
class Dataset:
    images: np.ndarray
    table: SurvivalTable
    true_loghazard: np.ndarray | None = None
    labels: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 2 or len(self.images) != len(self.table):
            raise DimensionError(f"{self.images.shape} images for {len(self.table)} survival records")
        if np.any(self.images < 0) or np.any(self.images > 1):
            raise DomainError("pixel values must lie in [0, 1]")
        if self.true_loghazard is not None:
            self.true_loghazard = np.asarray(self.true_loghazard, dtype=np.float64)
            if len(self.true_loghazard) != len(self.table):
                raise DimensionError("true_loghazard length differs from table")

    def __len__(self):
        return len(self.table)

    @property
    def n_pixels(self):
        return self.images.shape[1]

    @property
    def side(self):
        return int(round(math.sqrt(self.n_pixels)))

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(
            self.images[index],
            self.table.subset(index),
            None if self.true_loghazard is None else self.true_loghazard[index],
            None if self.labels is None else self.labels[index],
        )


# ---------------------------------------------------------------------------
# survival times


def calibrate_censoring(event_draws, censor_draws, target, tol=0.03, iters=20):
    """Bisect the censoring rate so the censored fraction hits ``target``.

    ``event_draws`` are the latent event times; ``censor_draws`` are
    standard exponential variates, so censoring time is ``censor_draws / rate``.
    Returns the calibrated rate.
    """
    # subject i is censored iff rate > censor_draws[i] / event_draws[i]
    thresholds = censor_draws / event_draws
    lo, hi = math.log(thresholds.min()) - 1.0, math.log(thresholds.max()) + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        frac = np.mean(thresholds < math.exp(mid))
        if frac < target:
            lo = mid
        else:
            hi = mid
    rate = math.exp(0.5 * (lo + hi))
    realized = float(np.mean(thresholds < rate))
    if abs(realized - target) > tol:
        raise ConfigError(
            f"censoring target {target:.3f} unattainable (realized {realized:.3f})",
            "censor_rate_target",
        )
    return rate


def draw_survival(loghazard, baseline_rate, censor_target, rng):
    """Exponential proportional-hazards event times with calibrated independent censoring.

    Returns ``(time, event, event_time, censor_time)``.
    """
    loghazard = np.asarray(loghazard, dtype=np.float64)
    u = rng.uniform(size=len(loghazard))
    event_time = -np.log1p(-u) / (baseline_rate * np.exp(loghazard))
    censor_unit = rng.standard_exponential(size=len(loghazard))
    rate = calibrate_censoring(event_time, censor_unit, censor_target)
    censor_time = censor_unit / rate
    event = (event_time <= censor_time).astype(np.int64)
    time = np.minimum(event_time, censor_time)
    return time, event, event_time, censor_time


# ---------------------------------------------------------------------------
# blob images


def _render_blob_image(side, rng, cfg):
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    c = side / 2.0
    cy, cx = c + rng.uniform(-1.0, 1.0, size=2)
    ay, ax = rng.uniform(0.18, 0.30, size=2) * side
    angle = rng.uniform(0.0, math.pi)
    cos, sin = math.cos(angle), math.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = (cos * dx + sin * dy) / ax
    v = (-sin * dx + cos * dy) / ay
    rho = np.sqrt(u * u + v * v)
    # coverage ramps over one pixel across the boundary
    organ = np.clip((1.0 - rho) * min(ax, ay) + 0.5, 0.0, 1.0)

    k = rng.integers(cfg.blob_count_range[0], cfg.blob_count_range[1] + 1)
    tumor = np.zeros((side, side))
    load = 0.0
    for _ in range(k):
        radius = rng.uniform(*cfg.blob_radius_range)
        # centre uniform inside the inner 70% of the organ ellipse
        s = 0.7 * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        bu, bv = s * math.cos(theta) * ax, s * math.sin(theta) * ay
        bx = cx + cos * bu - sin * bv
        by = cy + sin * bu + cos * bv
        dist = np.sqrt((xx - bx) ** 2 + (yy - by) ** 2)
        disk = np.clip(radius - dist + 0.5, 0.0, 1.0) * organ
        load += disk.sum()
        tumor = np.maximum(tumor, disk)

    image = 0.5 * organ + 0.4 * tumor + rng.uniform(0.0, 0.05, size=(side, side))
    area_fraction = load / organ.sum()
    return np.clip(image, 0.0, 1.0), area_fraction


def generate_blob_dataset(cfg=None):
    """Organ-with-tumours images whose log-hazard is proportional to tumour load."""
    cfg = (cfg or SyntheticConfig()).validate()
    rng = np.random.default_rng(cfg.seed)
    side = cfg.image_side
    images = np.empty((cfg.n_samples, side * side))
    loghazard = np.empty(cfg.n_samples)
    for i in range(cfg.n_samples):
        img, frac = _render_blob_image(side, rng, cfg)
        images[i] = img.ravel()
        loghazard[i] = cfg.hazard_slope * frac
    # images are stored as float32 on disk; keep the in-memory copy identical
    images = images.astype(np.float32).astype(np.float64)
    time, event, _, _ = draw_survival(loghazard, cfg.baseline_rate, cfg.censor_rate_target, rng)
    return Dataset(images, SurvivalTable(time, event), loghazard)


def assign_digit_hazards(labels, baseline_rate=1.0 / 365.0, spread=1.0,
                         censor_target=0.17, seed=0):
    """Survival times for digit labels: log-hazard ``spread * (label - 4.5) / 4.5``.

    Returns ``(table, loghazard)``.
    """
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise DomainError("digit labels must lie in 0..9")
    loghazard = spread * (labels.astype(np.float64) - 4.5) / 4.5
    rng = np.random.default_rng(seed)
    time, event, _, _ = draw_survival(loghazard, baseline_rate, censor_target, rng)
    return SurvivalTable(time, event), loghazard


def digit_dataset(image_path, label_path, spread=1.0, baseline_rate=1.0 / 365.0,
                  censor_target=0.17, seed=0, limit=None):
    """surv-digits dataset from a pair of IDX files."""
    images = load_idx(image_path)
    labels = load_idx(label_path)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    if len(images) != len(labels):
        raise DimensionError(f"{len(images)} images but {len(labels)} labels")
    table, h = assign_digit_hazards(labels, baseline_rate, spread, censor_target, seed)
    flat = images.reshape(len(images), -1)
    return Dataset(flat, table, h, labels)


# ---------------------------------------------------------------------------
# IDX


def write_idx(path, array, magic=None):
    """Write a uint8 array in big-endian IDX format."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise FormatError(f"IDX payload must be uint8, got {array.dtype}")
    if magic is None:
        magic = IDX_LABELS_MAGIC if array.ndim == 1 else IDX_IMAGES_MAGIC
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    Path(path).write_bytes(header + array.tobytes())


def read_idx_raw(path):
    """Parse an IDX file into ``(magic, dims, uint8 array)``."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError("file too short for IDX magic", offset=len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise FormatError(f"bad IDX magic 0x{magic:08x}", offset=0)
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError("truncated IDX header", offset=len(raw))
    dims = struct.unpack_from(">" + "I" * ndim, raw, 4)
    expected = int(np.prod(dims))
    payload = raw[header_len:]
    if len(payload) != expected:
        raise FormatError(
            f"IDX payload holds {len(payload)} bytes, dims {dims} need {expected}",
            offset=header_len + min(len(payload), expected),
        )
    return magic, dims, np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(path):
    """Images scaled to [0, 1] as float64; labels as int64."""
    magic, _, arr = read_idx_raw(path)
    if magic == IDX_IMAGES_MAGIC:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.int64)


# ---------------------------------------------------------------------------
# dataset files


def _write_svi(path, images, side):
    payload = np.ascontiguousarray(images, dtype="<f4").tobytes()
    header = SVI_MAGIC + struct.pack("<III", SVI_VERSION, len(images), side)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(header + payload + struct.pack("<I", crc))


def _read_svi(path):
    raw = Path(path).read_bytes()
    if raw[:4] != SVI_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}", offset=0)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    version, n, side = struct.unpack_from("<III", raw, 4)
    if version != SVI_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    size = 4 * n * side * side
    if len(raw) != 16 + size + 4:
        raise FormatError(f"{path}: expected {16 + size + 4} bytes, found {len(raw)}", offset=len(raw))
    payload = raw[16:16 + size]
    (crc,) = struct.unpack_from("<I", raw, 16 + size)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: checksum mismatch", offset=16 + size)
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, side * side)


def write_dataset(ds, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_svi(directory / "images.svi", ds.images, ds.side)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    has_truth = ds.true_loghazard is not None
    writer.writerow(SURVIVAL_HEADER if has_truth else SURVIVAL_HEADER[:3])
    for i in range(len(ds)):
        row = [i, repr(float(ds.table.time[i])), int(ds.table.event[i])]
        if has_truth:
            row.append(repr(float(ds.true_loghazard[i])))
        writer.writerow(row)
    with open(directory / "survival.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_dataset(directory):
    directory = Path(directory)
    images = _read_svi(directory / "images.svi")
    with open(directory / "survival.csv", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] not in (SURVIVAL_HEADER, SURVIVAL_HEADER[:3]):
        raise FormatError(f"survival.csv: unexpected header {rows[0] if rows else None}")
    has_truth = len(rows[0]) == 4
    body = rows[1:]
    try:
        time = np.array([float(r[1]) for r in body])
        event = np.array([int(r[2]) for r in body])
        truth = np.array([float(r[3]) for r in body]) if has_truth else None
    except (ValueError, IndexError) as exc:
        raise FormatError(f"survival.csv: malformed row ({exc})") from exc
    try:
        table = SurvivalTable(time, event)
    except (DomainError, DimensionError) as exc:
        raise FormatError(f"survival.csv: invalid record ({exc})") from exc
    return Dataset(images, table, truth)


def split(ds, val_fraction, seed):
    """Deterministic shuffled split into ``(train, val)``."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {val_fraction}", "val_fraction")
    n = len(ds)
    n_val = int(round(n * val_fraction))
    if n_val == 0 or n_val == n:
        raise ConfigError(f"val_fraction {val_fraction} leaves an empty side for n={n}", "val_fraction")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))
