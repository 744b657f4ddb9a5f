"""Latent-space analysis: PCA, latent traversals, rank correlation, exports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, UndefinedMetricError
from .model import hazard_ratio
from .autodiff import _sigmoid
from .survstats import SurvivalTable
from .training import Checkpoint, encode_mean


@dataclass
class Embedding:
    mu: np.ndarray
    table: SurvivalTable
    cox_weights: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if self.mu.ndim != 2 or len(self.mu) != len(self.table):
            raise DimensionError(f"embedding {self.mu.shape} does not match {len(self.table)} records")
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("embedding contains non-finite entries")


@dataclass
class PcaResult:
    components: np.ndarray  # [k x d], orthonormal rows
    eigenvalues: np.ndarray  # [k], descending
    mean: np.ndarray  # [d]

    def transform(self, points):
        return (np.asarray(points, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, scores):
        return np.asarray(scores) @ self.components + self.mean


def _model(ckpt):
    return ckpt.build_model() if isinstance(ckpt, Checkpoint) else ckpt


def encode_dataset(ckpt, ds):
    """Posterior means of every sample together with the Cox head weights."""
    model = _model(ckpt)
    if ds.n_pixels != model.n_pixels:
        raise DimensionError(f"model expects {model.n_pixels} pixels, dataset has {ds.n_pixels}")
    mu, _ = encode_mean(model, ds.images)
    return Embedding(mu, ds.table, model.cox_weights)


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors in columns,
    unsorted.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    v = np.eye(n)
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def pca(points, k=2):
    """Principal components of ``points`` [n x d] via Jacobi on the covariance.

    Each component is signed so that its largest-magnitude loading is positive.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionError(f"expected an [n x d] matrix, got {points.shape}")
    n, d = points.shape
    if n < 2:
        raise ConfigError("PCA needs at least two points", "n")
    if not 1 <= k <= d:
        raise ConfigError(f"k must lie in 1..{d}, got {k}", "k")
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / (n - 1)
    values, vectors = jacobi_eigh(cov)
    order = np.argsort(-values, kind="stable")[:k]
    comps = vectors[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaResult(comps, np.maximum(values[order], 0.0), mean)


def _midranks(x):
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b):
    """Spearman rank correlation (Pearson correlation of midranks)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"spearman needs equal-length vectors, got {a.shape} and {b.shape}")
    if len(a) < 3:
        raise UndefinedMetricError("spearman needs at least three observations")
    ra, rb = _midranks(a), _midranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if denom == 0:
        raise UndefinedMetricError("spearman undefined: ranks have zero variance")
    return float(np.clip(np.dot(ra, rb) / denom, -1.0, 1.0))


def pc1_time_correlation(emb, pca_result=None):
    """|spearman(PC1, time)| over uncensored subjects."""
    pca_result = pca_result or pca(emb.mu, 2)
    pc1 = pca_result.transform(emb.mu)[:, 0]
    died = emb.table.event == 1
    return abs(spearman(pc1[died], emb.table.time[died]))


@dataclass
class Traversal:
    dim: int
    values: np.ndarray  # [steps]
    images: np.ndarray  # [steps x P] in (0, 1)
    weight: float
    hazard_ratio: float
    percent_change: float

    @property
    def annotation(self):
        return f"{self.percent_change:+.1f}%"


def latent_traversal(ckpt, dim, lo=-4.0, hi=4.0, steps=9):
    """Decode ``value * e_dim`` over an even grid; the base latent is the zero vector."""
    model = _model(ckpt)
    d = model.latent_dim
    if not 0 <= dim < d:
        raise ConfigError(f"dim must lie in 0..{d - 1}, got {dim}", "dim")
    if steps < 1:
        raise ConfigError("steps must be positive", "steps")
    values = np.linspace(lo, hi, steps)
    z = np.zeros((steps, d))
    z[:, dim] = values
    images = _sigmoid(model.decode(z).data)
    w = float(model.cox_weights[dim])
    ratio, pct = hazard_ratio(w)
    return Traversal(dim, values, images, w, ratio, pct)


# ---------------------------------------------------------------------------
# file outputs


def export_embedding(emb, pca_result, path):
    scores = pca_result.transform(emb.mu)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "pc1", "pc2", "time_days", "event"])
        for i in range(len(emb.table)):
            pc2 = scores[i, 1] if scores.shape[1] > 1 else 0.0
            w.writerow([i, repr(float(scores[i, 0])), repr(float(pc2)),
                        repr(float(emb.table.time[i])), int(emb.table.event[i])])


def read_embedding_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    return rows[0], body


def write_pgm(path, pixels):
    """8-bit binary PGM (P5) from a 2-D array of values in [0, 1]."""
    pixels = np.asarray(pixels, dtype=np.float64)
    data = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


def traversal_strip(trav, side, gap=1):
    """Images of one traversal laid out left to right with a white gap."""
    tiles = [img.reshape(side, side) for img in trav.images]
    width = len(tiles) * side + (len(tiles) - 1) * gap
    strip = np.ones((side, width))
    for j, tile in enumerate(tiles):
        strip[:, j * (side + gap):j * (side + gap) + side] = tile
    return strip


def write_traversals(ckpt, out_dir, lo=-4.0, hi=4.0, steps=9):
    """One PGM strip per latent dimension, a combined grid and an index CSV."""
    model = _model(ckpt)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    side = int(round(math.sqrt(model.n_pixels)))
    travs = [latent_traversal(model, i, lo, hi, steps) for i in range(model.latent_dim)]
    strips = []
    for t in travs:
        strip = traversal_strip(t, side)
        write_pgm(out_dir / f"traverse_dim{t.dim}_w{t.weight:+.3f}.pgm", strip)
        strips.append(strip)
    gap_row = np.ones((1, strips[0].shape[1]))
    grid = np.vstack([s if i == 0 else np.vstack([gap_row, s]) for i, s in enumerate(strips)])
    write_pgm(out_dir / "traversal_grid.pgm", grid)
    with open(out_dir / "traversal_index.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dim", "weight", "hazard_ratio", "percent_change"])
        for t in travs:
            w.writerow([t.dim, f"{t.weight:.6f}", f"{t.hazard_ratio:.6f}", f"{t.percent_change:.1f}"])
    return travs
