"""Exemplar-free pseudo-feature replay.

At the end of a task each new class gets a full-covariance Gaussian
fitted over its genuine training features. Later tasks draw pseudo
features from those frozen distributions instead of storing samples.
Covariances are shrunk by shrink*I before the Cholesky factorization so
sampling works even when a class has fewer samples than dimensions.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import read_embeddings, write_embeddings
from .errors import DataError, IntegrityError, ParseError

DEFAULT_SHRINK = 1e-4


@dataclass
class ClassStats:
    class_id: int
    mu: np.ndarray  # (D,)
    sigma: np.ndarray  # (D, D)
    chol: np.ndarray  # lower-triangular factor of sigma + shrink*I
    shrink: float
    sample_count: int


def _snap_f32(arr):
    # Stats persist as float32; snapping at fit time makes save/load lossless.
    return arr.astype(np.float32).astype(np.float64)


def fit_class(features, class_id, shrink=DEFAULT_SHRINK):
    """Fit mean and unbiased covariance; a single sample yields sigma = 0."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise DataError(f"fit_class: need a (n>=1, D) matrix, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise DataError(f"fit_class: non-finite feature values for class {class_id}")
    if shrink <= 0:
        raise DataError(f"fit_class: shrink must be > 0, got {shrink}")
    n, dim = features.shape
    mu = features.mean(axis=0)
    if n == 1:
        sigma = np.zeros((dim, dim))
    else:
        centered = features - mu
        sigma = centered.T @ centered / (n - 1)
        sigma = (sigma + sigma.T) / 2.0
    mu = _snap_f32(mu)
    sigma = _snap_f32(sigma)
    chol = np.linalg.cholesky(sigma + shrink * np.eye(dim))
    return ClassStats(int(class_id), mu, sigma, chol, float(shrink), n)


def sample(stats, m, rng):
    """Draw m pseudo-features: mu + chol @ eps, eps ~ N(0, I)."""
    if m < 1:
        raise DataError(f"sample: m must be >= 1, got {m}")
    eps = rng.standard_normal((m, stats.mu.shape[0]))
    return stats.mu + eps @ stats.chol.T


def save_stats(stats_list, json_path):
    """Write a stats collection: JSON manifest plus a CEMB of mu/sigma rows."""
    json_path = Path(json_path)
    stats_list = sorted(stats_list, key=lambda s: s.class_id)
    ids = [s.class_id for s in stats_list]
    if len(set(ids)) != len(ids):
        raise IntegrityError("duplicate class_id in stats collection")
    if not stats_list:
        raise DataError("cannot save an empty stats collection")
    dim = stats_list[0].mu.shape[0]
    rows = []
    for s in stats_list:
        rows.append(s.mu[None, :])
        rows.append(s.sigma)
    cemb_name = json_path.stem + ".cemb"
    write_embeddings(json_path.parent / cemb_name, np.concatenate(rows))
    manifest = {
        "version": 1,
        "dim": dim,
        "shrink": stats_list[0].shrink,
        "class_ids": ids,
        "sample_counts": [s.sample_count for s in stats_list],
        "embeddings_file": cemb_name,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_stats(json_path):
    """Read a stats collection; Cholesky factors are recomputed."""
    json_path = Path(json_path)
    with open(json_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{json_path}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    for key in ("version", "dim", "shrink", "class_ids", "sample_counts", "embeddings_file"):
        if key not in manifest:
            raise ParseError(f"{json_path}: missing field {key!r}")
    ids = manifest["class_ids"]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise IntegrityError(f"{json_path}: duplicate class_id {dupes}")
    dim = int(manifest["dim"])
    shrink = float(manifest["shrink"])
    rows = read_embeddings(json_path.parent / manifest["embeddings_file"])
    expected = len(ids) * (dim + 1)
    if rows.shape != (expected, dim):
        raise IntegrityError(
            f"{json_path}: stats matrix shape {rows.shape}, expected ({expected}, {dim})"
        )
    out = {}
    for i, (cid, count) in enumerate(zip(ids, manifest["sample_counts"])):
        block = rows[i * (dim + 1) : (i + 1) * (dim + 1)]
        mu = block[0].copy()
        sigma = block[1:].copy()
        chol = np.linalg.cholesky(sigma + shrink * np.eye(dim))
        out[int(cid)] = ClassStats(int(cid), mu, sigma, chol, shrink, int(count))
    return out
