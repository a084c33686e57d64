"""Trainable linear projection over frozen base embeddings.

The head restructures the embedding geometry without touching the encoder:
f(x) = W @ x, no bias (a bias would break the exact additive attribution
decomposition). Checkpoint format: magic "CERW", version u32, d_in u32,
d_out u32, metric u8, trained_steps u64, then W row-major little-endian
float32.

The fingerprint hashes the functional content (dims, metric, float32 W
bytes) so a head loaded from disk fingerprints identically to the one that
was saved; trained_steps is bookkeeping and excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import binio
from .errors import ConfigError, PersistenceError
from .hashing import hash64

HEAD_MAGIC = b"CERW"
HEAD_VERSION = 1

METRIC_CODES = {"cosine": 0, "euclidean": 1}
CODE_METRICS = {v: k for k, v in METRIC_CODES.items()}


@dataclass(frozen=True)
class ProjectionHead:
    d_in: int
    d_out: int
    W: np.ndarray  # (d_out, d_in) float64
    metric: str
    trained_steps: int = 0

    def copy(self) -> "ProjectionHead":
        return replace(self, W=self.W.copy())


def init_head(d_in: int, d_out: int, metric: str, seed: int = 0) -> ProjectionHead:
    """Identity start when square (training then means "no change yet"),
    else seeded Gaussian entries scaled by 1/sqrt(d_in)."""
    if d_in < 2 or d_out < 2:
        raise ConfigError(f"projection dims must be >= 2, got {d_out}x{d_in}")
    if metric not in METRIC_CODES:
        raise ConfigError(f"unknown metric {metric!r}")
    if d_in == d_out:
        W = np.eye(d_out, d_in, dtype=np.float64)
    else:
        rng = np.random.default_rng(seed)
        W = rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)
    return ProjectionHead(d_in=d_in, d_out=d_out, W=W, metric=metric)


def head_fingerprint(head: ProjectionHead) -> int:
    payload = (
        binio.pack_u32(head.d_in)
        + binio.pack_u32(head.d_out)
        + binio.pack_u8(METRIC_CODES[head.metric])
        + np.ascontiguousarray(head.W, dtype="<f4").tobytes()
    )
    return hash64(payload, salt=b"head")


def save_head(head: ProjectionHead, path: str | Path) -> None:
    if not np.all(np.isfinite(head.W)):
        raise PersistenceError("refusing to save head with non-finite weights")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = (
        HEAD_MAGIC
        + binio.pack_u32(HEAD_VERSION)
        + binio.pack_u32(head.d_in)
        + binio.pack_u32(head.d_out)
        + binio.pack_u8(METRIC_CODES[head.metric])
        + binio.pack_u64(head.trained_steps)
        + np.ascontiguousarray(head.W, dtype="<f4").tobytes()
    )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def load_head(path: str | Path) -> ProjectionHead:
    path = Path(path)
    if not path.exists():
        raise PersistenceError(f"head checkpoint not found: {path}")
    with path.open("rb") as fh:
        magic = binio.read_exact(fh, 4, "magic")
        if magic != HEAD_MAGIC:
            raise PersistenceError(f"not a head checkpoint (bad magic {magic!r}): {path}")
        version = binio.read_u32(fh, "version")
        if version != HEAD_VERSION:
            raise PersistenceError(f"unsupported head checkpoint version {version}")
        d_in = binio.read_u32(fh, "d_in")
        d_out = binio.read_u32(fh, "d_out")
        metric_code = binio.read_u8(fh, "metric")
        if metric_code not in CODE_METRICS:
            raise PersistenceError(f"invalid metric byte {metric_code}")
        trained_steps = binio.read_u64(fh, "trained_steps")
        raw = binio.read_exact(fh, d_out * d_in * 4, "weight matrix")
        if fh.read(1):
            raise PersistenceError(f"trailing bytes after weight matrix in {path}")
    W = np.frombuffer(raw, dtype="<f4").reshape(d_out, d_in).astype(np.float64)
    if not np.all(np.isfinite(W)):
        raise PersistenceError(f"head checkpoint holds non-finite weights: {path}")
    return ProjectionHead(
        d_in=d_in,
        d_out=d_out,
        W=W,
        metric=CODE_METRICS[metric_code],
        trained_steps=trained_steps,
    )
