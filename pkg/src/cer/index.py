"""Exact vector index: brute-force top-K over projected chunk embeddings.

No approximate structures: exactness keeps ranking quality auditable against
a naive full-sort. Under the cosine metric stored vectors are pre-normalized
at build time so query-time similarity is a plain dot product; scores are
computed per entry in float64 from the float32 stored rows.

Index file: magic "CERI", version u32, metric u8, dim u32, count u64,
head_fingerprint u64, CRC32(payload) u32; payload is per entry a
length-prefixed UTF-8 chunk_id followed by the float32 little-endian vector.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import binio
from .corpus import Chunk
from .embed import Embedder, NORM_EPS, pool_mean, project
from .errors import (
    ConfigError,
    CorpusFormatError,
    DegenerateVectorError,
    IndexMismatchError,
    PersistenceError,
)
from .projection import CODE_METRICS, METRIC_CODES, ProjectionHead, head_fingerprint

INDEX_MAGIC = b"CERI"
INDEX_VERSION = 1


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class VectorIndex:
    dim: int
    metric: str
    ids: tuple[str, ...]
    vectors: np.ndarray  # (n, dim) float32, unit rows under cosine
    head_fingerprint: int

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def entries(self) -> list[tuple[str, np.ndarray]]:
        return [(cid, self.vectors[i]) for i, cid in enumerate(self.ids)]


def _embed_projected(text: str, embedder: Embedder, head: ProjectionHead) -> np.ndarray:
    return project(head, pool_mean(embedder.embed_tokens(text)))


def build_index(
    chunks: Sequence[Chunk],
    embedder: Embedder,
    head: ProjectionHead,
    metric: str,
) -> VectorIndex:
    """Embed chunks (tokens -> mean pool -> project) in input order."""
    if metric not in METRIC_CODES:
        raise ConfigError(f"unknown metric {metric!r}")
    if not chunks:
        raise CorpusFormatError("cannot build an index from zero chunks")
    ids: list[str] = []
    seen: set[str] = set()
    rows: list[np.ndarray] = []
    for chunk in chunks:
        if chunk.chunk_id in seen:
            raise CorpusFormatError(f"duplicate chunk_id {chunk.chunk_id!r} in index input")
        seen.add(chunk.chunk_id)
        vec = _embed_projected(chunk.text, embedder, head)
        if metric == "cosine":
            norm = float(np.linalg.norm(vec))
            if norm <= NORM_EPS:
                raise DegenerateVectorError(
                    f"chunk {chunk.chunk_id!r} projects to a near-zero vector under cosine"
                )
            vec = vec / norm
        ids.append(chunk.chunk_id)
        rows.append(vec.astype(np.float32))
    return VectorIndex(
        dim=head.d_out,
        metric=metric,
        ids=tuple(ids),
        vectors=np.stack(rows),
        head_fingerprint=head_fingerprint(head),
    )


def search_topk(
    index: VectorIndex,
    query_text: str,
    embedder: Embedder,
    head: ProjectionHead,
    k: int,
) -> list[RetrievalHit]:
    """Exact scan: min(k, n) hits, score descending, ties by ascending chunk_id."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if head_fingerprint(head) != index.head_fingerprint:
        raise IndexMismatchError(
            "index built with different head: rebuild the index or load the matching checkpoint"
        )
    if k == 0:
        return []
    q = _embed_projected(query_text, embedder, head)
    if index.metric == "cosine":
        qnorm = float(np.linalg.norm(q))
        if qnorm <= NORM_EPS:
            raise DegenerateVectorError("degenerate vector: query projects to near-zero norm")
        q = q / qnorm
    scored: list[tuple[str, float]] = []
    for i, cid in enumerate(index.ids):
        row = index.vectors[i].astype(np.float64)
        if index.metric == "cosine":
            score = float(np.dot(row, q))
        else:
            score = -float(np.linalg.norm(row - q))
        scored.append((cid, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return [
        RetrievalHit(chunk_id=cid, score=score, rank=rank)
        for rank, (cid, score) in enumerate(scored[:k], start=1)
    ]


def save_index(index: VectorIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = bytearray()
    for i, cid in enumerate(index.ids):
        cid_bytes = cid.encode("utf-8")
        payload += binio.pack_u32(len(cid_bytes))
        payload += cid_bytes
        payload += np.ascontiguousarray(index.vectors[i], dtype="<f4").tobytes()
    header = (
        INDEX_MAGIC
        + binio.pack_u32(INDEX_VERSION)
        + binio.pack_u8(METRIC_CODES[index.metric])
        + binio.pack_u32(index.dim)
        + binio.pack_u64(len(index.ids))
        + binio.pack_u64(index.head_fingerprint)
        + binio.pack_u32(zlib.crc32(bytes(payload)))
    )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + bytes(payload))
    tmp.replace(path)


def load_index(path: str | Path) -> VectorIndex:
    path = Path(path)
    if not path.exists():
        raise PersistenceError(f"index file not found: {path}")
    with path.open("rb") as fh:
        magic = binio.read_exact(fh, 4, "magic")
        if magic != INDEX_MAGIC:
            raise PersistenceError(f"not an index file (bad magic {magic!r}): {path}")
        version = binio.read_u32(fh, "version")
        if version != INDEX_VERSION:
            raise PersistenceError(f"unsupported index version {version}")
        metric_code = binio.read_u8(fh, "metric")
        if metric_code not in CODE_METRICS:
            raise PersistenceError(f"invalid metric byte {metric_code}")
        dim = binio.read_u32(fh, "dim")
        count = binio.read_u64(fh, "count")
        fingerprint = binio.read_u64(fh, "head fingerprint")
        crc_expected = binio.read_u32(fh, "payload checksum")
        payload = fh.read()
    if zlib.crc32(payload) != crc_expected:
        raise PersistenceError(f"index payload checksum mismatch: {path}")
    ids: list[str] = []
    rows: list[np.ndarray] = []
    offset = 0
    vec_bytes = dim * 4
    for _ in range(count):
        if offset + 4 > len(payload):
            raise PersistenceError(f"truncated index entry table: {path}")
        (cid_len,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        if offset + cid_len + vec_bytes > len(payload):
            raise PersistenceError(f"truncated index entry table: {path}")
        ids.append(payload[offset : offset + cid_len].decode("utf-8"))
        offset += cid_len
        rows.append(np.frombuffer(payload, dtype="<f4", count=dim, offset=offset).copy())
        offset += vec_bytes
    if offset != len(payload):
        raise PersistenceError(f"trailing bytes after index entries: {path}")
    vectors = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    return VectorIndex(
        dim=dim,
        metric=CODE_METRICS[metric_code],
        ids=tuple(ids),
        vectors=vectors,
        head_fingerprint=fingerprint,
    )
