"""Embedding providers, pooling, projection application, similarity, caching.

Two providers stand in for the pretrained encoder:

* builtin_hash — dependency-free signed feature hashing of character 3/4/5-
  grams plus the whole case-folded token; deterministic in (text, dim, seed),
  unit-norm token vectors.
* remote — HTTP wire protocol: POST {endpoint}/embed_tokens with
  {"texts": [...]}; the response carries the server's own tokens and aligned
  per-token vectors. The response dim is pinned on first use; later drift is
  a hard error because it would silently corrupt indexes.

Token vectors cross module boundaries as float32 (the persistence dtype);
all downstream math upcasts to float64. Mean pooling is deliberate: it makes
query-passage similarity exactly additive over tokens, which the
decomposition attribution exploits.
"""

from __future__ import annotations

import logging
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Protocol, Sequence

import numpy as np
import requests

from . import binio
from .corpus import Token, tokenize
from .errors import ConfigError, DegenerateVectorError, EmbeddingError
from .hashing import hash64

if TYPE_CHECKING:
    from .projection import ProjectionHead

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12

CACHE_MAGIC = b"CERC"
CACHE_VERSION = 1

_SUBWORD_PREFIXES = ("##", "Ġ", "▁")  # WordPiece, GPT-2 BPE, SentencePiece


@dataclass(frozen=True)
class EmbedderConfig:
    provider: str = "builtin_hash"
    dim: int = 256
    seed: int = 0
    endpoint: str = ""
    batch_size: int = 16
    timeout_ms: int = 30000

    def validate(self) -> None:
        if self.provider not in ("builtin_hash", "remote"):
            raise ConfigError(f"unknown embedding provider {self.provider!r}")
        if self.dim < 2:
            raise ConfigError(f"embedding dim must be >= 2, got {self.dim}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.provider == "remote" and not self.endpoint:
            raise ConfigError("remote provider requires an endpoint")


@dataclass(frozen=True)
class TokenEmbeddings:
    """Per-token vectors aligned 1:1 with tokens; vectors is a (T, dim) float32 array."""

    tokens: tuple[Token, ...]
    vectors: np.ndarray
    dim: int

    def __len__(self) -> int:
        return len(self.tokens)


class Embedder(Protocol):
    provider_id: str

    @property
    def dim(self) -> int | None: ...

    def cache_identity(self) -> bytes: ...

    def embed_tokens(self, text: str) -> TokenEmbeddings: ...


# --------- builtin provider ---------


class BuiltinHashEmbedder:
    """Signed feature hashing over character n-grams of case-folded tokens."""

    provider_id = "builtin_hash"

    def __init__(self, cfg: EmbedderConfig):
        cfg.validate()
        self._dim = cfg.dim
        self._seed = cfg.seed
        self._token_vectors: dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self._dim

    def cache_identity(self) -> bytes:
        return f"builtin_hash|{self._dim}|{self._seed}".encode("utf-8")

    def _token_vector(self, token_text: str) -> np.ndarray:
        cached = self._token_vectors.get(token_text)
        if cached is not None:
            return cached
        folded = token_text.casefold()
        features = [b"w:" + folded.encode("utf-8")]
        for n in (3, 4, 5):
            for i in range(len(folded) - n + 1):
                features.append(f"{n}:{folded[i:i + n]}".encode("utf-8"))
        vec = np.zeros(self._dim, dtype=np.float64)
        for feat in features:
            idx = hash64(feat, seed=self._seed, salt=b"idx") % self._dim
            sign = 1.0 if hash64(feat, seed=self._seed, salt=b"sign") & 1 else -1.0
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # Signed counts cancelled exactly (vanishingly rare); fall back to
            # a deterministic one-hot so the unit-norm invariant still holds.
            vec[hash64(features[0], seed=self._seed, salt=b"idx") % self._dim] = 1.0
            norm = 1.0
        out = (vec / norm).astype(np.float32)
        self._token_vectors[token_text] = out
        return out

    def embed_tokens(self, text: str) -> TokenEmbeddings:
        tokens = tuple(tokenize(text))
        if not tokens:
            return TokenEmbeddings((), np.zeros((0, self._dim), dtype=np.float32), self._dim)
        vectors = np.stack([self._token_vector(t.text) for t in tokens])
        return TokenEmbeddings(tokens, vectors, self._dim)


# --------- remote provider ---------


def _align_remote_tokens(text: str, token_strs: Sequence[str]) -> tuple[Token, ...]:
    """Best-effort byte-span alignment of server-reported tokens.

    Greedy left-to-right search, exact first then lowercase (only when
    lowercasing preserves length). Tokens that cannot be located (special
    tokens, exotic subwords) get a zero-length span at the cursor; they still
    participate in pooling but are skipped when rendering rationales.
    """
    byte_offsets = [0]
    for ch in text:
        byte_offsets.append(byte_offsets[-1] + len(ch.encode("utf-8")))
    lowered = text.lower()
    can_lower = len(lowered) == len(text)
    cursor = 0
    out: list[Token] = []
    for raw in token_strs:
        needle = raw
        for prefix in _SUBWORD_PREFIXES:
            if needle.startswith(prefix):
                needle = needle[len(prefix):]
        pos = text.find(needle, cursor) if needle else -1
        if pos < 0 and needle and can_lower:
            pos = lowered.find(needle.lower(), cursor)
        if pos < 0:
            out.append(Token(raw, byte_offsets[cursor], byte_offsets[cursor]))
            continue
        end = pos + len(needle)
        out.append(Token(text[pos:end], byte_offsets[pos], byte_offsets[end]))
        cursor = end
    return tuple(out)


class RemoteEmbedder:
    """HTTP client for the embed_tokens wire protocol, batched and order-preserving."""

    provider_id = "remote"

    def __init__(self, cfg: EmbedderConfig):
        cfg.validate()
        self._endpoint = cfg.endpoint.rstrip("/")
        self._batch_size = cfg.batch_size
        self._timeout_s = cfg.timeout_ms / 1000.0
        self._dim: int | None = None

    @property
    def dim(self) -> int | None:
        return self._dim

    def cache_identity(self) -> bytes:
        return f"remote|{self._endpoint}".encode("utf-8")

    def _post_batch(self, texts: Sequence[str]) -> list[TokenEmbeddings]:
        try:
            resp = requests.post(
                f"{self._endpoint}/embed_tokens",
                json={"texts": list(texts)},
                timeout=self._timeout_s,
            )
        except requests.RequestException as exc:
            raise EmbeddingError(f"remote embedder request failed: {exc}") from exc
        if resp.status_code != 200:
            raise EmbeddingError(
                f"remote embedder returned HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            body = resp.json()
            dim = int(body["dim"])
            all_tokens = body["tokens"]
            all_vectors = body["token_embeddings"]
        except (ValueError, KeyError, TypeError) as exc:
            raise EmbeddingError(f"malformed remote embedder response: {exc}") from exc
        if len(all_tokens) != len(texts) or len(all_vectors) != len(texts):
            raise EmbeddingError(
                f"remote embedder returned {len(all_tokens)} results for {len(texts)} texts"
            )
        if self._dim is None:
            self._dim = dim
        elif dim != self._dim:
            raise EmbeddingError(
                f"remote embedder dim drifted from {self._dim} to {dim}; "
                "rebuild the index or restore the original endpoint"
            )
        out: list[TokenEmbeddings] = []
        for text, token_strs, vectors in zip(texts, all_tokens, all_vectors):
            if len(token_strs) != len(vectors):
                raise EmbeddingError("remote embedder tokens/vectors misaligned")
            matrix = np.asarray(vectors, dtype=np.float32)
            if matrix.size == 0:
                matrix = np.zeros((0, dim), dtype=np.float32)
            if matrix.ndim != 2 or matrix.shape[1] != dim:
                raise EmbeddingError("remote embedder vector width does not match dim")
            tokens = _align_remote_tokens(text, token_strs)
            out.append(TokenEmbeddings(tokens, matrix, dim))
        return out

    def embed_many(self, texts: Sequence[str]) -> list[TokenEmbeddings]:
        results: list[TokenEmbeddings] = []
        for i in range(0, len(texts), self._batch_size):
            results.extend(self._post_batch(texts[i : i + self._batch_size]))
        return results

    def embed_tokens(self, text: str) -> TokenEmbeddings:
        return self.embed_many([text])[0]


# --------- pooling, projection, similarity ---------


def pool_mean(te: TokenEmbeddings) -> np.ndarray:
    """Component-wise mean of token vectors (float64); NOT re-normalized."""
    if len(te) == 0:
        raise EmbeddingError("empty passage: cannot pool zero tokens")
    return np.mean(te.vectors, axis=0, dtype=np.float64)


def project(head: "ProjectionHead", v: np.ndarray) -> np.ndarray:
    """Apply the trained linear map: returns W @ v with shape (d_out,)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (head.d_in,):
        raise EmbeddingError(
            f"projection expects dim {head.d_in}, got vector of shape {v.shape}"
        )
    return head.W @ v


def similarity(metric: str, a: np.ndarray, b: np.ndarray) -> float:
    """Similarity where higher is more similar: cosine, or negated L2 distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EmbeddingError(f"dim mismatch: {a.shape} vs {b.shape}")
    if metric == "cosine":
        if a.shape == b.shape and np.array_equal(a, b):
            # Self-similarity is 1 by definition; avoids rounding in dot/norms.
            na = float(np.linalg.norm(a))
            if na <= NORM_EPS:
                raise DegenerateVectorError("degenerate vector: near-zero norm under cosine")
            return 1.0
        na = float(np.linalg.norm(a))
        nb = float(np.linalg.norm(b))
        if na <= NORM_EPS or nb <= NORM_EPS:
            raise DegenerateVectorError("degenerate vector: near-zero norm under cosine")
        return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))
    if metric == "euclidean":
        return -float(np.linalg.norm(a - b))
    raise ConfigError(f"unknown metric {metric!r}")


def distance(metric: str, a: np.ndarray, b: np.ndarray) -> float:
    """Companion distance: 1 - cosine, or the L2 norm."""
    if metric == "cosine":
        return 1.0 - similarity("cosine", a, b)
    if metric == "euclidean":
        return -similarity("euclidean", a, b)
    raise ConfigError(f"unknown metric {metric!r}")


# --------- embedding cache ---------


def cache_key(identity: bytes, text: str) -> int:
    """Stable 64-bit key over (provider identity, text bytes)."""
    return hash64(identity + b"\x00" + text.encode("utf-8"), salt=b"cache")


class EmbeddingCache:
    """Append-only single-file cache of token embeddings.

    Layout: header (magic "CERC", version u32, dim u32), then length-prefixed
    records: u32 payload length, key u64, token count u32, per-token byte
    spans (u32 start, u32 end), then float32 vectors row-major. Corrupt or
    partially written trailing records are dropped with a warning, never
    surfaced as data.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[int, tuple[tuple[tuple[int, int], ...], np.ndarray]] = {}
        self._dim: int | None = None
        self._good_offset = 0
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        data = self.path.read_bytes()
        if len(data) < 12 or data[:4] != CACHE_MAGIC:
            logger.warning("cache %s has an invalid header; starting fresh", self.path)
            return
        version, dim = struct.unpack_from("<II", data, 4)
        if version != CACHE_VERSION:
            logger.warning("cache %s has unsupported version %d; starting fresh", self.path, version)
            return
        self._dim = dim
        offset = 12
        while offset < len(data):
            if offset + 4 > len(data):
                logger.warning("cache %s: dropping truncated trailing record", self.path)
                break
            (payload_len,) = struct.unpack_from("<I", data, offset)
            start = offset + 4
            end = start + payload_len
            if end > len(data) or payload_len < 12:
                logger.warning("cache %s: dropping truncated trailing record", self.path)
                break
            key, count = struct.unpack_from("<QI", data, start)
            span_bytes = count * 8
            vec_bytes = count * dim * 4
            if payload_len != 12 + span_bytes + vec_bytes:
                logger.warning("cache %s: dropping malformed record", self.path)
                break
            spans = tuple(
                struct.unpack_from("<II", data, start + 12 + i * 8) for i in range(count)
            )
            vectors = np.frombuffer(
                data, dtype="<f4", count=count * dim, offset=start + 12 + span_bytes
            ).reshape(count, dim).copy()
            self._entries[key] = (spans, vectors)
            offset = end
            self._good_offset = end

    def get(self, key: int, text: str) -> TokenEmbeddings | None:
        entry = self._entries.get(key)
        if entry is None or self._dim is None:
            return None
        spans, vectors = entry
        text_bytes = text.encode("utf-8")
        tokens = tuple(
            Token(text_bytes[s:e].decode("utf-8", errors="replace"), s, e) for s, e in spans
        )
        return TokenEmbeddings(tokens, vectors.copy(), self._dim)

    def put(self, key: int, te: TokenEmbeddings) -> None:
        with self._lock:
            if key in self._entries:
                return
            if self._dim is not None and self._dim != te.dim:
                logger.warning(
                    "cache %s was built for dim %d, resetting for dim %d",
                    self.path, self._dim, te.dim,
                )
                self._entries.clear()
                self._dim = None
                self._good_offset = 0
            spans = tuple((t.byte_start, t.byte_end) for t in te.tokens)
            vectors = np.ascontiguousarray(te.vectors, dtype="<f4")
            payload = binio.pack_u64(key) + binio.pack_u32(len(te.tokens))
            for s, e in spans:
                payload += binio.pack_u32(s) + binio.pack_u32(e)
            payload += vectors.tobytes()
            record = binio.pack_u32(len(payload)) + payload
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self._dim is None:
                self._dim = te.dim
                header = CACHE_MAGIC + binio.pack_u32(CACHE_VERSION) + binio.pack_u32(te.dim)
                with self.path.open("wb") as fh:
                    fh.write(header + record)
                    fh.flush()
                self._good_offset = len(header) + len(record)
            else:
                # Single write of the fully serialized record: a reader never
                # observes a partially written entry as valid.
                with self.path.open("r+b" if self.path.exists() else "wb") as fh:
                    fh.truncate(self._good_offset)
                    fh.seek(self._good_offset)
                    fh.write(record)
                    fh.flush()
                self._good_offset += len(record)
            self._entries[key] = (spans, vectors)

    def __len__(self) -> int:
        return len(self._entries)


class CachingEmbedder:
    """Wraps a provider with a read-through EmbeddingCache."""

    def __init__(self, inner: Embedder, cache: EmbeddingCache):
        self.inner = inner
        self.cache = cache

    @property
    def provider_id(self) -> str:
        return self.inner.provider_id

    @property
    def dim(self) -> int | None:
        return self.inner.dim

    def cache_identity(self) -> bytes:
        return self.inner.cache_identity()

    def embed_tokens(self, text: str) -> TokenEmbeddings:
        key = cache_key(self.inner.cache_identity(), text)
        hit = self.cache.get(key, text)
        if hit is not None:
            return hit
        te = self.inner.embed_tokens(text)
        self.cache.put(key, te)
        return te


def make_embedder(cfg: EmbedderConfig, cache_path: str | Path | None = None) -> Embedder:
    """Build the configured provider, optionally wrapped in a file cache."""
    cfg.validate()
    inner: Embedder
    if cfg.provider == "builtin_hash":
        inner = BuiltinHashEmbedder(cfg)
    else:
        inner = RemoteEmbedder(cfg)
    if cache_path is None:
        return inner
    return CachingEmbedder(inner, EmbeddingCache(cache_path))
