"""Retrieval metrics, embedding-space separation statistics, 2-D projection.

precision@K divides by K even when fewer hits exist; recall@K divides by the
relevant-set size. Per-claim metrics are macro-averaged over claims with at
least one relevant chunk (each claim counts equally; claims without relevant
chunks are skipped with a warning).

Separation statistics: mean pairwise distance within positives (intra_pos),
within negatives (intra_neg), and across the groups (inter), computed over
projected chunk embeddings under both distance metrics side by side. A group
too small for a pair leaves the statistic absent rather than zero.

The 2-D export uses PCA via power iteration with deflation (200 iterations,
seeded start, tolerance 1e-9) and a deterministic sign convention: each
component's largest-magnitude coordinate is made positive. CSV format:
header "x,y,label", one row per vector.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Chunk
from .embed import Embedder, distance, pool_mean, project
from .errors import EvalError
from .index import RetrievalHit, VectorIndex, search_topk
from .projection import ProjectionHead

logger = logging.getLogger(__name__)

PCA_ITERATIONS = 200
PCA_TOL = 1e-9
PCA_SEED = 0


def _hit_ids(hits: Iterable[RetrievalHit | str]) -> list[str]:
    return [h.chunk_id if isinstance(h, RetrievalHit) else h for h in hits]


def precision_at_k(hits: Sequence[RetrievalHit | str], relevant_ids: set[str], k: int) -> float:
    """|top-K hits intersect relevant| / K (denominator K even with fewer hits)."""
    if k < 1:
        raise EvalError(f"K must be >= 1, got {k}")
    top = _hit_ids(hits)[:k]
    return sum(1 for cid in top if cid in relevant_ids) / k


def recall_at_k(hits: Sequence[RetrievalHit | str], relevant_ids: set[str], k: int) -> float:
    """|top-K hits intersect relevant| / |relevant|."""
    if k < 1:
        raise EvalError(f"K must be >= 1, got {k}")
    if not relevant_ids:
        raise EvalError("recall undefined for an empty relevant set")
    top = _hit_ids(hits)[:k]
    return sum(1 for cid in top if cid in relevant_ids) / len(relevant_ids)


@dataclass(frozen=True)
class DistanceStats:
    intra_pos: float | None
    intra_neg: float | None
    inter: float | None


def pairwise_distance_stats(
    pos: Sequence[np.ndarray],
    neg: Sequence[np.ndarray],
    metric: str,
) -> DistanceStats:
    """Mean distances over unordered within-group pairs and all cross pairs."""

    def mean_within(vecs: Sequence[np.ndarray]) -> float | None:
        n = len(vecs)
        if n < 2:
            return None
        total = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                total += distance(metric, vecs[i], vecs[j])
        return total / (n * (n - 1) / 2)

    def mean_cross() -> float | None:
        if not pos or not neg:
            return None
        total = 0.0
        for a in pos:
            for b in neg:
                total += distance(metric, a, b)
        return total / (len(pos) * len(neg))

    return DistanceStats(
        intra_pos=mean_within(pos),
        intra_neg=mean_within(neg),
        inter=mean_cross(),
    )


# --------- PCA export ---------


def _power_component(cov: np.ndarray, prior: list[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    """Dominant eigenvector of cov orthogonal to prior components.

    Re-orthogonalizing each iteration keeps rank-deficient data from leaking
    numerical noise of earlier components into later ones.
    """
    d = cov.shape[0]
    v = rng.standard_normal(d)
    for p in prior:
        v -= np.dot(v, p) * p
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.zeros(d)
    v /= norm
    for _ in range(PCA_ITERATIONS):
        w = cov @ v
        for p in prior:
            w -= np.dot(w, p) * p
        norm = float(np.linalg.norm(w))
        if norm <= 1e-30:
            return np.zeros(d)
        w /= norm
        if float(np.linalg.norm(w - v)) < PCA_TOL:
            v = w
            break
        v = w
    idx = int(np.argmax(np.abs(v)))
    if v[idx] < 0:
        v = -v
    return v


def pca_project_2d(
    vectors: Sequence[np.ndarray],
    labels: Sequence[str],
) -> list[tuple[float, float, str]]:
    """Center the data and project onto the top-2 principal directions."""
    if len(vectors) < 2:
        raise EvalError(f"PCA projection needs >= 2 vectors, got {len(vectors)}")
    if len(vectors) != len(labels):
        raise EvalError("vectors and labels must align")
    X = np.asarray(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]))
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / (X.shape[0] - 1)
    rng = np.random.default_rng(PCA_SEED)
    comps: list[np.ndarray] = []
    for _ in range(2):
        comp = _power_component(cov.copy(), comps, rng)
        if np.any(comp != 0.0):
            lam = float(comp @ cov @ comp)
            cov = cov - lam * np.outer(comp, comp)
        comps.append(comp)
    coords = Xc @ np.stack(comps).T
    return [
        (float(coords[i, 0]), float(coords[i, 1]), labels[i]) for i in range(X.shape[0])
    ]


def projection_csv(rows: Sequence[tuple[float, float, str]]) -> str:
    lines = ["x,y,label"]
    for x, y, label in rows:
        lines.append(f"{x!r},{y!r},{label}")
    return "\n".join(lines) + "\n"


# --------- full evaluation ---------


@dataclass(frozen=True)
class EvalReport:
    metric: str
    n_queries: int
    n_pos: int
    n_neg: int
    precision: dict[int, float]  # macro P@K
    recall: dict[int, float]  # macro R@K
    per_query: dict[str, dict[str, dict[int, float]]]
    distance_stats: dict[str, DistanceStats]  # keyed by distance metric
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "averaging": "macro",
            "config_fingerprint": self.config_fingerprint,
            "n_queries": self.n_queries,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "precision_at_k": {str(k): v for k, v in sorted(self.precision.items())},
            "recall_at_k": {str(k): v for k, v in sorted(self.recall.items())},
            "per_query": {
                cid: {
                    "precision_at_k": {str(k): v for k, v in sorted(vals["precision"].items())},
                    "recall_at_k": {str(k): v for k, v in sorted(vals["recall"].items())},
                }
                for cid, vals in sorted(self.per_query.items())
            },
            "distance_stats": {
                m: {
                    "intra_pos": s.intra_pos,
                    "intra_neg": s.intra_neg,
                    "inter": s.inter,
                }
                for m, s in sorted(self.distance_stats.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        def fmt(v: float | None) -> str:
            return "   n/a  " if v is None else f"{v:8.4f}"

        lines = [
            f"retrieval metric: {self.metric}   queries: {self.n_queries}   "
            f"pos chunks: {self.n_pos}   neg chunks: {self.n_neg}",
            f"{'K':>4}  {'P@K':>8}  {'R@K':>8}",
        ]
        for k in sorted(self.precision):
            lines.append(f"{k:>4}  {self.precision[k]:8.4f}  {self.recall[k]:8.4f}")
        for m in sorted(self.distance_stats):
            s = self.distance_stats[m]
            lines.append(
                f"distance stats ({m}): intra_pos={fmt(s.intra_pos)} "
                f"intra_neg={fmt(s.intra_neg)} inter={fmt(s.inter)}"
            )
        return "\n".join(lines) + "\n"


def chunk_polarity(
    chunks: Sequence[Chunk], labels: Mapping[str, Mapping[str, str]]
) -> tuple[list[Chunk], list[Chunk]]:
    """Split chunks into positives (positive for any claim) and negatives
    (negative for any claim and never positive); unlabeled chunks drop out."""
    pos: list[Chunk] = []
    neg: list[Chunk] = []
    for chunk in chunks:
        claim_labels = labels.get(chunk.doc_id, {})
        if any(v == "positive" for v in claim_labels.values()):
            pos.append(chunk)
        elif any(v == "negative" for v in claim_labels.values()):
            neg.append(chunk)
    return pos, neg


def run_eval(
    chunks: Sequence[Chunk],
    claims: Sequence[tuple[str, str]],
    labels: Mapping[str, Mapping[str, str]],
    index: VectorIndex,
    head: ProjectionHead,
    embedder: Embedder,
    ks: Sequence[int],
    config_fingerprint: str = "",
) -> EvalReport:
    """Macro-averaged P@K/R@K plus dual-metric separation statistics."""
    if not ks or any(k < 1 for k in ks):
        raise EvalError(f"Ks must be a non-empty list of ints >= 1, got {ks}")
    ks = sorted(set(ks))
    max_k = max(ks)

    relevant_by_claim: dict[str, set[str]] = {}
    claim_text: dict[str, str] = {}
    for claim_id, text in claims:
        claim_text[claim_id] = text
        relevant_by_claim[claim_id] = {
            c.chunk_id
            for c in chunks
            if labels.get(c.doc_id, {}).get(claim_id) == "positive"
        }

    per_query: dict[str, dict[str, dict[int, float]]] = {}
    for claim_id in sorted(relevant_by_claim):
        relevant = relevant_by_claim[claim_id]
        if not relevant:
            logger.warning("claim %r has no relevant chunks; excluded from eval", claim_id)
            continue
        hits = search_topk(index, claim_text[claim_id], embedder, head, max_k)
        per_query[claim_id] = {
            "precision": {k: precision_at_k(hits, relevant, k) for k in ks},
            "recall": {k: recall_at_k(hits, relevant, k) for k in ks},
        }
    if not per_query:
        raise EvalError("no evaluable claims: every claim lacks relevant chunks")

    macro_p = {
        k: float(np.mean([per_query[c]["precision"][k] for c in sorted(per_query)]))
        for k in ks
    }
    macro_r = {
        k: float(np.mean([per_query[c]["recall"][k] for c in sorted(per_query)]))
        for k in ks
    }

    pos_chunks, neg_chunks = chunk_polarity(chunks, labels)
    pos_vecs = [project(head, pool_mean(embedder.embed_tokens(c.text))) for c in pos_chunks]
    neg_vecs = [project(head, pool_mean(embedder.embed_tokens(c.text))) for c in neg_chunks]
    stats = {
        m: pairwise_distance_stats(pos_vecs, neg_vecs, m) for m in ("cosine", "euclidean")
    }

    return EvalReport(
        metric=index.metric,
        n_queries=len(per_query),
        n_pos=len(pos_chunks),
        n_neg=len(neg_chunks),
        precision=macro_p,
        recall=macro_r,
        per_query=per_query,
        distance_stats=stats,
        config_fingerprint=config_fingerprint,
    )
