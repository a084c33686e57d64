"""Triplet mining, triplet losses with analytic gradients, and training.

Loss: L = max(0, d(Wa, Wp) - d(Wa, Wn) + margin) with d either
1 - cosine or the L2 norm; the two metrics are alternative configurations,
not a joint objective.

Gradients against every entry of W, with u = Wa, v = Wp, w = Wn:

* euclidean: d(u, v) = ||u - v|| = ||W(a-p)||, so
  dd/dW = ((u - v)/||u - v||) (a - p)^T; a zero-distance branch contributes
  the zero subgradient.
* cosine: d = 1 - s with s(u, v) = u.v / (||u|| ||v||), using
  ds/du = v/(||u|| ||v||) - s u/||u||^2 (and symmetrically for the other
  argument), chained through u = Wa as dphi/dW += (dphi/du) a^T.

The hinge is active iff d(Wa,Wp) - d(Wa,Wn) + margin > 0; an inactive hinge
yields the exact zero matrix. When a = p = n the two distance terms cancel
bitwise, so the gradient is exactly zero even though L = margin.

Hard negatives: for each claim, every chunk not labeled positive is a
candidate, scored hardness = lambda_sim * simrank + lambda_subj *
subjectivity, where simrank min-max normalizes the candidate's base cosine
similarity to the anchor over the candidate pool. Top-N by hardness, ties to
the lexicographically smaller chunk_id.

Triplets file: JSON-lines, one triplet per line (see save_triplets).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Chunk
from .embed import Embedder, NORM_EPS, pool_mean, similarity
from .errors import ConfigError, CorpusFormatError, DegenerateVectorError, MiningError, TrainingError
from .projection import ProjectionHead, METRIC_CODES
from .subjectivity import SubjectivityLexicon, subjectivity_score


@dataclass(frozen=True)
class Triplet:
    claim_id: str
    anchor_text: str
    positive_id: str
    negative_id: str
    neg_subjectivity: float
    neg_base_sim: float


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.2
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    metric: str = "cosine"

    # Adam constants, fixed for reproducibility
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.margin <= 0:
            raise ConfigError(f"margin must be > 0, got {self.margin}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer != "adam":
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.metric not in METRIC_CODES:
            raise ConfigError(f"unknown metric {self.metric!r}")


@dataclass(frozen=True)
class MiningConfig:
    negatives_per_anchor: int = 4
    lambda_sim: float = 0.5
    lambda_subj: float = 0.5
    semi_hard_only: bool = False

    def validate(self) -> None:
        if self.negatives_per_anchor < 1:
            raise ConfigError(
                f"negatives_per_anchor must be >= 1, got {self.negatives_per_anchor}"
            )
        if self.lambda_sim < 0 or self.lambda_subj < 0 or self.lambda_sim + self.lambda_subj <= 0:
            raise ConfigError("lambda_sim + lambda_subj must be positive")


# --------- loss and gradient ---------


def _projected(head: ProjectionHead, x: np.ndarray) -> np.ndarray:
    return head.W @ np.asarray(x, dtype=np.float64)


def _cosine_terms(head: ProjectionHead, anchor, pos, neg):
    u = _projected(head, anchor)
    v = _projected(head, pos)
    w = _projected(head, neg)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    nw = float(np.linalg.norm(w))
    if nu <= NORM_EPS or nv <= NORM_EPS or nw <= NORM_EPS:
        raise DegenerateVectorError("degenerate projection: near-zero norm under cosine loss")
    s_ap = float(np.dot(u, v)) / (nu * nv)
    s_an = float(np.dot(u, w)) / (nu * nw)
    return u, v, w, nu, nv, nw, s_ap, s_an


def _hinge_slack(head: ProjectionHead, anchor, pos, neg, cfg: TrainConfig) -> float:
    """d(Wa, Wp) - d(Wa, Wn) + margin for the configured metric."""
    if cfg.metric == "cosine":
        *_, s_ap, s_an = _cosine_terms(head, anchor, pos, neg)
        return s_an - s_ap + cfg.margin
    u = _projected(head, anchor)
    d_ap = float(np.linalg.norm(u - _projected(head, pos)))
    d_an = float(np.linalg.norm(u - _projected(head, neg)))
    return d_ap - d_an + cfg.margin


def triplet_loss(
    head: ProjectionHead,
    anchor: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    cfg: TrainConfig,
) -> float:
    return max(0.0, _hinge_slack(head, anchor, pos, neg, cfg))


def loss_gradient(
    head: ProjectionHead,
    anchor: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    cfg: TrainConfig,
) -> np.ndarray:
    """dL/dW, exactly zero when the hinge is inactive."""
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(pos, dtype=np.float64)
    n = np.asarray(neg, dtype=np.float64)
    zero = np.zeros_like(head.W)

    if cfg.metric == "cosine":
        u, v, w, nu, nv, nw, s_ap, s_an = _cosine_terms(head, a, p, n)
        if s_an - s_ap + cfg.margin <= 0.0:
            return zero
        ds_ap_du = v / (nu * nv) - (s_ap / (nu * nu)) * u
        ds_ap_dv = u / (nu * nv) - (s_ap / (nv * nv)) * v
        ds_an_du = w / (nu * nw) - (s_an / (nu * nu)) * u
        ds_an_dw = u / (nu * nw) - (s_an / (nw * nw)) * w
        # L = s_an - s_ap + m, so dL/du = ds_an/du - ds_ap/du etc.
        return (
            np.outer(ds_an_du - ds_ap_du, a)
            - np.outer(ds_ap_dv, p)
            + np.outer(ds_an_dw, n)
        )

    u = _projected(head, a)
    e_ap = u - _projected(head, p)
    e_an = u - _projected(head, n)
    d_ap = float(np.linalg.norm(e_ap))
    d_an = float(np.linalg.norm(e_an))
    if d_ap - d_an + cfg.margin <= 0.0:
        return zero
    grad = zero
    if d_ap > NORM_EPS:
        grad = grad + np.outer(e_ap / d_ap, a - p)
    if d_an > NORM_EPS:
        grad = grad - np.outer(e_an / d_an, a - n)
    return grad


# --------- training ---------


def train(
    head: ProjectionHead,
    triplets: Sequence[Triplet],
    anchor_vecs: Mapping[str, np.ndarray],
    chunk_vecs: Mapping[str, np.ndarray],
    cfg: TrainConfig,
) -> tuple[ProjectionHead, list[float]]:
    """Mini-batch Adam over the triplet hinge loss.

    anchor_vecs maps anchor_text -> base pooled vector, chunk_vecs maps
    chunk_id -> base pooled vector. Deterministic in (seed, data, config):
    one seeded generator drives every epoch's shuffle, and batch gradients
    are the mean of per-triplet gradients accumulated in shuffle order.
    """
    cfg.validate()
    if not triplets:
        raise TrainingError("no triplets to train on")

    resolved: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for t in triplets:
        try:
            a = anchor_vecs[t.anchor_text]
            p = chunk_vecs[t.positive_id]
            n = chunk_vecs[t.negative_id]
        except KeyError as exc:
            raise TrainingError(
                f"triplet ({t.claim_id}, {t.positive_id}, {t.negative_id}) "
                f"references an unembeddable item: {exc}"
            ) from exc
        resolved.append((np.asarray(a, np.float64), np.asarray(p, np.float64), np.asarray(n, np.float64)))

    W = head.W.astype(np.float64).copy()
    work = ProjectionHead(head.d_in, head.d_out, W, cfg.metric, head.trained_steps)
    if cfg.epochs == 0:
        return head.copy(), []

    mom = np.zeros_like(W)
    vel = np.zeros_like(W)
    steps = 0
    rng = np.random.default_rng(cfg.seed)
    curve: list[float] = []

    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(resolved))
        epoch_losses: list[float] = []
        for batch_start in range(0, len(order), cfg.batch_size):
            batch = order[batch_start : batch_start + cfg.batch_size]
            grad_sum = np.zeros_like(W)
            for idx in batch:
                a, p, n = resolved[idx]
                loss = triplet_loss(work, a, p, n, cfg)
                grad = loss_gradient(work, a, p, n, cfg)
                if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                    t = triplets[idx]
                    raise TrainingError(
                        f"non-finite loss/gradient on triplet "
                        f"({t.claim_id}, {t.positive_id}, {t.negative_id})"
                    )
                epoch_losses.append(loss)
                grad_sum += grad
            grad_mean = grad_sum / len(batch)
            steps += 1
            mom = cfg.beta1 * mom + (1.0 - cfg.beta1) * grad_mean
            vel = cfg.beta2 * vel + (1.0 - cfg.beta2) * grad_mean * grad_mean
            m_hat = mom / (1.0 - cfg.beta1 ** steps)
            v_hat = vel / (1.0 - cfg.beta2 ** steps)
            W -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
            work = ProjectionHead(head.d_in, head.d_out, W, cfg.metric, head.trained_steps + steps)
        curve.append(float(np.mean(epoch_losses)))

    return work, curve


# --------- mining ---------


def _chunk_label(chunk: Chunk, claim_id: str, labels: Mapping[str, Mapping[str, str]]) -> str:
    return labels.get(chunk.doc_id, {}).get(claim_id, "unlabeled")


def mine_triplets(
    claims: Sequence[tuple[str, str]],
    chunks: Sequence[Chunk],
    labels: Mapping[str, Mapping[str, str]],
    embedder: Embedder,
    lex: SubjectivityLexicon,
    cfg: MiningConfig,
    margin: float = 0.2,
) -> list[Triplet]:
    """Mine hardness-ranked negatives for every (claim, positive) pair.

    labels maps doc_id -> {claim_id: label}; chunks inherit their document's
    labels. Output is ordered by claim_id, then positive chunk_id, then
    descending hardness (ties to the smaller chunk_id). With semi_hard_only,
    the candidate pool is first restricted to candidates with base
    distance(anchor, cand) < distance(anchor, pos) + margin.
    """
    cfg.validate()
    if not chunks:
        raise MiningError("no chunks to mine from")

    pooled: dict[str, np.ndarray] = {}
    subj: dict[str, float] = {}
    for chunk in chunks:
        pooled[chunk.chunk_id] = pool_mean(embedder.embed_tokens(chunk.text))
        subj[chunk.chunk_id] = subjectivity_score(chunk, lex)

    out: list[Triplet] = []
    for claim_id, anchor_text in sorted(claims, key=lambda c: c[0]):
        anchor = pool_mean(embedder.embed_tokens(anchor_text))
        positive_ids = sorted(
            c.chunk_id for c in chunks if _chunk_label(c, claim_id, labels) == "positive"
        )
        if not positive_ids:
            raise MiningError(f"claim {claim_id!r} has no positively labeled chunk")
        candidate_ids = sorted(
            c.chunk_id for c in chunks if _chunk_label(c, claim_id, labels) != "positive"
        )
        if not candidate_ids:
            raise MiningError(f"claim {claim_id!r} has an empty negative candidate pool")

        sims = {cid: similarity("cosine", anchor, pooled[cid]) for cid in candidate_ids}
        lo = min(sims.values())
        hi = max(sims.values())
        span = hi - lo
        simrank = {
            cid: ((sims[cid] - lo) / span if span > 0.0 else 0.0) for cid in candidate_ids
        }
        hardness = {
            cid: cfg.lambda_sim * simrank[cid] + cfg.lambda_subj * subj[cid]
            for cid in candidate_ids
        }

        for pos_id in positive_ids:
            pool = candidate_ids
            if cfg.semi_hard_only:
                d_ap = 1.0 - similarity("cosine", anchor, pooled[pos_id])
                pool = [cid for cid in candidate_ids if (1.0 - sims[cid]) < d_ap + margin]
            ranked = sorted(pool, key=lambda cid: (-hardness[cid], cid))
            for neg_id in ranked[: cfg.negatives_per_anchor]:
                out.append(
                    Triplet(
                        claim_id=claim_id,
                        anchor_text=anchor_text,
                        positive_id=pos_id,
                        negative_id=neg_id,
                        neg_subjectivity=subj[neg_id],
                        neg_base_sim=sims[neg_id],
                    )
                )
    return out


# --------- triplets file ---------


def save_triplets(triplets: Sequence[Triplet], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for t in triplets:
            fh.write(
                json.dumps(
                    {
                        "claim_id": t.claim_id,
                        "anchor_text": t.anchor_text,
                        "positive_id": t.positive_id,
                        "negative_id": t.negative_id,
                        "neg_subjectivity": t.neg_subjectivity,
                        "neg_base_sim": t.neg_base_sim,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_triplets(path: str | Path) -> list[Triplet]:
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"triplets file not found: {path}")
    out: list[Triplet] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(
                    Triplet(
                        claim_id=rec["claim_id"],
                        anchor_text=rec["anchor_text"],
                        positive_id=rec["positive_id"],
                        negative_id=rec["negative_id"],
                        neg_subjectivity=float(rec["neg_subjectivity"]),
                        neg_base_sim=float(rec["neg_base_sim"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(f"line {line_no}: invalid triplet record ({exc})") from exc
    return out
