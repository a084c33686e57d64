"""Token-level attribution, rationale selection, re-ranking, prompt assembly.

Attribution modes:

* decomposition — exact, cosine-only. With mean pooling and a linear head,
  f = W @ mean_t(e_t), so cos(f, q) splits additively into per-token
  contributions c_t = <W e_t, q> / (T ||f|| ||q||) that sum to the base
  similarity identically.
* occlusion — metric-agnostic. c_t is the similarity drop when token t is
  removed and the passage re-pooled over the remaining T-1 tokens.

Re-rank score: alpha * base_similarity + beta * evidence_mass
- gamma * subjectivity, where evidence_mass sums the positive contributions
of tokens NOT matched by the subjectivity lexicon. All three weights are
inspectable in the explanation payload, which is the user-facing JSON:

  {"claim": ..., "hits": [{"chunk_id", "base_similarity", "rerank_score",
   "subjectivity", "rationale": [{"start", "end", "text", "contribution"}],
   "coverage"}]}
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Chunk, Token
from .embed import Embedder, NORM_EPS, pool_mean, project, similarity
from .errors import ConfigError, DegenerateVectorError, ExplainError
from .index import RetrievalHit
from .projection import ProjectionHead
from .subjectivity import SubjectivityLexicon, match_token_positions


@dataclass(frozen=True)
class Attribution:
    chunk_id: str
    mode: str  # "decomposition" | "occlusion"
    base_similarity: float
    tokens: tuple[Token, ...]
    contributions: np.ndarray  # float64, aligned to tokens

    @property
    def token_contribs(self) -> list[tuple[Token, float]]:
        return [(tok, float(c)) for tok, c in zip(self.tokens, self.contributions)]


@dataclass(frozen=True)
class Rationale:
    chunk_id: str
    spans: tuple[tuple[int, int, float], ...]  # (byte_start, byte_end, contribution)
    coverage: float


@dataclass(frozen=True)
class RerankConfig:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    rerank_pool: int = 50
    rationale_coverage: float = 0.8
    max_rationale_tokens: int = 10

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ConfigError("rerank weights must be >= 0")
        if self.rerank_pool < 1:
            raise ConfigError(f"rerank_pool must be >= 1, got {self.rerank_pool}")
        if not 0.0 <= self.rationale_coverage <= 1.0:
            raise ConfigError("rationale_coverage must be in [0, 1]")
        if self.max_rationale_tokens < 1:
            raise ConfigError("max_rationale_tokens must be >= 1")


def attribute_decomposition(
    query_text: str,
    chunk: Chunk,
    embedder: Embedder,
    head: ProjectionHead,
) -> Attribution:
    """Exact additive decomposition of cos(f, q) over chunk tokens."""
    if head.metric != "cosine":
        raise ExplainError(
            "decomposition attribution requires a cosine head; use occlusion for euclidean"
        )
    te = embedder.embed_tokens(chunk.text)
    if len(te) == 0:
        raise ExplainError(f"chunk {chunk.chunk_id!r} has no tokens to attribute")
    q = project(head, pool_mean(embedder.embed_tokens(query_text)))
    f = project(head, pool_mean(te))
    nf = float(np.linalg.norm(f))
    nq = float(np.linalg.norm(q))
    if nf <= NORM_EPS or nq <= NORM_EPS:
        raise DegenerateVectorError("degenerate vector: zero-norm projection in attribution")
    per_token = te.vectors.astype(np.float64) @ head.W.T  # (T, d_out)
    contribs = (per_token @ q) / (len(te) * nf * nq)
    base = float(np.dot(f, q)) / (nf * nq)
    return Attribution(
        chunk_id=chunk.chunk_id,
        mode="decomposition",
        base_similarity=base,
        tokens=te.tokens,
        contributions=contribs,
    )


def attribute_occlusion(
    query_text: str,
    chunk: Chunk,
    embedder: Embedder,
    head: ProjectionHead,
    metric: str,
) -> Attribution:
    """c_t = sim(q, f(chunk)) - sim(q, f(chunk minus token t))."""
    te = embedder.embed_tokens(chunk.text)
    if len(te) == 0:
        raise ExplainError(f"chunk {chunk.chunk_id!r} has no tokens to attribute")
    q = project(head, pool_mean(embedder.embed_tokens(query_text)))
    full = project(head, pool_mean(te))
    base = similarity(metric, q, full)
    T = len(te)
    if T == 1:
        contribs = np.array([base], dtype=np.float64)
    else:
        contribs = np.empty(T, dtype=np.float64)
        vectors = te.vectors.astype(np.float64)
        for t in range(T):
            reduced = np.mean(np.delete(vectors, t, axis=0), axis=0)
            reduced_proj = head.W @ reduced
            try:
                contribs[t] = base - similarity(metric, q, reduced_proj)
            except DegenerateVectorError:
                # Removing this token destroys the passage direction entirely;
                # credit it with the whole similarity.
                contribs[t] = base
    return Attribution(
        chunk_id=chunk.chunk_id,
        mode="occlusion",
        base_similarity=base,
        tokens=te.tokens,
        contributions=contribs,
    )


def select_rationale(attr: Attribution, cfg: RerankConfig) -> Rationale:
    """Greedy top-contribution tokens until the coverage threshold or token cap.

    Only positive contributions participate; ties go to the earlier byte
    position. Selected spans are re-sorted by position for rendering.
    """
    positives = [
        (float(c), tok)
        for tok, c in zip(attr.tokens, attr.contributions)
        if float(c) > 0.0 and tok.byte_end > tok.byte_start
    ]
    total = sum(c for c, _ in positives)
    if total <= 0.0:
        return Rationale(chunk_id=attr.chunk_id, spans=(), coverage=0.0)
    positives.sort(key=lambda item: (-item[0], item[1].byte_start))
    selected: list[tuple[float, Token]] = []
    cum = 0.0
    for c, tok in positives:
        if cum / total >= cfg.rationale_coverage:
            break
        if len(selected) >= cfg.max_rationale_tokens:
            break
        selected.append((c, tok))
        cum += c
    spans = tuple(
        sorted(
            ((tok.byte_start, tok.byte_end, c) for c, tok in selected),
            key=lambda s: s[0],
        )
    )
    return Rationale(chunk_id=attr.chunk_id, spans=spans, coverage=cum / total)


def rerank(
    hits: Sequence[RetrievalHit],
    attrs: Mapping[str, Attribution],
    subj_scores: Mapping[str, float],
    lex: SubjectivityLexicon,
    cfg: RerankConfig,
) -> list[RetrievalHit]:
    """Re-score the pool and re-sort; output scores are rerank scores, ranks 1..n."""
    cfg.validate()
    if len(hits) > cfg.rerank_pool:
        raise ExplainError(
            f"rerank pool holds {len(hits)} hits, more than rerank_pool={cfg.rerank_pool}"
        )
    rescored: list[tuple[str, float]] = []
    for hit in hits:
        attr = attrs.get(hit.chunk_id)
        if attr is None:
            raise ExplainError(f"missing attribution for hit {hit.chunk_id!r}")
        if hit.chunk_id not in subj_scores:
            raise ExplainError(f"missing subjectivity score for hit {hit.chunk_id!r}")
        matched = match_token_positions([t.text for t in attr.tokens], lex)
        evidence_mass = float(
            sum(
                max(float(c), 0.0)
                for i, c in enumerate(attr.contributions)
                if i not in matched
            )
        )
        score = (
            cfg.alpha * attr.base_similarity
            + cfg.beta * evidence_mass
            - cfg.gamma * subj_scores[hit.chunk_id]
        )
        rescored.append((hit.chunk_id, score))
    rescored.sort(key=lambda item: (-item[1], item[0]))
    return [
        RetrievalHit(chunk_id=cid, score=score, rank=rank)
        for rank, (cid, score) in enumerate(rescored, start=1)
    ]


# --------- prompt assembly ---------

NO_EVIDENCE_BLOCK = "no evidence retrieved"


def _render_rationale(rationale: Rationale | None, chunk_text: str) -> str:
    if rationale is None or not rationale.spans:
        return "(no rationale)"
    text_bytes = chunk_text.encode("utf-8")
    quotes = [
        '"' + text_bytes[s:e].decode("utf-8", errors="replace") + '"'
        for s, e, _ in rationale.spans
    ]
    return " ".join(quotes)


def default_prompt_template(n_hits: int) -> str:
    if n_hits == 0:
        return "Claim: {claim}\n\nEvidence:\n" + NO_EVIDENCE_BLOCK + "\n"
    parts = ["Claim: {claim}\n"]
    for i in range(1, n_hits + 1):
        parts.append(f"\nEvidence {i}: {{evidence_{i}}}\nRationale {i}: {{rationale_{i}}}\n")
    parts.append("\nAnswer the claim using only the evidence above.\n")
    return "".join(parts)


def assemble_prompt(
    claim: str,
    hits: Sequence[RetrievalHit],
    chunks: Mapping[str, Chunk],
    rationales: Mapping[str, Rationale],
    template: str | None = None,
) -> str:
    """Substitute {claim}, {evidence_i}, {rationale_i} placeholders.

    Evidence is numbered in rerank order. Placeholders past the available
    hits render as the explicit no-evidence block; unknown placeholder names
    are an error.
    """
    if template is None:
        template = default_prompt_template(len(hits))
    values: dict[str, str] = {"claim": claim}
    for field_name in _template_fields(template):
        if field_name == "claim":
            continue
        kind, _, num = field_name.partition("_")
        if kind not in ("evidence", "rationale") or not num.isdigit() or int(num) < 1:
            raise ExplainError(f"unknown placeholder {{{field_name}}} in prompt template")
        i = int(num)
        if i > len(hits):
            values[field_name] = NO_EVIDENCE_BLOCK
            continue
        hit = hits[i - 1]
        chunk = chunks.get(hit.chunk_id)
        if chunk is None:
            raise ExplainError(f"no chunk text for hit {hit.chunk_id!r}")
        if kind == "evidence":
            values[field_name] = chunk.text
        else:
            values[field_name] = _render_rationale(rationales.get(hit.chunk_id), chunk.text)
    return template.format(**values)


def _template_fields(template: str) -> list[str]:
    fields = []
    for _, field_name, spec, _ in string.Formatter().parse(template):
        if field_name is None:
            continue
        if field_name == "" or spec:
            raise ExplainError("prompt template placeholders must be named, e.g. {claim}")
        fields.append(field_name)
    return fields


def build_explanation(
    claim: str,
    reranked: Sequence[RetrievalHit],
    attrs: Mapping[str, Attribution],
    subj_scores: Mapping[str, float],
    rationales: Mapping[str, Rationale],
    chunks: Mapping[str, Chunk],
) -> dict:
    """The user-facing explanation payload for one query."""
    hits_payload = []
    for hit in reranked:
        attr = attrs[hit.chunk_id]
        rationale = rationales[hit.chunk_id]
        chunk_bytes = chunks[hit.chunk_id].text.encode("utf-8")
        hits_payload.append(
            {
                "chunk_id": hit.chunk_id,
                "base_similarity": attr.base_similarity,
                "rerank_score": hit.score,
                "subjectivity": subj_scores[hit.chunk_id],
                "rationale": [
                    {
                        "start": s,
                        "end": e,
                        "text": chunk_bytes[s:e].decode("utf-8", errors="replace"),
                        "contribution": c,
                    }
                    for s, e, c in rationale.spans
                ],
                "coverage": rationale.coverage,
            }
        )
    return {"claim": claim, "hits": hits_payload}
