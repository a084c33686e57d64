"""Attribution decomposition/occlusion, rationale selection, re-ranking, prompts."""

import dataclasses

import numpy as np
import pytest

from cer.corpus import Chunk, Token, tokenize
from cer.embed import pool_mean, project, similarity
from cer.errors import ExplainError
from cer.explain import (
    Attribution,
    RerankConfig,
    assemble_prompt,
    attribute_decomposition,
    attribute_occlusion,
    build_explanation,
    rerank,
    select_rationale,
)
from cer.index import RetrievalHit
from cer.projection import init_head


def make_chunk(text: str, doc_id: str = "d") -> Chunk:
    return Chunk(f"{doc_id}#0", doc_id, text, tuple(tokenize(text)))


def random_head(rng, d_in, d_out, metric):
    base = init_head(max(d_in, 2), max(d_out, 2), metric)
    return dataclasses.replace(
        base, d_in=d_in, d_out=d_out, W=rng.standard_normal((d_out, d_in))
    )


class TestDecomposition:
    def test_single_token_contribution_is_base(self, embedder):
        head = init_head(64, 64, "cosine")
        attr = attribute_decomposition("aspirin dose", make_chunk("aspirin"), embedder, head)
        assert attr.contributions.shape == (1,)
        assert attr.contributions[0] == attr.base_similarity

    def test_contributions_sum_to_base(self, embedder):
        head = init_head(64, 64, "cosine")
        chunk = make_chunk("randomized trial of aspirin reduced infarction risk")
        attr = attribute_decomposition("does aspirin prevent heart attack", chunk, embedder, head)
        assert abs(float(np.sum(attr.contributions)) - attr.base_similarity) < 1e-9

    def test_duplicated_token_symmetric(self, embedder):
        head = init_head(64, 64, "cosine")
        attr = attribute_decomposition("aspirin", make_chunk("aspirin aspirin"), embedder, head)
        assert abs(attr.contributions[0] - attr.contributions[1]) < 1e-12

    def test_euclidean_head_rejected(self, embedder):
        head = init_head(64, 64, "euclidean")
        with pytest.raises(ExplainError, match="occlusion"):
            attribute_decomposition("q", make_chunk("some text"), embedder, head)

    def test_completeness_random_heads(self, embedder):
        rng = np.random.default_rng(21)
        texts = [
            "subjects reported fewer colds during supplementation",
            "believe this miracle remedy works wonders",
            "blood pressure fell by twelve points on average",
        ]
        for i, text in enumerate(texts):
            head = dataclasses.replace(
                init_head(64, 64, "cosine"), W=rng.standard_normal((64, 64)) / 8.0
            )
            attr = attribute_decomposition("does the remedy work", make_chunk(text), embedder, head)
            assert abs(float(np.sum(attr.contributions)) - attr.base_similarity) < 1e-9

    def test_permutation_symmetry(self, embedder):
        head = init_head(64, 64, "cosine")
        a = attribute_decomposition("query words", make_chunk("alpha beta gamma"), embedder, head)
        b = attribute_decomposition("query words", make_chunk("gamma alpha beta"), embedder, head)
        by_text_a = {t.text: c for t, c in a.token_contribs}
        by_text_b = {t.text: c for t, c in b.token_contribs}
        for text in ("alpha", "beta", "gamma"):
            assert by_text_a[text] == pytest.approx(by_text_b[text], abs=1e-12)


class TestOcclusion:
    @pytest.mark.parametrize("metric", ["cosine", "euclidean"])
    def test_identical_tokens_symmetric(self, embedder, metric):
        head = init_head(64, 64, metric)
        attr = attribute_occlusion("aspirin", make_chunk("aspirin aspirin"), embedder, head, metric)
        assert attr.contributions[0] == attr.contributions[1]

    def test_single_token_is_base(self, embedder):
        head = init_head(64, 64, "cosine")
        attr = attribute_occlusion("aspirin", make_chunk("placebo"), embedder, head, "cosine")
        assert attr.contributions[0] == attr.base_similarity

    @pytest.mark.parametrize("metric", ["cosine", "euclidean"])
    def test_matches_recompute_from_scratch(self, embedder, metric):
        head = init_head(64, 64, metric)
        chunk = make_chunk("aspirin reduced heart attack risk")
        query = "does aspirin prevent infarction"
        attr = attribute_occlusion(query, chunk, embedder, head, metric)
        q = project(head, pool_mean(embedder.embed_tokens(query)))
        base = similarity(metric, q, project(head, pool_mean(embedder.embed_tokens(chunk.text))))
        token_texts = [t.text for t in chunk.tokens]
        for t in range(len(token_texts)):
            reduced_text = " ".join(token_texts[:t] + token_texts[t + 1:])
            reduced = project(head, pool_mean(embedder.embed_tokens(reduced_text)))
            expected = base - similarity(metric, q, reduced)
            assert attr.contributions[t] == pytest.approx(expected, abs=1e-9)


def manual_attr(contribs: list[float], chunk_id: str = "d#0", base: float = 0.5) -> Attribution:
    tokens = tuple(Token(f"t{i}", i * 3, i * 3 + 2) for i in range(len(contribs)))
    return Attribution(chunk_id, "decomposition", base, tokens, np.asarray(contribs, dtype=np.float64))


class TestSelectRationale:
    def test_all_negative_empty(self):
        r = select_rationale(manual_attr([-0.1, -0.4]), RerankConfig())
        assert r.spans == ()
        assert r.coverage == 0.0

    def test_dominant_token_cut(self):
        # One token holds 90% of positive mass; threshold 0.8 selects it alone.
        r = select_rationale(manual_attr([0.9, 0.06, 0.04]), RerankConfig(rationale_coverage=0.8))
        assert len(r.spans) == 1
        assert r.spans[0][:2] == (0, 2)
        assert r.coverage == pytest.approx(0.9)

    def test_equal_ties_by_position_full_coverage(self):
        r = select_rationale(
            manual_attr([0.5, 0.5]),
            RerankConfig(rationale_coverage=1.0, max_rationale_tokens=2),
        )
        assert [s[:2] for s in r.spans] == [(0, 2), (3, 5)]
        assert r.coverage == pytest.approx(1.0)

    def test_max_tokens_cap(self):
        r = select_rationale(
            manual_attr([0.2, 0.2, 0.2, 0.2, 0.2]),
            RerankConfig(rationale_coverage=1.0, max_rationale_tokens=2),
        )
        assert len(r.spans) == 2

    def test_spans_sorted_by_position(self):
        r = select_rationale(manual_attr([0.1, 0.8, 0.3]), RerankConfig(rationale_coverage=1.0))
        starts = [s[0] for s in r.spans]
        assert starts == sorted(starts)


class TestRerank:
    def _hits(self, ids):
        return [RetrievalHit(cid, 1.0 - 0.1 * i, i + 1) for i, cid in enumerate(ids)]

    def test_weights_zero_reduces_to_base_order(self, lexicon):
        hits = self._hits(["a#0", "b#0", "c#0"])
        attrs = {
            "a#0": manual_attr([0.5], "a#0", base=0.9),
            "b#0": manual_attr([0.5], "b#0", base=0.7),
            "c#0": manual_attr([0.5], "c#0", base=0.5),
        }
        subj = {"a#0": 1.0, "b#0": 0.0, "c#0": 0.5}
        cfg = RerankConfig(alpha=1.0, beta=0.0, gamma=0.0)
        out = rerank(hits, attrs, subj, lexicon, cfg)
        assert [h.chunk_id for h in out] == ["a#0", "b#0", "c#0"]
        assert [h.score for h in out] == [0.9, 0.7, 0.5]

    def test_subjectivity_penalty_orders_objective_first(self, lexicon):
        hits = self._hits(["subj#0", "obj#0"])
        attrs = {
            "subj#0": manual_attr([0.5], "subj#0", base=0.8),
            "obj#0": manual_attr([0.5], "obj#0", base=0.8),
        }
        subj = {"subj#0": 1.0, "obj#0": 0.0}
        cfg = RerankConfig(alpha=1.0, beta=0.0, gamma=0.5)
        out = rerank(hits, attrs, subj, lexicon, cfg)
        assert [h.chunk_id for h in out] == ["obj#0", "subj#0"]

    def test_five_hit_fixture_matches_scalar_recompute(self, lexicon):
        # Hand-built contributions; token "believe" is lexicon-matched and must
        # be excluded from evidence mass.
        def attr_with_tokens(chunk_id, base, token_texts, contribs):
            tokens = tuple(
                Token(t, i * 10, i * 10 + len(t)) for i, t in enumerate(token_texts)
            )
            return Attribution(chunk_id, "decomposition", base, tokens, np.asarray(contribs))

        ids = [f"h{i}#0" for i in range(5)]
        hits = self._hits(ids)
        attrs = {
            ids[0]: attr_with_tokens(ids[0], 0.90, ["trial", "data"], [0.5, 0.4]),
            ids[1]: attr_with_tokens(ids[1], 0.85, ["believe", "cure"], [0.6, 0.25]),
            ids[2]: attr_with_tokens(ids[2], 0.80, ["dose", "effect"], [-0.1, 0.9]),
            ids[3]: attr_with_tokens(ids[3], 0.75, ["result", "shown"], [0.2, 0.2]),
            ids[4]: attr_with_tokens(ids[4], 0.70, ["miracle", "story"], [0.8, -0.2]),
        }
        subj = {ids[0]: 0.0, ids[1]: 0.5, ids[2]: 0.0, ids[3]: 0.1, ids[4]: 0.5}
        cfg = RerankConfig(alpha=1.0, beta=0.5, gamma=0.5)
        out = rerank(hits, attrs, subj, lexicon, cfg)

        # Independent scalar recomputation of all five scores.
        masses = {
            ids[0]: 0.5 + 0.4,   # no lexicon tokens
            ids[1]: 0.25,        # "believe" excluded
            ids[2]: 0.9,         # negative clipped
            ids[3]: 0.4,
            ids[4]: 0.0,         # "miracle" excluded, -0.2 clipped
        }
        expected = {
            cid: 1.0 * attrs[cid].base_similarity + 0.5 * masses[cid] - 0.5 * subj[cid]
            for cid in ids
        }
        assert {h.chunk_id: h.score for h in out} == pytest.approx(expected)
        order = sorted(ids, key=lambda cid: (-expected[cid], cid))
        assert [h.chunk_id for h in out] == order
        assert [h.rank for h in out] == [1, 2, 3, 4, 5]

    def test_missing_attribution_errors(self, lexicon):
        hits = self._hits(["a#0"])
        with pytest.raises(ExplainError, match="missing attribution"):
            rerank(hits, {}, {"a#0": 0.0}, lexicon, RerankConfig())

    def test_scaling_invariance_with_gamma_zero(self, lexicon):
        rng = np.random.default_rng(31)
        ids = [f"x{i}#0" for i in range(6)]
        hits = self._hits(ids)
        attrs = {
            cid: manual_attr(list(rng.uniform(-0.2, 0.6, size=3)), cid, base=float(rng.uniform(0, 1)))
            for cid in ids
        }
        subj = {cid: float(rng.uniform(0, 1)) for cid in ids}
        cfg = RerankConfig(alpha=1.0, beta=0.5, gamma=0.0)
        base_order = [h.chunk_id for h in rerank(hits, attrs, subj, lexicon, cfg)]
        scaled_attrs = {
            cid: dataclasses.replace(
                a, base_similarity=3.0 * a.base_similarity, contributions=3.0 * a.contributions
            )
            for cid, a in attrs.items()
        }
        scaled_order = [h.chunk_id for h in rerank(hits, scaled_attrs, subj, lexicon, cfg)]
        assert base_order == scaled_order


class TestAssemblePrompt:
    def _setup(self, embedder):
        head = init_head(64, 64, "cosine")
        chunks = {
            "a#0": make_chunk("aspirin reduced infarction risk in the trial", "a"),
            "b#0": make_chunk("participants believe the remedy is a miracle", "b"),
        }
        attrs = {
            cid: attribute_decomposition("does aspirin work", c, embedder, head)
            for cid, c in chunks.items()
        }
        rationales = {cid: select_rationale(a, RerankConfig()) for cid, a in attrs.items()}
        hits = [RetrievalHit("a#0", 0.9, 1), RetrievalHit("b#0", 0.4, 2)]
        return chunks, rationales, hits

    def test_zero_hits_has_no_evidence_block(self):
        out = assemble_prompt("the claim", [], {}, {})
        assert "no evidence retrieved" in out
        assert "the claim" in out

    def test_single_hit_verbatim_text_and_quotes(self, embedder):
        chunks, rationales, hits = self._setup(embedder)
        out = assemble_prompt("does aspirin work", hits[:1], chunks, rationales)
        assert chunks["a#0"].text in out
        for start, end, _ in rationales["a#0"].spans:
            quoted = chunks["a#0"].text.encode()[start:end].decode()
            assert f'"{quoted}"' in out

    def test_rerank_order_preserved(self, embedder):
        chunks, rationales, hits = self._setup(embedder)
        out = assemble_prompt("does aspirin work", hits, chunks, rationales)
        assert out.index(chunks["a#0"].text) < out.index(chunks["b#0"].text)

    def test_custom_template_and_unknown_placeholder(self, embedder):
        chunks, rationales, hits = self._setup(embedder)
        out = assemble_prompt(
            "c", hits, chunks, rationales, template="Q: {claim} E: {evidence_1}"
        )
        assert out == f"Q: c E: {chunks['a#0'].text}"
        with pytest.raises(ExplainError, match="placeholder"):
            assemble_prompt("c", hits, chunks, rationales, template="{bogus}")

    def test_placeholder_past_hits_renders_no_evidence(self, embedder):
        chunks, rationales, hits = self._setup(embedder)
        out = assemble_prompt("c", hits[:1], chunks, rationales, template="{evidence_2}")
        assert out == "no evidence retrieved"


class TestExplanationPayload:
    def test_payload_shape(self, embedder, lexicon):
        head = init_head(64, 64, "cosine")
        chunk = make_chunk("remarkable trial data shows aspirin works")
        attr = attribute_decomposition("does aspirin work", chunk, embedder, head)
        rationale = select_rationale(attr, RerankConfig())
        hit = RetrievalHit("d#0", 1.23, 1)
        payload = build_explanation(
            "does aspirin work", [hit], {"d#0": attr}, {"d#0": 1 / 6}, {"d#0": rationale},
            {"d#0": chunk},
        )
        assert payload["claim"] == "does aspirin work"
        (h,) = payload["hits"]
        assert h["chunk_id"] == "d#0"
        assert h["rerank_score"] == 1.23
        assert h["base_similarity"] == attr.base_similarity
        assert h["subjectivity"] == 1 / 6
        assert h["coverage"] == rationale.coverage
        for span in h["rationale"]:
            assert chunk.text.encode()[span["start"]:span["end"]].decode() == span["text"]
