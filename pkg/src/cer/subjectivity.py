"""Lexicon-based subjectivity scoring.

A chunk's subjectivity score is the fraction of its token positions covered
by a lexicon match: case-folded unigrams plus multi-word terms matched as
consecutive token runs, with overlapping matches counted once. The score
drives hard-negative selection and the re-ranking penalty.

Lexicon file format: UTF-8 text, one term per line; "#" starts a comment
line; blank lines are ignored. Terms may be multi-word (space-separated).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Chunk, tokenize
from .errors import LexiconError

# Hedges, opinion adjectives, and boosters: cue terms for non-factual
# phrasing. Swappable via load_lexicon(path) for domain-specific lexicons.
BUILTIN_TERMS = (
    "allegedly",
    "amazing",
    "anecdotal",
    "apparently",
    "arguably",
    "astonishing",
    "awful",
    "believe",
    "best",
    "breakthrough",
    "certainly",
    "claim to",
    "clearly",
    "completely",
    "definitely",
    "everyone knows",
    "extraordinary",
    "extremely",
    "fantastic",
    "feel",
    "feels",
    "game changer",
    "great",
    "honestly",
    "hope",
    "horrible",
    "hype",
    "incredible",
    "likely",
    "literally",
    "maybe",
    "miracle",
    "miraculous",
    "no doubt",
    "obviously",
    "perhaps",
    "personally",
    "phenomenal",
    "possibly",
    "presumably",
    "probably",
    "really",
    "remarkable",
    "reportedly",
    "revolutionary",
    "rumor",
    "rumored",
    "seem",
    "seemingly",
    "seems",
    "spectacular",
    "stunning",
    "supposedly",
    "surely",
    "terrible",
    "testimonial",
    "think",
    "totally",
    "truly",
    "unbelievable",
    "undoubtedly",
    "wonderful",
    "worst",
)


@dataclass(frozen=True)
class SubjectivityLexicon:
    """Case-folded cue terms, pre-tokenized for matching against chunk tokens."""

    terms: frozenset[str]
    source: str
    unigrams: frozenset[str]
    phrases: tuple[tuple[str, ...], ...]


def _build_lexicon(raw_terms: Sequence[str], source: str) -> SubjectivityLexicon:
    terms: set[str] = set()
    unigrams: set[str] = set()
    phrases: set[tuple[str, ...]] = set()
    for raw in raw_terms:
        term = " ".join(raw.casefold().split())
        if not term:
            continue
        terms.add(term)
        # Match with the corpus tokenizer so punctuation inside terms cannot
        # desynchronize term words from chunk tokens.
        words = tuple(tok.text.casefold() for tok in tokenize(term))
        if not words:
            continue
        if len(words) == 1:
            unigrams.add(words[0])
        else:
            phrases.add(words)
    if not terms:
        raise LexiconError(f"empty lexicon: {source}")
    return SubjectivityLexicon(
        terms=frozenset(terms),
        source=source,
        unigrams=frozenset(unigrams),
        phrases=tuple(sorted(phrases)),
    )


def load_lexicon(path: str | Path = "builtin") -> SubjectivityLexicon:
    """Load a lexicon file, or the shipped builtin set for path "builtin"."""
    if str(path) == "builtin":
        return _build_lexicon(BUILTIN_TERMS, "builtin")
    path = Path(path)
    if not path.exists():
        raise LexiconError(f"lexicon file not found: {path}")
    lines = []
    for line in path.read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        lines.append(stripped)
    return _build_lexicon(lines, str(path))


def match_token_positions(token_texts: Sequence[str], lex: SubjectivityLexicon) -> set[int]:
    """Return the set of token positions covered by any lexicon match."""
    folded = [t.casefold() for t in token_texts]
    covered: set[int] = set()
    for i, tok in enumerate(folded):
        if tok in lex.unigrams:
            covered.add(i)
    for phrase in lex.phrases:
        n = len(phrase)
        for i in range(len(folded) - n + 1):
            if tuple(folded[i : i + n]) == phrase:
                covered.update(range(i, i + n))
    return covered


def subjectivity_score(chunk: Chunk, lex: SubjectivityLexicon) -> float:
    """Covered token positions / total tokens, in [0, 1]."""
    total = len(chunk.tokens)
    if total == 0:
        raise LexiconError(f"cannot score empty chunk {chunk.chunk_id!r}")
    covered = match_token_positions([t.text for t in chunk.tokens], lex)
    return len(covered) / total
