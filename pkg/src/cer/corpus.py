"""Corpus ingestion: documents, byte-exact tokenization, and window chunking.

Corpus file format (JSON-lines, UTF-8, LF line endings), one document per line:

  {"doc_id": "trial-001", "text": "...", "labels": {"claim-1": "positive"}}

"labels" is optional and maps claim ids to one of "positive" | "negative" |
"unlabeled". Chunks inherit their document's labels: a chunk counts as
positive evidence for a claim iff its document is labeled positive for it.

Tokens are maximal runs of Unicode alphanumeric code points with byte
offsets into the chunk text, so attribution spans always map back to the
exact source bytes. No case folding or stemming happens at this layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusFormatError

VALID_LABELS = ("positive", "negative", "unlabeled")


@dataclass(frozen=True)
class Token:
    """A tokenizer output span; text equals the byte slice [byte_start, byte_end)."""

    text: str
    byte_start: int
    byte_end: int


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    labels: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Chunk:
    """A retrieval unit: chunk_id is "<doc_id>#<k>" with k the 0-based ordinal."""

    chunk_id: str
    doc_id: str
    text: str
    tokens: tuple[Token, ...]


@dataclass(frozen=True)
class ChunkConfig:
    max_tokens: int = 128
    overlap_tokens: int = 32

    def validate(self) -> None:
        if self.max_tokens < 1:
            raise CorpusFormatError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if not 0 <= self.overlap_tokens < self.max_tokens:
            raise CorpusFormatError(
                f"overlap_tokens must satisfy 0 <= overlap < max_tokens, "
                f"got overlap={self.overlap_tokens}, max={self.max_tokens}"
            )


def tokenize(text: str) -> list[Token]:
    """Split text into maximal alphanumeric runs with exact byte offsets."""
    tokens: list[Token] = []
    byte_pos = 0
    run_start = -1
    run_chars: list[str] = []
    for ch in text:
        if ch.isalnum():
            if run_start < 0:
                run_start = byte_pos
            run_chars.append(ch)
        elif run_start >= 0:
            tokens.append(Token("".join(run_chars), run_start, byte_pos))
            run_start = -1
            run_chars = []
        byte_pos += len(ch.encode("utf-8"))
    if run_start >= 0:
        tokens.append(Token("".join(run_chars), run_start, byte_pos))
    return tokens


def chunk_document(doc: Document, cfg: ChunkConfig) -> list[Chunk]:
    """Slide a token window of cfg.max_tokens with stride (max - overlap).

    The final partial window is kept if non-empty; evidence often sits in the
    trailing sentences. Chunk text is the byte span from the first to the
    last window token, and token offsets are rebased to the chunk text.
    """
    cfg.validate()
    doc_tokens = tokenize(doc.text)
    if not doc_tokens:
        return []
    text_bytes = doc.text.encode("utf-8")
    stride = cfg.max_tokens - cfg.overlap_tokens
    chunks: list[Chunk] = []
    start = 0
    k = 0
    while start < len(doc_tokens):
        window = doc_tokens[start : start + cfg.max_tokens]
        base = window[0].byte_start
        chunk_text = text_bytes[base : window[-1].byte_end].decode("utf-8")
        rebased = tuple(
            Token(t.text, t.byte_start - base, t.byte_end - base) for t in window
        )
        chunks.append(Chunk(f"{doc.doc_id}#{k}", doc.doc_id, chunk_text, rebased))
        start += stride
        k += 1
    return chunks


def _parse_document(record: object, line_no: int) -> Document:
    if not isinstance(record, dict):
        raise CorpusFormatError(f"line {line_no}: expected a JSON object")
    doc_id = record.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusFormatError(f"line {line_no}: missing or empty doc_id")
    text = record.get("text")
    if not isinstance(text, str) or not text:
        raise CorpusFormatError(f"line {line_no}: missing or empty text for doc {doc_id!r}")
    labels_raw = record.get("labels", {})
    if labels_raw is None:
        labels_raw = {}
    if not isinstance(labels_raw, dict):
        raise CorpusFormatError(f"line {line_no}: labels must be an object")
    labels: dict[str, str] = {}
    for claim_id, label in labels_raw.items():
        if label not in VALID_LABELS:
            raise CorpusFormatError(
                f"line {line_no}: label {label!r} for claim {claim_id!r} "
                f"not one of {VALID_LABELS}"
            )
        labels[str(claim_id)] = label
    return Document(doc_id=doc_id, text=text, labels=labels)


def load_corpus(path: str | Path) -> list[Document]:
    """Load a JSON-lines corpus file, preserving file order.

    Blank lines are ignored. Malformed lines and duplicate doc_ids are
    reported with their 1-based line number.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"corpus file not found: {path}")
    docs: list[Document] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            doc = _parse_document(record, line_no)
            if doc.doc_id in seen:
                raise CorpusFormatError(
                    f"line {line_no}: duplicate doc_id {doc.doc_id!r} "
                    f"(first seen on line {seen[doc.doc_id]})"
                )
            seen[doc.doc_id] = line_no
            docs.append(doc)
    return docs


def load_claims(path: str | Path) -> list[tuple[str, str]]:
    """Load a JSON-lines claims file: {"claim_id": str, "text": str} per line."""
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"claims file not found: {path}")
    claims: list[tuple[str, str]] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(f"line {line_no}: expected a JSON object")
            claim_id = record.get("claim_id")
            text = record.get("text")
            if not isinstance(claim_id, str) or not claim_id:
                raise CorpusFormatError(f"line {line_no}: missing or empty claim_id")
            if not isinstance(text, str) or not text:
                raise CorpusFormatError(f"line {line_no}: missing or empty text")
            if claim_id in seen:
                raise CorpusFormatError(f"line {line_no}: duplicate claim_id {claim_id!r}")
            seen.add(claim_id)
            claims.append((claim_id, text))
    return claims


def chunk_corpus(docs: list[Document], cfg: ChunkConfig) -> list[Chunk]:
    """Chunk every document, preserving document order."""
    chunks: list[Chunk] = []
    for doc in docs:
        chunks.extend(chunk_document(doc, cfg))
    return chunks


def save_chunks(chunks: list[Chunk], path: str | Path) -> None:
    """Write the chunk table as JSON-lines; tokens are recomputed on load."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for c in chunks:
            fh.write(
                json.dumps(
                    {"chunk_id": c.chunk_id, "doc_id": c.doc_id, "text": c.text},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_chunks(path: str | Path) -> list[Chunk]:
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError(f"chunk table not found: {path}")
    chunks: list[Chunk] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            try:
                chunk_id = record["chunk_id"]
                doc_id = record["doc_id"]
                text = record["text"]
            except (KeyError, TypeError) as exc:
                raise CorpusFormatError(f"line {line_no}: incomplete chunk record") from exc
            chunks.append(Chunk(chunk_id, doc_id, text, tuple(tokenize(text))))
    return chunks
