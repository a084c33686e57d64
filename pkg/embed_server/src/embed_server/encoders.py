"""Encoder backends producing aligned (tokens, per-token vectors) per text.

Both backends are deterministic for a fixed configuration: callers cache
responses keyed on the request text, so two calls with the same text must
return bit-equal vectors. The hf backend pins eval mode, float32, and
no-grad inference; the hash backend is pure arithmetic.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np

from .config import ServerConfig


class Encoder(Protocol):
    model_name: str
    dim: int

    def encode(self, texts: Sequence[str]) -> list[tuple[list[str], np.ndarray]]:
        """Per text: (tokens, float32 matrix with one row per token)."""
        ...


class HashEncoder:
    """Offline fallback: alphanumeric-run tokens, hashed unit vectors.

    Each token hashes to a seeded pseudo-random direction on the unit
    sphere; no model download required. Useful for protocol tests and
    air-gapped deployments.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        self.model_name = f"hash-{dim}-{seed}"
        self.dim = dim
        self._seed = seed

    @staticmethod
    def _tokenize(text: str) -> list[str]:
        tokens: list[str] = []
        run: list[str] = []
        for ch in text:
            if ch.isalnum():
                run.append(ch)
            elif run:
                tokens.append("".join(run))
                run = []
        if run:
            tokens.append("".join(run))
        return tokens

    def _vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(
            token.casefold().encode("utf-8"),
            digest_size=8,
            key=self._seed.to_bytes(8, "little"),
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        vec = rng.standard_normal(self.dim)
        return (vec / np.linalg.norm(vec)).astype(np.float32)

    def encode(self, texts: Sequence[str]) -> list[tuple[list[str], np.ndarray]]:
        out = []
        for text in texts:
            tokens = self._tokenize(text)
            if tokens:
                matrix = np.stack([self._vector(t) for t in tokens])
            else:
                matrix = np.zeros((0, self.dim), dtype=np.float32)
            out.append((tokens, matrix))
        return out


class HFEncoder:
    """Pretrained contextual encoder via transformers (e.g. a Contriever
    checkpoint): per-token last hidden states with special tokens dropped."""

    def __init__(self, model_name: str):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.model_name = model_name
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name, torch_dtype=torch.float32)
        self.model.eval()  # no dropout: responses must be cache-coherent
        self.dim = int(self.model.config.hidden_size)
        self._special_ids = set(self.tokenizer.all_special_ids)

    def encode(self, texts: Sequence[str]) -> list[tuple[list[str], np.ndarray]]:
        if not texts:
            return []
        torch = self._torch
        batch = self.tokenizer(
            list(texts), padding=True, truncation=True, return_tensors="pt"
        )
        with torch.no_grad():
            hidden = self.model(**batch).last_hidden_state  # (B, L, D)
        out = []
        for i in range(len(texts)):
            ids = batch["input_ids"][i]
            mask = batch["attention_mask"][i].bool()
            keep = [
                j
                for j in range(len(ids))
                if mask[j] and int(ids[j]) not in self._special_ids
            ]
            tokens = self.tokenizer.convert_ids_to_tokens([int(ids[j]) for j in keep])
            matrix = hidden[i, keep].to(torch.float32).cpu().numpy()
            if matrix.size == 0:
                matrix = np.zeros((0, self.dim), dtype=np.float32)
            out.append((list(tokens), matrix.astype(np.float32)))
        return out


def make_encoder(cfg: ServerConfig) -> Encoder:
    cfg.validate()
    if cfg.backend == "hash":
        return HashEncoder(dim=cfg.hash_dim, seed=cfg.hash_seed)
    return HFEncoder(cfg.model)
