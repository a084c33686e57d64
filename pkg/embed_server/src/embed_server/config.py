from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ServerConfig:
    model: str = "facebook/contriever"
    backend: str = "hf"  # "hf" (transformers encoder) | "hash" (offline fallback)
    host: str = "127.0.0.1"
    port: int = 8901
    max_batch: int = 64
    max_text_bytes: int = 65536
    hash_dim: int = 64  # hash backend only
    hash_seed: int = 0  # hash backend only

    def validate(self) -> None:
        if self.backend not in ("hf", "hash"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.max_batch < 1:
            raise ValueError(f"max_batch must be >= 1, got {self.max_batch}")
        if self.max_text_bytes < 1:
            raise ValueError(f"max_text_bytes must be >= 1, got {self.max_text_bytes}")
        if self.hash_dim < 2:
            raise ValueError(f"hash_dim must be >= 2, got {self.hash_dim}")
