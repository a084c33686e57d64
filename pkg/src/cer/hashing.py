"""Stable 64-bit hashing for feature hashing, cache keys, and fingerprints.

Keyed BLAKE2b truncated to 8 bytes: deterministic across processes and
platforms (unlike Python's salted hash()), and the (key, person) parameters
give independent hash families from one primitive.
"""

from __future__ import annotations

import hashlib

MASK64 = 0xFFFFFFFFFFFFFFFF


def hash64(data: bytes, *, seed: int = 0, salt: bytes = b"") -> int:
    """Hash bytes to an unsigned 64-bit integer.

    seed selects a key (u64), salt selects an independent family (<= 16 bytes).
    """
    h = hashlib.blake2b(
        data,
        digest_size=8,
        key=(seed & MASK64).to_bytes(8, "little"),
        person=salt,
    )
    return int.from_bytes(h.digest(), "little")
