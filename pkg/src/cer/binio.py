"""Little-endian binary read/write helpers for the on-disk artifact formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

from .errors import PersistenceError


def read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise PersistenceError(f"truncated file: expected {n} bytes for {what}, got {len(data)}")
    return data


def read_u32(fh: BinaryIO, what: str) -> int:
    return struct.unpack("<I", read_exact(fh, 4, what))[0]


def read_u64(fh: BinaryIO, what: str) -> int:
    return struct.unpack("<Q", read_exact(fh, 8, what))[0]


def read_u8(fh: BinaryIO, what: str) -> int:
    return read_exact(fh, 1, what)[0]


def pack_u32(value: int) -> bytes:
    return struct.pack("<I", value)


def pack_u64(value: int) -> bytes:
    return struct.pack("<Q", value)


def pack_u8(value: int) -> bytes:
    return struct.pack("<B", value)
