"""Named-tensor checkpoint files.

Layout, all integers little-endian::

    b"SDFW"  u16 version  u32 tensor_count
    per tensor:
        u16 name_length  name (UTF-8)  u8 rank  u32 dims[rank]  f32 data[prod(dims)]

Tensors are written in the order given, so equal inputs give equal bytes.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .._atomic import atomic_write_bytes

MAGIC = b"SDFW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"checkpoint truncated at byte {len(data)} (needed {pos + n})")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after {count} tensors")
    return out


def save_checkpoint(tensors: dict[str, np.ndarray], path) -> None:
    atomic_write_bytes(Path(path), encode_checkpoint(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


def tensor_digest(tensors: dict[str, np.ndarray]) -> str:
    return hashlib.sha256(encode_checkpoint(tensors)).hexdigest()
