"""Binary PGM (P5) images: occupancy grids and fields mapped to grey levels.

Occupancy exports as 0 (empty) / 255 (occupied).  Fields are mapped linearly
from their own ``[min, max]`` onto ``[0, 255]``; that export is for viewing
only and does not round-trip.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from ._atomic import atomic_write_bytes


class PgmFormatError(ValueError):
    pass


def encode_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError(f"expected a 2-d uint8 array, got {pixels.dtype} {pixels.shape}")
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pgm(data: bytes) -> np.ndarray:
    if data[:2] != b"P5":
        raise PgmFormatError(f"byte 0: expected magic b'P5', found {data[:2]!r}")
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PgmFormatError(f"byte {pos}: missing {name}")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise PgmFormatError(f"byte {m.start(1)}: {name} is not an integer: {m.group(1)[:16]!r}") from None
        pos = m.end()
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise PgmFormatError(f"invalid image size {w}x{h}")
    if not 0 < maxval < 256:
        raise PgmFormatError(f"maxval {maxval} unsupported; only 8-bit images are read")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PgmFormatError(f"byte {pos}: expected one whitespace byte before the raster")
    pos += 1
    need = w * h
    if len(data) - pos < need:
        raise PgmFormatError(f"byte {len(data)}: raster truncated, {len(data) - pos} of {need} bytes present")
    return np.frombuffer(data, np.uint8, need, pos).reshape(h, w).copy()


def write_pgm(path, pixels: np.ndarray) -> None:
    atomic_write_bytes(Path(path), encode_pgm(pixels))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def grid_to_pixels(grid) -> np.ndarray:
    return np.where(np.asarray(grid, dtype=bool), 255, 0).astype(np.uint8)


def field_to_pixels(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.rint((v - lo) / (hi - lo) * 255.0).astype(np.uint8)


def read_binary_grid(path, threshold: int = 128) -> np.ndarray:
    """Occupancy from a PGM: pixels at or above ``threshold`` are occupied."""
    return read_pgm(path) >= threshold
