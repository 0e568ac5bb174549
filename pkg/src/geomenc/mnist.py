"""MNIST IDX reader and the glyph-to-sample adapter."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dataset import DatasetFormatError, Sample
from .field import DegenerateFieldError, signed_distance_field

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(DatasetFormatError):
    pass


def _header(data: bytes, magic: int, ndim: int) -> tuple[int, ...]:
    size = 4 * (ndim + 1)
    if len(data) < size:
        raise IdxFormatError(f"IDX header truncated: {len(data)} of {size} bytes")
    found, *dims = struct.unpack(f">{ndim + 1}I", data[:size])
    if found != magic:
        raise IdxFormatError(f"bad IDX magic 0x{found:08x}; expected 0x{magic:08x}")
    return tuple(dims)


def decode_idx_images(data: bytes) -> np.ndarray:
    count, rows, cols = _header(data, IMAGE_MAGIC, 3)
    need = count * rows * cols
    if len(data) - 16 != need:
        raise IdxFormatError(
            f"header promises {count} images of {rows}x{cols} ({need} bytes), payload has {len(data) - 16}")
    return np.frombuffer(data, np.uint8, need, 16).reshape(count, rows, cols)


def decode_idx_labels(data: bytes) -> np.ndarray:
    (count,) = _header(data, LABEL_MAGIC, 1)
    if len(data) - 8 != count:
        raise IdxFormatError(f"header promises {count} labels, payload has {len(data) - 8}")
    return np.frombuffer(data, np.uint8, count, 8)


def read_idx_images(path) -> np.ndarray:
    return decode_idx_images(Path(path).read_bytes())


def read_idx_labels(path) -> np.ndarray:
    return decode_idx_labels(Path(path).read_bytes())


def encode_idx_images(images: np.ndarray) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    n, r, c = images.shape
    return struct.pack(">4I", IMAGE_MAGIC, n, r, c) + images.tobytes()


def glyph_to_grid(image: np.ndarray, threshold: float = 0.5, resolution: int = 128) -> np.ndarray:
    """Threshold a grey glyph and centre it on an ``R x R`` canvas.

    The glyph is enlarged by the largest integer factor that leaves a margin
    of ``R / 16`` on each side (28 -> 112 at R = 128).
    """
    image = np.asarray(image)
    rows, cols = image.shape
    factor = (resolution - 2 * (resolution // 16)) // max(rows, cols)
    if factor < 1:
        raise DatasetFormatError(f"{rows}x{cols} glyph does not fit a {resolution}x{resolution} canvas")
    occupied = image.astype(np.float64) >= threshold * 255.0
    big = np.repeat(np.repeat(occupied, factor, axis=0), factor, axis=1)
    canvas = np.zeros((resolution, resolution), dtype=bool)
    top = (resolution - rows * factor) // 2
    left = (resolution - cols * factor) // 2
    canvas[top:top + big.shape[0], left:left + big.shape[1]] = big
    return canvas


def mnist_to_samples(idx_images_path, threshold: float = 0.5, resolution: int = 128,
                     limit: int | None = None) -> tuple[list[Sample], int]:
    """Samples for every glyph with a boundary, and the number of degenerate glyphs skipped."""
    images = read_idx_images(idx_images_path)
    if limit is not None:
        images = images[:limit]
    name = Path(idx_images_path).name
    samples, skipped = [], 0
    for i, img in enumerate(images):
        grid = glyph_to_grid(img, threshold, resolution)
        try:
            sdf = signed_distance_field(grid)
        except DegenerateFieldError:
            skipped += 1
            continue
        samples.append(Sample(grid, sdf.astype(np.float32), ("external", f"{name}:{i}")))
    return samples, skipped
