"""Sample pairs (binary image, signed field): generation, file format, splits.

Dataset files ("SDFD", little-endian)::

    b"SDFD"  u16 version=1  u32 count  u32 resolution
    per sample:
        occupancy, row-major, one bit per cell (MSB first), each row padded to a whole byte
        resolution**2 f32 signed distances, row-major

Loading re-checks that every field is negative exactly on occupied cells.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._atomic import atomic_write_bytes, atomic_write_text
from .field import DegenerateFieldError, rasterize, signed_distance_field
from .geometry import AugmentationConfig, sample_scene, scene_seed

log = logging.getLogger(__name__)

MAGIC = b"SDFD"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


class DatasetFormatError(ValueError):
    """Base class for unreadable dataset files."""


class BadMagicError(DatasetFormatError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    def __init__(self, msg, offset: int):
        super().__init__(msg)
        self.offset = offset


class DimensionMismatchError(DatasetFormatError):
    pass


class SignConsistencyError(DatasetFormatError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass
class Sample:
    image: np.ndarray          # (R, R) bool
    sdf: np.ndarray            # (R, R) float32, domain units
    provenance: tuple = ("external", "")   # ("synthetic", seed) or ("external", source id)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=bool)
        self.sdf = np.asarray(self.sdf, dtype=np.float32)
        if self.image.shape != self.sdf.shape:
            raise DimensionMismatchError(f"image {self.image.shape} and sdf {self.sdf.shape} differ")

    def sign_consistent(self) -> bool:
        return bool(np.array_equal(self.sdf < 0, self.image))


@dataclass
class DatasetManifest:
    resolution: int
    count: int
    master_seed: int | None = None
    augmentation: dict = field(default_factory=dict)
    validation_count: int = 0
    retries: int = 0

    def __post_init__(self):
        if not 0 <= self.validation_count < max(self.count, 1):
            raise ValueError(f"validation count {self.validation_count} must be below sample count {self.count}")

    @property
    def train_range(self) -> range:
        return range(0, self.count - self.validation_count)

    @property
    def validation_range(self) -> range:
        return range(self.count - self.validation_count, self.count)

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["train"] = [self.train_range.start, self.train_range.stop]
        d["validation"] = [self.validation_range.start, self.validation_range.stop]
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        d.pop("train", None)
        d.pop("validation", None)
        return cls(**d)


def split(manifest_or_count, validation_count: int) -> tuple[range, range]:
    """Last ``validation_count`` indices are validation, the rest training."""
    count = manifest_or_count.count if isinstance(manifest_or_count, DatasetManifest) else int(manifest_or_count)
    if validation_count < 0 or validation_count >= count:
        raise ValueError(f"validation count {validation_count} leaves nothing to train on (count {count})")
    return range(0, count - validation_count), range(count - validation_count, count)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_sample(master_seed: int, index: int, resolution: int,
                    config: AugmentationConfig, max_attempts: int = 100) -> tuple[Sample, int]:
    """Sample ``index`` of a synthetic dataset, plus the number of degenerate retries."""
    for attempt in range(max_attempts):
        seed = scene_seed(master_seed, index, attempt)
        grid = rasterize(sample_scene(seed, config), resolution)
        try:
            sdf = signed_distance_field(grid)
        except DegenerateFieldError:
            continue
        return Sample(grid, sdf.astype(np.float32), ("synthetic", seed)), attempt
    raise GenerationError(f"sample {index}: no non-degenerate scene after {max_attempts} attempts")


def generate_samples(count: int, resolution: int, master_seed: int,
                     config: AugmentationConfig | None = None) -> tuple[list[Sample], int]:
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    config = config or AugmentationConfig()
    samples, retries = [], 0
    for i in range(count):
        s, r = generate_sample(master_seed, i, resolution, config)
        samples.append(s)
        retries += r
    return samples, retries


def generate_dataset(count: int, resolution: int, master_seed: int, path,
                     config: AugmentationConfig | None = None, validation_count: int = 0) -> DatasetManifest:
    """Generate and write a synthetic dataset plus its ``<path>.manifest.json``."""
    config = config or AugmentationConfig()
    samples, retries = generate_samples(count, resolution, master_seed, config)
    manifest = DatasetManifest(resolution, count, master_seed, config.to_dict(), validation_count, retries)
    save_dataset(samples, path)
    atomic_write_text(manifest_path(path), manifest.to_json())
    return manifest


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def encode_dataset(samples) -> bytes:
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to write")
    res = samples[0].image.shape[0]
    parts = [_HEADER.pack(MAGIC, VERSION, len(samples), res)]
    for i, s in enumerate(samples):
        if s.image.shape != (res, res):
            raise DimensionMismatchError(f"sample {i} is {s.image.shape}, expected {(res, res)}")
        parts.append(np.packbits(s.image, axis=1).tobytes())
        parts.append(s.sdf.astype("<f4").tobytes())
    return b"".join(parts)


def decode_dataset(data: bytes, source: str = "", validate: bool = True) -> list[Sample]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}; expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFileError(f"header truncated at byte {len(data)}", len(data))
    _, version, count, res = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"dataset version {version}; expected {VERSION}")
    if res < 1:
        raise DimensionMismatchError(f"resolution {res} in header")
    row_bytes = (res + 7) // 8
    bits_size = row_bytes * res
    sample_size = bits_size + 4 * res * res
    expected = _HEADER.size + count * sample_size
    if len(data) < expected:
        k = (len(data) - _HEADER.size) // sample_size
        raise TruncatedFileError(
            f"file ends at byte {len(data)} inside sample {k} of {count}; expected {expected} bytes",
            len(data))
    if len(data) > expected:
        raise DimensionMismatchError(
            f"{len(data) - expected} bytes beyond {count} samples at resolution {res}")
    out = []
    pos = _HEADER.size
    for i in range(count):
        bits = np.frombuffer(data, np.uint8, bits_size, pos).reshape(res, row_bytes)
        image = np.unpackbits(bits, axis=1, count=res).astype(bool)
        pos += bits_size
        sdf = np.frombuffer(data, "<f4", res * res, pos).reshape(res, res).astype(np.float32)
        pos += 4 * res * res
        s = Sample(image, sdf, ("external", f"{source}:{i}"))
        if validate and not s.sign_consistent():
            raise SignConsistencyError(f"sample {i}: field sign disagrees with occupancy")
        out.append(s)
    return out


def save_dataset(samples, path) -> None:
    atomic_write_bytes(Path(path), encode_dataset(samples))


def load_dataset(path, validate: bool = True) -> list[Sample]:
    path = Path(path)
    return decode_dataset(path.read_bytes(), path.name, validate)


def load_manifest(path) -> DatasetManifest | None:
    mp = manifest_path(path)
    return DatasetManifest.from_json(mp.read_text()) if mp.exists() else None


def stack(samples) -> tuple[np.ndarray, np.ndarray]:
    """``(images, sdfs)`` as ``(N, R, R)`` float32 arrays."""
    return (np.stack([s.image for s in samples]).astype(np.float32),
            np.stack([s.sdf for s in samples]).astype(np.float32))
