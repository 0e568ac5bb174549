"""Analytic signed distance functions for 2-D primitives and random scenes.

Points are arrays of shape ``(..., 2)`` holding ``(x, y)`` in the unit
domain ``[0, 1]^2``; every SDF returns an array of shape ``(...,)``.
Values are negative inside a shape and positive outside, in units of the
domain side length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np


class GeometryError(ValueError):
    """Invalid primitive, placement or scene."""


def _as_points(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 2:
        raise GeometryError(f"points must have trailing dimension 2, got shape {p.shape}")
    return p


# ---------------------------------------------------------------------------
# primitive SDFs
# ---------------------------------------------------------------------------

def sdf_circle(p, center, r: float) -> np.ndarray:
    p = _as_points(p)
    return np.linalg.norm(p - np.asarray(center, dtype=np.float64), axis=-1) - r


def sdf_rectangle(p, center, half_extents) -> np.ndarray:
    p = _as_points(p)
    d = np.abs(p - np.asarray(center, dtype=np.float64)) - np.asarray(half_extents, dtype=np.float64)
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return outside + inside


def _check_polygon(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2:
        raise GeometryError(f"polygon vertices must have shape (n, 2), got {v.shape}")
    if len(v) < 3:
        raise GeometryError(f"polygon needs at least 3 vertices, got {len(v)}")
    nxt = np.roll(v, -1, axis=0)
    if np.any(np.all(v == nxt, axis=1)):
        raise GeometryError("polygon has repeated consecutive vertices")
    return v


def polygon_contains(p, vertices) -> np.ndarray:
    """Even-odd crossing test with half-open edges (upper endpoint excluded)."""
    p = _as_points(p)
    v = np.asarray(vertices, dtype=np.float64)
    px, py = p[..., 0], p[..., 1]
    inside = np.zeros(p.shape[:-1], dtype=bool)
    n = len(v)
    for k in range(n):
        ax, ay = v[k]
        bx, by = v[(k + 1) % n]
        crosses = (ay > py) != (by > py)
        if not np.any(crosses):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (px < x_cross)
    return inside


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    ap = p - a
    t = np.clip((ap @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(ap - t[..., None] * ab, axis=-1)


def sdf_polygon(p, vertices) -> np.ndarray:
    v = _check_polygon(vertices)
    p = _as_points(p)
    d = np.full(p.shape[:-1], np.inf)
    for k in range(len(v)):
        d = np.minimum(d, _segment_distance(p, v[k], v[(k + 1) % len(v)]))
    return np.where(polygon_contains(p, v), -d, d)


# ---------------------------------------------------------------------------
# primitive and placement types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"circle radius must be positive, got {self.radius}")

    def sdf(self, p) -> np.ndarray:
        return sdf_circle(p, self.center, self.radius)

    def contains(self, p) -> np.ndarray:
        p = _as_points(p)
        return np.sum((p - np.asarray(self.center)) ** 2, axis=-1) < self.radius ** 2

    def bounding_radius(self) -> float:
        return self.radius

    def boundary_points(self, n: int) -> np.ndarray:
        t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return np.asarray(self.center) + self.radius * np.stack([np.cos(t), np.sin(t)], axis=-1)


@dataclass(frozen=True)
class Rectangle:
    center: tuple[float, float]
    half_extents: tuple[float, float]

    def __post_init__(self):
        if not all(h > 0 for h in self.half_extents):
            raise GeometryError(f"half extents must be positive, got {self.half_extents}")

    def sdf(self, p) -> np.ndarray:
        return sdf_rectangle(p, self.center, self.half_extents)

    def contains(self, p) -> np.ndarray:
        p = _as_points(p)
        return np.all(np.abs(p - np.asarray(self.center)) < np.asarray(self.half_extents), axis=-1)

    def bounding_radius(self) -> float:
        return math.hypot(*self.half_extents)

    def corners(self) -> np.ndarray:
        cx, cy = self.center
        hx, hy = self.half_extents
        return np.array([[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]])

    def boundary_points(self, n: int) -> np.ndarray:
        return _perimeter_points(self.corners(), n)


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        v = _check_polygon(self.vertices)
        x, y = v[:, 0], v[:, 1]
        area = 0.5 * (x @ np.roll(y, -1) - y @ np.roll(x, -1))
        if abs(area) < 1e-15:
            raise GeometryError("polygon has zero area")
        if not _is_simple(v):
            raise GeometryError("polygon is self-intersecting")
        object.__setattr__(self, "vertices", tuple(tuple(map(float, q)) for q in v))

    def sdf(self, p) -> np.ndarray:
        return sdf_polygon(p, self.vertices)

    def contains(self, p) -> np.ndarray:
        return polygon_contains(p, self.vertices)

    def bounding_radius(self) -> float:
        return float(np.max(np.linalg.norm(np.asarray(self.vertices), axis=1)))

    def boundary_points(self, n: int) -> np.ndarray:
        return _perimeter_points(np.asarray(self.vertices), n)


Primitive = Union[Circle, Rectangle, Polygon]


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_intersect(a, b, c, d) -> bool:
    d1, d2 = _orient(c, d, a), _orient(c, d, b)
    d3, d4 = _orient(a, b, c), _orient(a, b, d)
    if d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_segment(p, q, r):
        return (min(p[0], q[0]) <= r[0] <= max(p[0], q[0])
                and min(p[1], q[1]) <= r[1] <= max(p[1], q[1]))

    return ((d1 == 0 and on_segment(c, d, a)) or (d2 == 0 and on_segment(c, d, b))
            or (d3 == 0 and on_segment(a, b, c)) or (d4 == 0 and on_segment(a, b, d)))


def _is_simple(v: np.ndarray) -> bool:
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(a, b, v[j], v[(j + 1) % n]):
                return False
    return True


def _perimeter_points(v: np.ndarray, n: int) -> np.ndarray:
    """``n`` points spaced evenly by arc length along a closed polyline."""
    edges = np.roll(v, -1, axis=0) - v
    lengths = np.linalg.norm(edges, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = np.linspace(0.0, cum[-1], n, endpoint=False)
    k = np.searchsorted(cum, s, side="right") - 1
    t = (s - cum[k]) / lengths[k]
    return v[k] + t[:, None] * edges[k]


@dataclass(frozen=True)
class Placement:
    """Uniform scale, then rotation about the origin, then translation."""

    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise GeometryError(f"placement scale must be positive, got {self.scale}")

    def inverse(self, p) -> np.ndarray:
        """Map world points back into the primitive's local frame."""
        p = _as_points(p) - np.asarray(self.translation, dtype=np.float64)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        # rotate by -rotation
        x = c * p[..., 0] + s * p[..., 1]
        y = -s * p[..., 0] + c * p[..., 1]
        return np.stack([x, y], axis=-1) / self.scale

    def apply(self, p) -> np.ndarray:
        p = _as_points(p) * self.scale
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        x = c * p[..., 0] - s * p[..., 1]
        y = s * p[..., 0] + c * p[..., 1]
        return np.stack([x, y], axis=-1) + np.asarray(self.translation, dtype=np.float64)


IDENTITY = Placement()


def sdf_placed(p, prim: Primitive, pl: Placement) -> np.ndarray:
    return pl.scale * prim.sdf(pl.inverse(p))


@dataclass(frozen=True)
class Scene:
    items: tuple[tuple[Primitive, Placement], ...]

    def __post_init__(self):
        if not 1 <= len(self.items) <= 3:
            raise GeometryError(f"a scene holds 1 to 3 shapes, got {len(self.items)}")
        object.__setattr__(self, "items", tuple(self.items))

    def contains(self, p) -> np.ndarray:
        """Union membership using each primitive's own inside test."""
        p = _as_points(p)
        out = np.zeros(p.shape[:-1], dtype=bool)
        for prim, pl in self.items:
            out |= prim.contains(pl.inverse(p))
        return out


def scene_min_sdf(p, scene: Scene) -> np.ndarray:
    """Pointwise min over the scene's shapes.

    The sign is exact for the union; inside overlaps the magnitude is only a
    bound, so this is not a ground-truth field.
    """
    if not scene.items:
        raise GeometryError("empty scene")
    return np.min(np.stack([sdf_placed(p, prim, pl) for prim, pl in scene.items]), axis=0)


# ---------------------------------------------------------------------------
# random scenes
# ---------------------------------------------------------------------------

SHAPE_KINDS = ("circle", "rectangle", "triangle", "polygon")


@dataclass(frozen=True)
class AugmentationConfig:
    kinds: tuple[str, ...] = SHAPE_KINDS
    counts: tuple[int, ...] = (1, 2, 3)
    rotation: tuple[float, float] = (0.0, 2 * math.pi)
    scale: tuple[float, float] = (0.5, 1.5)
    # bounding radius of the unscaled base shape; 0.05-0.15 is a 0.1-0.3 diameter
    base_radius: tuple[float, float] = (0.05, 0.15)
    margin: float = 0.05
    polygon_vertices: tuple[int, int] = (3, 8)
    max_retries: int = 32

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        bad = set(self.kinds) - set(SHAPE_KINDS)
        if not self.kinds or bad:
            raise GeometryError(f"unknown shape kinds {sorted(bad)}; choose from {SHAPE_KINDS}")
        if not self.counts or any(c not in (1, 2, 3) for c in self.counts):
            raise GeometryError(f"shape counts must be drawn from {{1, 2, 3}}, got {self.counts}")
        lo, hi = self.scale
        if not 0 < lo <= hi:
            raise GeometryError(f"invalid scale range {self.scale}")
        lo, hi = self.base_radius
        if not 0 < lo <= hi:
            raise GeometryError(f"invalid base radius range {self.base_radius}")
        if not 0 <= self.margin < 0.5:
            raise GeometryError(f"margin must lie in [0, 0.5), got {self.margin}")
        lo, hi = self.polygon_vertices
        if not 3 <= lo <= hi:
            raise GeometryError(f"invalid polygon vertex range {self.polygon_vertices}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _star_polygon(rng: np.random.Generator, n: int, radius: float) -> Polygon:
    # jittered angles keep a minimum gap, so sorted vertices form a simple star-shaped polygon
    base = np.arange(n) * (2 * np.pi / n)
    angles = base + rng.uniform(-0.35, 0.35, n) * (2 * np.pi / n) + rng.uniform(0, 2 * np.pi)
    radii = radius * rng.uniform(0.6, 1.0, n)
    radii[rng.integers(n)] = radius
    angles = np.sort(np.mod(angles, 2 * np.pi))
    return Polygon(tuple(map(tuple, np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1))))


def _base_shape(rng: np.random.Generator, kind: str, radius: float, cfg: AugmentationConfig) -> Primitive:
    if kind == "circle":
        return Circle((0.0, 0.0), radius)
    if kind == "rectangle":
        a = rng.uniform(math.pi / 10, 4 * math.pi / 10)
        return Rectangle((0.0, 0.0), (radius * math.cos(a), radius * math.sin(a)))
    if kind == "triangle":
        return _star_polygon(rng, 3, radius)
    lo, hi = cfg.polygon_vertices
    return _star_polygon(rng, int(rng.integers(lo, hi + 1)), radius)


def sample_scene(rng_seed, config: AugmentationConfig | None = None) -> Scene:
    """Draw a random scene of 1-3 placed primitives, deterministic in ``rng_seed``.

    Every shape's bounding disk ends up inside ``[margin, 1 - margin]^2``.
    """
    cfg = config or AugmentationConfig()
    rng = np.random.default_rng(rng_seed)
    lo, hi = cfg.margin, 1.0 - cfg.margin
    half_span = (hi - lo) / 2
    count = int(rng.choice(cfg.counts))
    items = []
    for _ in range(count):
        kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
        base = _base_shape(rng, kind, rng.uniform(*cfg.base_radius), cfg)
        rb = base.bounding_radius()
        rotation = rng.uniform(*cfg.rotation)
        for _attempt in range(cfg.max_retries):
            scale = rng.uniform(*cfg.scale)
            if scale * rb <= half_span:
                break
        else:
            scale = half_span / rb
        r = scale * rb
        translation = tuple(rng.uniform(lo + r, hi - r, 2))
        items.append((base, Placement(rotation, translation, scale)))
    return Scene(tuple(items))


def scene_seed(master_seed: int, index: int, attempt: int = 0) -> int:
    """Independent per-sample seed derived from the master seed."""
    return int(np.random.SeedSequence([master_seed, index, attempt]).generate_state(1, np.uint64)[0])
