"""Parameter-free bilinear read-out of a signed distance grid at continuous points.

Grid values sit at cell centres ``((j + 0.5) / W, (i + 0.5) / H)``.  Points
outside the lattice of centres are clamped to it (constant extrapolation)
unless ``clamp=False``, in which case points outside ``[0, 1]^2`` raise.
Derivatives on cell boundaries are taken from the right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class OutOfDomainError(ValueError):
    pass


@dataclass
class _Stencil:
    i0: np.ndarray
    j0: np.ndarray
    ty: np.ndarray
    tx: np.ndarray
    inside_x: np.ndarray   # right-derivative along x is nonzero
    inside_y: np.ndarray


def _snap(u: np.ndarray) -> np.ndarray:
    # cell-centre queries land a rounding error away from the lattice; put them back on it
    r = np.rint(u)
    return np.where(np.abs(u - r) < 1e-12 * np.maximum(1.0, np.abs(u)), r, u)


def _stencil(shape, points, clamp: bool) -> _Stencil:
    h, w = shape
    if h < 2 or w < 2:
        raise ValueError(f"grid must be at least 2x2, got {shape}")
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(p)):
        raise ValueError("query points must be finite")
    if not clamp and (np.any(p < 0) or np.any(p > 1)):
        bad = np.flatnonzero(np.any((p < 0) | (p > 1), axis=1))[0]
        raise OutOfDomainError(f"point {bad} at {tuple(p[bad])} lies outside [0, 1]^2")
    u = _snap(p[:, 0] * w - 0.5)
    v = _snap(p[:, 1] * h - 0.5)
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    j0 = np.minimum(np.floor(uc).astype(np.int64), w - 2)
    i0 = np.minimum(np.floor(vc).astype(np.int64), h - 2)
    return _Stencil(i0, j0, vc - i0, uc - j0, (u >= 0) & (u < w - 1), (v >= 0) & (v < h - 1))


def _corners(grid, st: _Stencil):
    g = np.asarray(grid, dtype=np.float64)
    return (g[st.i0, st.j0], g[st.i0, st.j0 + 1], g[st.i0 + 1, st.j0], g[st.i0 + 1, st.j0 + 1])


def eval_points(grid, points, clamp: bool = True) -> np.ndarray:
    """Bilinear values at ``points`` of shape ``(N, 2)`` holding ``(x, y)``."""
    st = _stencil(np.shape(grid), points, clamp)
    g00, g01, g10, g11 = _corners(grid, st)
    top = (1 - st.tx) * g00 + st.tx * g01
    bottom = (1 - st.tx) * g10 + st.tx * g11
    return (1 - st.ty) * top + st.ty * bottom


def eval_grad_points(grid, points, clamp: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``(d value / dx, d value / dy)`` of the bilinear surface at each point."""
    h, w = np.shape(grid)
    st = _stencil((h, w), points, clamp)
    g00, g01, g10, g11 = _corners(grid, st)
    du = (1 - st.ty) * (g01 - g00) + st.ty * (g11 - g10)
    dv = (1 - st.tx) * (g10 - g00) + st.tx * (g11 - g01)
    return np.where(st.inside_x, du * w, 0.0), np.where(st.inside_y, dv * h, 0.0)


def eval_backward_grid(shape, points, cotangents, clamp: bool = True) -> np.ndarray:
    """Gradient of ``sum(cotangents * eval_points(grid, points))`` with respect to every grid cell.

    Accumulation runs in point order, so results do not depend on batching.
    """
    shape = tuple(shape)
    st = _stencil(shape, points, clamp)
    c = np.asarray(cotangents, dtype=np.float64).reshape(-1)
    if c.shape[0] != st.i0.shape[0]:
        raise ValueError(f"{c.shape[0]} cotangents for {st.i0.shape[0]} points")
    out = np.zeros(shape, dtype=np.float64)
    np.add.at(out, (st.i0, st.j0), c * (1 - st.ty) * (1 - st.tx))
    np.add.at(out, (st.i0, st.j0 + 1), c * (1 - st.ty) * st.tx)
    np.add.at(out, (st.i0 + 1, st.j0), c * st.ty * (1 - st.tx))
    np.add.at(out, (st.i0 + 1, st.j0 + 1), c * st.ty * st.tx)
    return out
