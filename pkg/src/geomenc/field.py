"""Rasterization and exact signed distance fields on square grids.

A binary grid is a boolean ``(R, R)`` array, row ``i`` and column ``j``
covering the cell centred at ``((j + 0.5) / R, (i + 0.5) / R)``.  Signed
fields are ``float64`` arrays of the same shape in domain units.
"""

from __future__ import annotations

import numpy as np

from ._jit import njit
from .geometry import Scene, scene_min_sdf


# "no source" marker; stays finite under the arithmetic that follows
NO_SOURCE = float(np.finfo(np.float64).max / 4)


class DegenerateFieldError(ValueError):
    """The grid is all empty or all occupied, so it has no boundary."""


def cell_centers(resolution: int) -> np.ndarray:
    """``(R, R, 2)`` array of ``(x, y)`` cell centres."""
    c = (np.arange(resolution) + 0.5) / resolution
    x, y = np.meshgrid(c, c)
    return np.stack([x, y], axis=-1)


def rasterize(scene: Scene, resolution: int) -> np.ndarray:
    if resolution < 8:
        raise ValueError(f"resolution must be at least 8, got {resolution}")
    return scene_min_sdf(cell_centers(resolution), scene) <= 0.0


@njit(cache=True)
def _lower_envelope(f, out, v, z):
    n = f.shape[0]
    k = -1
    for q in range(n):
        fq = f[q]
        if fq >= NO_SOURCE:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        while True:
            p = v[k]
            s = ((fq + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = NO_SOURCE
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        d = q - v[j]
        out[q] = d * d + f[v[j]]


@njit(cache=True)
def _edt_rows(f):
    rows, cols = f.shape
    out = np.empty_like(f)
    v = np.empty(cols, dtype=np.int64)
    z = np.empty(cols + 1, dtype=np.float64)
    for i in range(rows):
        _lower_envelope(f[i], out[i], v, z)
    return out


def edt_1d(f) -> np.ndarray:
    """Squared distance transform of a sampled function (lower envelope of parabolas).

    ``out[i] = min_j (i - j)**2 + f[j]``.  Entries that are ``inf`` or at least
    :data:`NO_SOURCE` are not sources; if there are none the result is all
    :data:`NO_SOURCE`.
    """
    f = np.minimum(np.asarray(f, dtype=np.float64), NO_SOURCE)
    return _edt_rows(f[None, :])[0]


def edt_2d(grid, target: bool = True) -> np.ndarray:
    """Euclidean distance, in pixels, from each cell to the nearest cell equal to ``target``.

    Cells with no such cell anywhere hold :data:`NO_SOURCE`.
    """
    grid = np.asarray(grid, dtype=bool)
    f = np.where(grid == bool(target), 0.0, NO_SOURCE)
    sq = _edt_rows(f)
    sq = np.ascontiguousarray(_edt_rows(np.ascontiguousarray(sq.T)).T)
    return np.where(sq >= NO_SOURCE, NO_SOURCE, np.sqrt(sq))


def signed_distance_field(grid, half_pixel_offset: bool = False) -> np.ndarray:
    """Signed distance, negative inside, from the difference of two distance transforms.

    With ``half_pixel_offset`` the zero level is moved half a cell outward from
    the occupied cell centres.
    """
    grid = np.asarray(grid, dtype=bool)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise ValueError(f"expected a square grid, got shape {grid.shape}")
    n_occupied = int(grid.sum())
    if n_occupied == 0 or n_occupied == grid.size:
        raise DegenerateFieldError(
            "grid is all empty" if n_occupied == 0 else "grid is all occupied")
    res = grid.shape[0]
    outside = edt_2d(grid, True)
    inside = edt_2d(grid, False)
    sdf = (outside - inside) / res
    if half_pixel_offset:
        sdf = sdf - np.where(grid, -0.5, 0.5) / res
    return sdf
