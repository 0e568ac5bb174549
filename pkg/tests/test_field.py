import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from geomenc.field import (
    NO_SOURCE, DegenerateFieldError, cell_centers, edt_1d, edt_2d, rasterize, signed_distance_field,
)
from geomenc.geometry import IDENTITY, Circle, Scene


def brute_sdf(grid):
    """Nearest opposite-cell scan; the oracle for the two-transform construction."""
    r = grid.shape[0]
    ii, jj = np.indices(grid.shape)
    coords = np.stack([ii.ravel(), jj.ravel()], 1).astype(float)
    flat = grid.ravel()
    d = np.sqrt(((coords[:, None] - coords[None]) ** 2).sum(-1))
    to_occ = np.where(flat[None, :], d, np.inf).min(1)
    to_empty = np.where(~flat[None, :], d, np.inf).min(1)
    return ((to_occ - to_empty) / r).reshape(grid.shape)


def circle_scene(c, r):
    return Scene(((Circle(c, r), IDENTITY),))


def test_cell_centers():
    c = cell_centers(4)
    assert c.shape == (4, 4, 2)
    assert tuple(c[0, 0]) == (0.125, 0.125)
    assert tuple(c[1, 3]) == (0.875, 0.375)    # (x, y) from (column, row)


def test_rasterize_cases():
    assert rasterize(circle_scene((0.5, 0.5), 2.0), 32).all()
    # tiny circle centred on a cell corner misses every centre
    assert not rasterize(circle_scene((0.5, 0.5), 0.2 / 32), 32).any()
    n = int(rasterize(circle_scene((0.5, 0.5), 0.25), 128).sum())
    assert abs(n - math.pi * 32 ** 2) <= 2 * math.pi * 0.25 * 128
    with pytest.raises(ValueError):
        rasterize(circle_scene((0.5, 0.5), 0.2), 4)


def test_edt_1d_examples():
    np.testing.assert_array_equal(edt_1d([0, np.inf, np.inf, np.inf]), [0, 1, 4, 9])
    np.testing.assert_array_equal(edt_1d(np.zeros(6)), np.zeros(6))
    assert np.all(edt_1d([np.inf] * 5) == NO_SOURCE)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 32, elements=st.one_of(st.floats(0, 50), st.just(np.inf))))
def test_edt_1d_matches_double_loop(f):
    out = edt_1d(f)
    q = np.arange(32.0)
    ref = np.min((q[:, None] - q[None, :]) ** 2 + np.minimum(f, NO_SOURCE)[None, :], axis=1)
    ref = np.where(np.isinf(f).all(), NO_SOURCE, ref)
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_edt_2d_examples():
    g = np.zeros((5, 5), bool)
    g[2, 2] = True
    d = edt_2d(g, True)
    assert d[0, 2] == 2.0
    assert d[4, 4] == pytest.approx(math.sqrt(8), abs=1e-15)
    np.testing.assert_array_equal(edt_2d(np.ones((5, 5), bool), True), 0)
    assert np.all(edt_2d(np.zeros((5, 5), bool), True) == NO_SOURCE)


def test_single_pixel_value():
    g = np.zeros((5, 5), bool)
    g[2, 2] = True
    assert signed_distance_field(g)[2, 2] == pytest.approx(-1 / 5)


def test_half_plane_ramp():
    g = np.zeros((128, 128), bool)
    g[:, :64] = True
    sdf = signed_distance_field(g)
    assert sdf[5, 63] == pytest.approx(-1 / 128)
    assert sdf[5, 64] == pytest.approx(1 / 128)
    cols = np.arange(128)
    ramp = np.where(cols < 64, cols - 64, cols - 63) / 128
    np.testing.assert_allclose(sdf, np.broadcast_to(ramp, sdf.shape), atol=1e-15)


def test_degenerate_grids():
    with pytest.raises(DegenerateFieldError):
        signed_distance_field(rasterize(circle_scene((0.5, 0.5), 2.0), 32))
    with pytest.raises(DegenerateFieldError):
        signed_distance_field(np.zeros((8, 8), bool))
    with pytest.raises(ValueError):
        signed_distance_field(np.zeros((8, 9), bool))


@settings(max_examples=40, deadline=None)
@given(arrays(bool, (12, 12)))
def test_matches_brute_force(grid):
    if grid.all() or not grid.any():
        return
    np.testing.assert_allclose(signed_distance_field(grid), brute_sdf(grid), rtol=1e-12, atol=0)


@settings(max_examples=40, deadline=None)
@given(arrays(bool, (10, 10)))
def test_antisymmetric_under_complement(grid):
    if grid.all() or not grid.any():
        return
    np.testing.assert_array_equal(signed_distance_field(~grid), -signed_distance_field(grid))


def test_sign_and_nonzero():
    rng = np.random.default_rng(0)
    g = rng.random((40, 40)) < 0.3
    sdf = signed_distance_field(g)
    np.testing.assert_array_equal(sdf < 0, g)
    assert np.all(np.abs(sdf) >= 1 / 40)


def test_circle_close_to_analytic():
    scene = circle_scene((0.5, 0.5), 0.25)
    sdf = signed_distance_field(rasterize(scene, 128))
    c = cell_centers(128)
    exact = np.hypot(c[..., 0] - 0.5, c[..., 1] - 0.5) - 0.25
    assert np.max(np.abs(sdf - exact)) <= 1.5 / 128


def test_half_pixel_offset_shrinks_magnitude():
    g = np.zeros((16, 16), bool)
    g[4:10, 3:12] = True
    a = signed_distance_field(g)
    b = signed_distance_field(g, half_pixel_offset=True)
    np.testing.assert_allclose(b, a - np.sign(a) * 0.5 / 16, atol=1e-15)
