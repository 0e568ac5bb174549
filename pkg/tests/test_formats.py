import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from geomenc.cli import CommandError, format_points_csv, read_points_csv
from geomenc.nn.checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from geomenc.pgm import PgmFormatError, decode_pgm, encode_pgm, field_to_pixels, grid_to_pixels, read_binary_grid, write_pgm


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a.weight": rng.standard_normal((3, 2, 4, 4)).astype(np.float32),
               "a.bias": rng.standard_normal(3).astype(np.float32),
               "scalar": np.asarray(7.0, np.float32),
               "empty": np.zeros((0, 3), np.float32),
               "ünïcode": np.arange(5, dtype=np.float32)}
    save_checkpoint(tensors, tmp_path / "c.sdfw")
    back = load_checkpoint(tmp_path / "c.sdfw")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()
    assert encode_checkpoint(back) == (tmp_path / "c.sdfw").read_bytes()


def test_checkpoint_errors():
    data = encode_checkpoint({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(data[:-3])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(data + b"\0")
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(data[:4] + b"\x02\x00" + data[6:])


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 20))))
def test_pgm_round_trip(pixels):
    assert np.array_equal(decode_pgm(encode_pgm(pixels)), pixels)


def test_pgm_header_variants_and_errors():
    raster = bytes(range(6))
    img = decode_pgm(b"P5\n# a comment\n3 2\n# another\n255\n" + raster)
    assert img.shape == (2, 3) and img.tobytes() == raster
    with pytest.raises(PgmFormatError, match="byte 0"):
        decode_pgm(b"P2\n3 2\n255\n" + raster)
    with pytest.raises(PgmFormatError, match="truncated"):
        decode_pgm(b"P5\n3 2\n255\n" + raster[:4])
    with pytest.raises(PgmFormatError, match="width"):
        decode_pgm(b"P5\nx 2\n255\n" + raster)
    with pytest.raises(PgmFormatError, match="maxval"):
        decode_pgm(b"P5\n3 2\n65535\n" + raster)


def test_grid_export_reimport(tmp_path):
    grid = np.random.default_rng(1).random((17, 17)) < 0.3
    write_pgm(tmp_path / "g.pgm", grid_to_pixels(grid))
    np.testing.assert_array_equal(read_binary_grid(tmp_path / "g.pgm"), grid)


def test_field_to_pixels():
    px = field_to_pixels(np.array([[-1.0, 0.0], [0.5, 1.0]]))
    np.testing.assert_array_equal(px, [[0, 128], [191, 255]])
    assert not field_to_pixels(np.ones((3, 3))).any()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 30), st.just(2)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_points_csv_round_trip(points):
    back = read_points_csv(format_points_csv(points))
    assert back.tobytes() == points.reshape(-1, 2).tobytes()


def test_points_csv_diagnostics():
    assert read_points_csv("x,y\n0.1,0.2\n\n0.3,0.4\n").tolist() == [[0.1, 0.2], [0.3, 0.4]]
    with pytest.raises(CommandError, match=":3:"):
        read_points_csv("0.1,0.2\n0.3,0.4\nfoo,0.5\n", "pts.csv")
    with pytest.raises(CommandError, match=":2:"):
        read_points_csv("0.1,0.2\n0.3\n")
    with pytest.raises(CommandError, match="not finite"):
        read_points_csv("0.1,nan\n")
    text = format_points_csv([[0.5, 0.25]], [1.5], (np.array([2.0]), np.array([-3.0])))
    assert text.splitlines() == ["x,y,value,dx,dy", "0.5,0.25,1.5,2.0,-3.0"]
