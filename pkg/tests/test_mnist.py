import os
from pathlib import Path

import numpy as np
import pytest

from geomenc.mnist import (
    IdxFormatError, decode_idx_images, decode_idx_labels, encode_idx_images, glyph_to_grid, mnist_to_samples,
)


def fixture_images():
    """Three 28x28 glyphs with hand-countable occupancy."""
    imgs = np.zeros((3, 28, 28), np.uint8)
    imgs[0, 9:19, 9:19] = 255      # filled 10x10 square: 100 pixels
    imgs[1, 5:8, 4:20] = 200       # 3x16 bar above threshold: 48 pixels
    imgs[1, 20:22, 4:20] = 100     # below 0.5 * 255: ignored
    return imgs                    # glyph 2 is blank


@pytest.fixture
def idx_file(tmp_path):
    path = tmp_path / "t10k-images-idx3-ubyte"
    path.write_bytes(encode_idx_images(fixture_images()))
    return path


def test_idx_round_trip():
    imgs = fixture_images()
    np.testing.assert_array_equal(decode_idx_images(encode_idx_images(imgs)), imgs)
    labels = bytes.fromhex("00000801 00000003") + bytes([7, 2, 1])
    np.testing.assert_array_equal(decode_idx_labels(labels), [7, 2, 1])


def test_idx_errors():
    data = encode_idx_images(fixture_images())
    with pytest.raises(IdxFormatError, match="magic"):
        decode_idx_images(b"\0\0\x08\x01" + data[4:])
    with pytest.raises(IdxFormatError, match="promises"):
        decode_idx_images(data[:-1])
    with pytest.raises(IdxFormatError, match="truncated"):
        decode_idx_images(data[:10])


def test_fixture_occupancy_counts(idx_file):
    samples, skipped = mnist_to_samples(idx_file, resolution=128)
    factor = 4     # (128 - 2 * 8) // 28
    assert skipped == 1
    assert [int(s.image.sum()) for s in samples] == [100 * factor ** 2, 48 * factor ** 2]
    for s in samples:
        assert s.sign_consistent()
        assert s.provenance[0] == "external"


def test_upscale_and_centering():
    g = glyph_to_grid(fixture_images()[0], resolution=128)
    rows, cols = np.nonzero(g)
    # 28 * 4 = 112 canvas pixels, offset 8; glyph rows 9..18 -> 44..83
    assert (rows.min(), rows.max(), cols.min(), cols.max()) == (44, 83, 44, 83)
    assert glyph_to_grid(fixture_images()[0], resolution=64).sum() == 100 * 2 ** 2


def test_impossible_threshold_skips_everything(idx_file):
    samples, skipped = mnist_to_samples(idx_file, threshold=1.1)
    assert samples == [] and skipped == 3


MNIST = os.environ.get("GEOMENC_MNIST", str(Path(__file__).parent / "data" / "t10k-images-idx3-ubyte"))


@pytest.mark.skipif(not Path(MNIST).exists(), reason="real MNIST not present")
def test_real_mnist_yield():
    samples, skipped = mnist_to_samples(MNIST, limit=2000)
    assert len(samples) / (len(samples) + skipped) >= 0.99
