"""Tests for rasterization, 8-bit conversion, PSNR, seeding and file I/O."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csforensics import core
from csforensics.core import ClassLabel, DimensionError


class TestRasterScan:
    def test_column_major_order(self):
        np.testing.assert_array_equal(core.raster_scan([[1, 2], [3, 4]]), [1, 3, 2, 4])

    def test_single_pixel(self):
        np.testing.assert_array_equal(core.raster_scan([[5]]), [5])

    def test_inverse_example(self):
        np.testing.assert_array_equal(core.inverse_raster_scan([1, 3, 2, 4], 2, 2), [[1, 2], [3, 4]])

    def test_zero_vector(self):
        np.testing.assert_array_equal(core.inverse_raster_scan(np.zeros(4), 2, 2), np.zeros((2, 2)))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            core.inverse_raster_scan(np.zeros(5), 2, 2)

    def test_large_round_trip(self, rng):
        img = rng.random((128, 128))
        v = core.raster_scan(img)
        assert v.shape == (16384,)
        np.testing.assert_array_equal(core.inverse_raster_scan(v, 128, 128), img)

    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
    def test_bijection(self, h, w, seed):
        img = np.random.default_rng(seed).random((h, w))
        np.testing.assert_array_equal(core.inverse_raster_scan(core.raster_scan(img), h, w), img)

    def test_rejects_empty(self):
        with pytest.raises(DimensionError):
            core.raster_scan(np.zeros((0, 3)))


class TestEightBit:
    def test_half_rounds_up(self):
        img = np.array([[0.5 / 255, 1.5 / 255, 254.5 / 255]])
        assert core.to_uint8(img).tolist() == [[1, 2, 255]]

    def test_clipping(self):
        assert core.to_uint8([[-0.3, 1.7]]).tolist() == [[0, 255]]

    @given(arrays(np.float64, (6, 5), elements=st.floats(0, 1)))
    def test_round_trip_error_bound(self, img):
        err = np.abs(core.quantize_8bit(img) - img).max()
        assert err <= 1 / 510 + 1e-12

    def test_quantize_idempotent(self, rng):
        q = core.quantize_8bit(rng.random((9, 9)))
        np.testing.assert_array_equal(core.quantize_8bit(q), q)


class TestPsnr:
    def test_identical_is_inf(self, rng):
        img = rng.random((8, 8))
        assert core.psnr(img, img) == math.inf

    def test_full_scale_error(self):
        assert core.psnr(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(0.0, abs=1e-12)

    def test_one_grey_level(self):
        # independent evaluation of 10 log10(255^2 / 1)
        expected = 20 * math.log10(255)
        assert core.psnr(np.zeros((4, 4)), np.full((4, 4), 1 / 255)) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(48.13, abs=0.005)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            core.psnr(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_bad_peak(self):
        with pytest.raises(ValueError):
            core.psnr(np.zeros((2, 2)), np.ones((2, 2)), peak=0)

    def test_common_offset_invariance(self, rng):
        a = rng.random((16, 16)) * 0.5
        b = a + rng.normal(0, 0.01, a.shape)
        assert core.psnr(a + 0.25, b + 0.25) == pytest.approx(core.psnr(a, b), rel=1e-12)

    def test_decreases_with_noise(self, rng):
        ref = rng.random((32, 32))
        noise = rng.standard_normal(ref.shape)
        values = [core.psnr(ref, ref + s * noise) for s in (0.001, 0.01, 0.05, 0.2)]
        assert all(x > y for x, y in zip(values, values[1:]))


class TestSeeding:
    def test_same_seed_same_draws(self):
        a = core.make_rng(7).standard_normal(50)
        b = core.make_rng(7).standard_normal(50)
        np.testing.assert_array_equal(a, b)

    def test_derive_seed(self):
        assert core.derive_seed(3, 1, 2) == core.derive_seed(3, 1, 2)
        assert core.derive_seed(3, 1, 2) != core.derive_seed(3, 2, 1)
        assert 0 <= core.derive_seed(2**64 - 1, 5) < 2**64


class TestClassLabel:
    def test_exactly_three(self):
        assert [c.value for c in ClassLabel] == ["C", "J", "R"]
        assert core.LABEL_ORDER == tuple(ClassLabel)

    def test_index_round_trip(self):
        for i, lab in enumerate(core.LABEL_ORDER):
            assert lab.index == i
            assert ClassLabel.from_index(i) is lab


class TestFiles:
    def test_pgm_round_trip(self, tmp_path, rng):
        img = core.quantize_8bit(rng.random((5, 7)))
        path = tmp_path / "a.pgm"
        core.write_pgm(path, img)
        np.testing.assert_array_equal(core.read_pgm(path), img)
        assert path.read_bytes().startswith(b"P5\n7 5\n255\n")

    def test_pgm_with_comment(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
        np.testing.assert_array_equal(core.read_pgm(path), [[0.0, 1.0]])

    def test_rejects_ascii_pgm(self, tmp_path):
        path = tmp_path / "p2.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(ValueError):
            core.read_pgm(path)

    def test_bmp_read(self, tmp_path, rng):
        from PIL import Image

        arr = rng.integers(0, 256, (6, 4), dtype=np.uint8)
        Image.fromarray(arr, mode="L").save(tmp_path / "g.bmp")
        np.testing.assert_array_equal(core.to_uint8(core.read_image(tmp_path / "g.bmp")), arr)

    def test_csv_full_precision(self, tmp_path, rng):
        rows = rng.standard_normal((3, 4))
        core.write_csv_matrix(tmp_path / "m.csv", rows, header=["a", "b", "c", "d"])
        np.testing.assert_array_equal(core.read_csv_matrix(tmp_path / "m.csv", skip_header=True), rows)

    def test_digest(self, tmp_path):
        path = tmp_path / "x"
        path.write_bytes(b"abc")
        assert core.file_digest(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
