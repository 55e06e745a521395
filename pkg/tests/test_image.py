import math

import numpy as np
import pytest

from pctdet.errors import ImageFormatError
from pctdet.image import (NormLoc, OrientationTable, Window,
                          add_gaussian_noise, center_bounds, check_gray,
                          clamp_window, load_image, map_location,
                          rotate_location, save_image, trunc_div_256,
                          window_inside)


class TestMapLocation:
    def test_center_maps_to_center(self):
        assert map_location(Window(50, 50, 100), NormLoc(0, 0)) == (50, 50)

    def test_full_positive_extent(self):
        # 127 * 256 / 256 = 127 exactly
        assert map_location(Window(50, 50, 256), NormLoc(127, 0)) == (177, 50)

    def test_negative_extent_small_window(self):
        # trunc(-127 * 3 / 256) = trunc(-1.488) = -1: stays inside the
        # size-3 window, where floor division would escape it
        assert map_location(Window(50, 50, 3), NormLoc(-127, -127)) == (49, 49)

    def test_trunc_symmetry(self):
        for p in (-381, -256, -255, -1, 0, 1, 255, 256, 381):
            assert trunc_div_256(-p) == -trunc_div_256(p)

    def test_offset_stays_inside_half_window(self):
        # exhaustive over all q for a grid of sizes
        q = np.arange(-127, 128)
        for size in (1, 2, 3, 4, 5, 7, 8, 13, 100, 101, 999, 10_000):
            off = np.array([trunc_div_256(int(v) * size) for v in q])
            assert np.all(np.abs(off) * 2 < size)

    def test_mapped_point_inside_window_bounds(self):
        # 2-D statement on a coarse grid: the mapped pixel is within the
        # half-open span [row - s/2, row + s/2)
        for size in (1, 2, 3, 5, 16, 99, 10_000):
            win = Window(20_000, 20_000, size)
            for q in (-127, -100, -1, 0, 1, 100, 127):
                r, c = map_location(win, NormLoc(q, q))
                assert win.row - size / 2 <= r < win.row + size / 2
                assert win.col - size / 2 <= c < win.col + size / 2


class TestWindowGeometry:
    def test_inside_exact_fit(self):
        assert window_inside(Window(50, 50, 100), 100, 100)
        assert not window_inside(Window(49, 50, 100), 100, 100)
        assert not window_inside(Window(50, 50, 101), 100, 100)

    def test_odd_size_equal_to_dim_has_no_center(self):
        lo, hi = center_bounds(3, 3)
        assert lo > hi

    def test_clamp_shifts_inward(self):
        w = clamp_window(Window(0, 0, 10), 64, 64)
        assert w == Window(5, 5, 10)
        assert window_inside(w, 64, 64)

    def test_clamp_shrinks_only_when_needed(self):
        w = clamp_window(Window(5, 5, 100), 32, 48)
        assert w.size == 32
        assert window_inside(w, 32, 48)
        # odd size equal to the short dimension steps down by one
        w = clamp_window(Window(5, 5, 33), 33, 48)
        assert w.size == 32


class TestOrientationTable:
    def test_identity_entry(self):
        t = OrientationTable.build(12)
        assert t.cos[0] == 256 and t.sin[0] == 0

    def test_norm_within_rounding_slack(self):
        for n in (1, 2, 4, 6, 12, 32):
            t = OrientationTable.build(n)
            norm = t.cos.astype(np.int64) ** 2 + t.sin.astype(np.int64) ** 2
            assert np.all(np.abs(norm - 256 ** 2) <= 2 * 256)

    def test_rotate_identity(self):
        t = OrientationTable.build(8)
        for loc in (NormLoc(0, 0), NormLoc(127, -127), NormLoc(-5, 99)):
            assert rotate_location(loc, t, 0) == loc

    def test_rotate_half_turn_is_point_reflection(self):
        t = OrientationTable.build(4)
        assert rotate_location(NormLoc(100, 50), t, 2) == NormLoc(-100, -50)

    def test_rotate_against_float_oracle(self):
        t = OrientationTable.build(12)
        angle = 2 * math.pi / 12
        qr, qc = 127, 0
        oracle_r = round(math.cos(angle) * qr - math.sin(angle) * qc)
        oracle_c = round(math.sin(angle) * qr + math.cos(angle) * qc)
        got = rotate_location(NormLoc(qr, qc), t, 1)
        assert abs(got.qr - oracle_r) <= 1
        assert abs(got.qc - oracle_c) <= 1

    def test_rotate_forward_backward_within_one_unit(self):
        t = OrientationTable.build(12)
        rng = np.random.default_rng(0)
        for _ in range(200):
            # stay away from the clamp region
            loc = NormLoc(int(rng.integers(-80, 81)),
                          int(rng.integers(-80, 81)))
            for k in range(1, 12):
                mid = rotate_location(loc, t, k)
                if max(abs(mid.qr), abs(mid.qc)) == 127:
                    continue  # clamped, exemption applies
                back = rotate_location(mid, t, 12 - k)
                assert abs(back.qr - loc.qr) <= 1
                assert abs(back.qc - loc.qc) <= 1

    def test_bad_index(self):
        t = OrientationTable.build(4)
        with pytest.raises(ValueError):
            rotate_location(NormLoc(0, 0), t, 4)


class TestNoise:
    def test_sigma_zero_is_identity(self):
        img = np.arange(256, dtype=np.uint8).reshape(16, 16)
        out = add_gaussian_noise(img, 0, seed=3)
        assert np.array_equal(out, img)

    def test_deterministic(self):
        img = np.full((100, 100), 128, dtype=np.uint8)
        a = add_gaussian_noise(img, 16, seed=9)
        b = add_gaussian_noise(img, 16, seed=9)
        assert np.array_equal(a, b)
        c = add_gaussian_noise(img, 16, seed=10)
        assert not np.array_equal(a, c)

    def test_sample_std_matches_sigma(self):
        img = np.full((1000, 1000), 128, dtype=np.uint8)
        out = add_gaussian_noise(img, 16, seed=1)
        std = float(np.std(out.astype(np.float64)))
        assert 15.5 <= std <= 16.5

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            add_gaussian_noise(np.zeros((2, 2), np.uint8), -1, seed=0)


class TestImageIO:
    def test_pgm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        img = rng.integers(0, 256, (37, 61)).astype(np.uint8)
        path = tmp_path / "img.pgm"
        save_image(img, path)
        back = load_image(path)
        assert back.shape == img.shape
        assert np.array_equal(back, img)

    def test_raw_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        img = rng.integers(0, 256, (11, 23)).astype(np.uint8)
        path = tmp_path / "img.raw"
        save_image(img, path)
        assert np.array_equal(load_image(path), img)

    def test_minimal_image(self, tmp_path):
        img = np.zeros((1, 1), dtype=np.uint8)
        path = tmp_path / "one.pgm"
        save_image(img, path)
        assert np.array_equal(load_image(path), img)

    def test_pgm_wrong_maxval(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + b"\0" * 8)
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_pgm_comment_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([1, 2, 3, 4]))
        img = load_image(path)
        assert img.tolist() == [[1, 2], [3, 4]]

    def test_truncated_pgm(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + b"\0" * 7)
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_truncated_raw(self, tmp_path):
        path = tmp_path / "t.raw"
        path.write_bytes((5).to_bytes(4, "little") * 2 + b"\0" * 10)
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_raw_dimension_overflow(self, tmp_path):
        path = tmp_path / "o.raw"
        path.write_bytes((1 << 20).to_bytes(4, "little") * 2 + b"\0" * 4)
        with pytest.raises(ImageFormatError):
            load_image(path)


class TestCheckGray:
    def test_accepts_int_array(self):
        out = check_gray([[0, 255], [4, 5]])
        assert out.dtype == np.uint8

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            check_gray([[0, 256]])

    def test_rejects_wrong_ndim(self):
        with pytest.raises(ValueError):
            check_gray(np.zeros((2, 2, 3), np.uint8))
