import math

import numpy as np
import pytest

from pyrovigil.features import (
    SamplingMode,
    SamplingPlan,
    dump_descriptors,
    fast_hessian,
    global_histogram,
    haar_margin,
    kernel_fits,
    local_color_histogram,
    sample,
    surf_descriptor,
)
from pyrovigil.imaging import ColorSpace, Frame, integral

from test_imaging import _ref_lab


# Brute-force SURF oracle: same geometry as the package convention, but
# every box sum comes from raw pixel slicing (no integral image, no
# batching), and subregion accumulation is a plain dict walk.
def surf_oracle(gray, cx, cy, scale):
    h = haar_margin(scale)
    x0 = cx - scale // 2
    y0 = cy - scale // 2
    c = (scale - 1) / 2.0
    sigma = 0.165 * scale
    acc = np.zeros((4, 4, 4))
    for v in range(scale):
        py = y0 + v
        sv = min(3, 4 * v // scale)
        for u in range(scale):
            px = x0 + u
            su = min(3, 4 * u // scale)
            right = gray[py - h : py + h + 1, px + 1 : px + h + 1].sum()
            left = gray[py - h : py + h + 1, px - h : px].sum()
            dx = right - left
            bottom = gray[py + 1 : py + h + 1, px - h : px + h + 1].sum()
            top = gray[py - h : py, px - h : px + h + 1].sum()
            dy = bottom - top
            w = math.exp(-(((u - c) ** 2) + ((v - c) ** 2)) / (2 * sigma * sigma))
            acc[sv, su, 0] += w * dx
            acc[sv, su, 1] += w * dy
            acc[sv, su, 2] += w * abs(dx)
            acc[sv, su, 3] += w * abs(dy)
    vec = acc.reshape(64)
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def _gray_frame(px):
    return Frame(np.asarray(px, dtype=float), ColorSpace.GRAY)


class TestGlobalHistogram:
    def test_uniform_midgray_single_bins(self):
        frame = Frame(np.full((8, 8, 3), 128.0), ColorSpace.RGB)
        hist = global_histogram(frame, ColorSpace.RGB)
        for c in range(3):
            block = hist.bins[c * 32 : c * 32 + 32]
            assert (block > 0).sum() == 1
            assert block.max() == 1.0

    def test_total_mass_is_three(self, rng):
        img = rng.integers(0, 256, (20, 30, 3)).astype(float)
        for space in (ColorSpace.RGB, ColorSpace.HSV, ColorSpace.YUV, ColorSpace.LAB):
            hist = global_histogram(Frame(img, ColorSpace.RGB), space)
            assert abs(hist.bins.sum() - 3.0) <= 1e-9
            assert (hist.bins >= 0).all()

    def test_two_pixel_split(self):
        # channel 0 values 10 and 200 land in different bins: 0.5 each
        img = np.array([[[10.0, 0.0, 0.0], [200.0, 0.0, 0.0]]])
        hist = global_histogram(Frame(img, ColorSpace.RGB), ColorSpace.RGB)
        block = hist.bins[:32]
        assert sorted(block[block > 0].tolist()) == [0.5, 0.5]
        assert block[int(10 / 255 * 32)] == 0.5
        assert block[int(200 / 255 * 32)] == 0.5

    def test_mask_restricts_pixels(self, rng):
        img = rng.integers(0, 256, (6, 6, 3)).astype(float)
        mask = np.zeros((6, 6), dtype=bool)
        mask[0, 0] = True
        hist = global_histogram(Frame(img, ColorSpace.RGB), ColorSpace.RGB, mask)
        assert (hist.bins > 0).sum() <= 3

    def test_empty_mask_errors(self):
        frame = Frame(np.zeros((4, 4, 3)), ColorSpace.RGB)
        with pytest.raises(ValueError, match="empty mask"):
            global_histogram(frame, ColorSpace.RGB, np.zeros((4, 4), dtype=bool))

    def test_mass_conservation_over_partition(self, rng):
        # unnormalized histograms of disjoint parts sum exactly to the whole
        img = rng.integers(0, 256, (16, 16, 3)).astype(float)
        frame = Frame(img, ColorSpace.RGB)
        parts = rng.integers(0, 3, (16, 16))
        whole = global_histogram(frame, ColorSpace.LAB, normalized=False).bins
        total = np.zeros(96)
        for p in range(3):
            mask = parts == p
            if mask.any():
                total += global_histogram(
                    frame, ColorSpace.LAB, mask, normalized=False
                ).bins
        assert np.array_equal(total, whole)


class TestSurf:
    def test_constant_image_zero_vector(self):
        ii = integral(_gray_frame(np.full((21, 21), 55.0)))
        vec = surf_descriptor(ii, (10, 10), 9)
        assert np.all(vec == 0.0)

    def test_matches_brute_force_oracle(self, rng):
        px = rng.integers(0, 256, (40, 40)).astype(float)
        ii = integral(_gray_frame(px))
        for scale in (9, 12, 15):
            for _ in range(5):
                cx = int(rng.integers(12, 28))
                cy = int(rng.integers(12, 28))
                got = surf_descriptor(ii, (cx, cy), scale)
                want = surf_oracle(px, cx, cy, scale)
                assert np.allclose(got, want, atol=1e-10)

    def test_vertical_step_edge_dx_dominates(self):
        px = np.full((31, 31), 10.0)
        px[:, 15:] = 200.0  # vertical edge at x=15
        ii = integral(_gray_frame(px))
        vec = surf_descriptor(ii, (15, 15), 9).reshape(4, 4, 4)
        # the edge crosses subregion column su where x=15 falls: window
        # starts at 11, local u = 4 -> su = min(3, 16//9) = 1
        for sv in range(4):
            sum_abs_dx = vec[sv, 1, 2]
            sum_abs_dy = vec[sv, 1, 3]
            assert sum_abs_dx > sum_abs_dy
            assert sum_abs_dy == 0.0

    def test_unit_norm_on_nonflat(self, rng):
        px = rng.integers(0, 256, (30, 30)).astype(float)
        ii = integral(_gray_frame(px))
        vec = surf_descriptor(ii, (14, 14), 9)
        assert abs(np.linalg.norm(vec) - 1.0) <= 1e-6

    def test_out_of_bounds_errors(self):
        ii = integral(_gray_frame(np.zeros((20, 20))))
        with pytest.raises(ValueError, match="bounds"):
            surf_descriptor(ii, (2, 10), 9)

    def test_mirror_equivariance(self, rng):
        # horizontally mirroring the image mirrors the dx sign pattern;
        # scale 12 splits into symmetric 3-pixel subregion columns
        px = rng.integers(0, 256, (36, 36)).astype(float)
        mirrored = px[:, ::-1].copy()
        scale, cx, cy = 12, 17, 18
        v1 = surf_descriptor(integral(_gray_frame(px)), (cx, cy), scale)
        v2 = surf_descriptor(
            integral(_gray_frame(mirrored)), (36 - cx, cy), scale
        )
        a = v1.reshape(4, 4, 4)
        b = v2.reshape(4, 4, 4)
        for sv in range(4):
            for su in range(4):
                assert np.allclose(b[sv, 3 - su, 0], -a[sv, su, 0], atol=1e-9)
                assert np.allclose(b[sv, 3 - su, 2], a[sv, su, 2], atol=1e-9)
                assert np.allclose(b[sv, 3 - su, 1], a[sv, su, 1], atol=1e-9)
                assert np.allclose(b[sv, 3 - su, 3], a[sv, su, 3], atol=1e-9)


class TestLocalColorHistogram:
    def test_uniform_patch(self):
        frame = Frame(np.full((15, 15, 3), 80.0), ColorSpace.RGB)
        hist = local_color_histogram(frame, (7, 7), 9)
        for c in range(3):
            block = hist[c * 8 : c * 8 + 8]
            assert block.max() == 1.0
            assert (block > 0).sum() == 1

    def test_mass_is_three(self, rng):
        img = rng.integers(0, 256, (20, 20, 3)).astype(float)
        hist = local_color_histogram(Frame(img, ColorSpace.RGB), (10, 10), 9)
        assert abs(hist.sum() - 3.0) <= 1e-9

    def test_half_red_half_green(self):
        img = np.zeros((10, 10, 3))
        img[:, :5] = (200.0, 30.0, 30.0)  # red half
        img[:, 5:] = (30.0, 180.0, 30.0)  # green half
        hist = local_color_histogram(Frame(img, ColorSpace.RGB), (5, 4), 10)
        # oracle: a* bins of the two colors via the reference conversion
        _, a_red, _ = _ref_lab(200, 30, 30)
        _, a_green, _ = _ref_lab(30, 180, 30)
        bin_red = min(7, int((a_red + 128) / 255 * 8))
        bin_green = min(7, int((a_green + 128) / 255 * 8))
        a_block = hist[8:16]
        assert bin_red != bin_green
        assert abs(a_block[bin_red] - 0.5) <= 1e-9
        assert abs(a_block[bin_green] - 0.5) <= 1e-9

    def test_clipped_scope(self):
        img = np.full((12, 12, 3), 50.0)
        hist = local_color_histogram(Frame(img, ColorSpace.RGB), (0, 0), 9)
        assert abs(hist.sum() - 3.0) <= 1e-9


def enumerate_valid_centers(width, height, scale, interval, anchor=(0, 0)):
    """Position oracle: test every pixel against the fit rule directly."""
    out = []
    for cy in range(height):
        for cx in range(width):
            if (cx - anchor[0]) % interval or (cy - anchor[1]) % interval:
                continue
            if cx < anchor[0] or cy < anchor[1]:
                continue
            if kernel_fits(cx, cy, scale, width, height):
                out.append((cx, cy))
    return out


class TestSampling:
    def test_27x27_grid_count(self, rng):
        img = rng.integers(0, 256, (27, 27, 3)).astype(float)
        frame = Frame(img, ColorSpace.RGB)
        plan = SamplingPlan(interval=9, scales=(9,))
        descs = sample(frame, plan)
        oracle = enumerate_valid_centers(27, 27, 9, 9)
        assert len(descs) == len(oracle)
        assert sorted(d.center for d in descs) == sorted(oracle)

    def test_grid_count_product_rule(self, rng):
        for _ in range(5):
            w = int(rng.integers(24, 60))
            h = int(rng.integers(24, 60))
            img = rng.integers(0, 256, (h, w, 3)).astype(float)
            plan = SamplingPlan(interval=7, scales=(9, 12))
            descs = sample(Frame(img, ColorSpace.RGB), plan)
            expected = sum(
                len(enumerate_valid_centers(w, h, s, 7)) for s in plan.scales
            )
            assert len(descs) == expected

    def test_deterministic(self, rng):
        img = rng.integers(0, 256, (40, 40, 3)).astype(float)
        frame = Frame(img, ColorSpace.RGB)
        plan = SamplingPlan()
        a = sample(frame, plan)
        b = sample(frame, plan)
        assert len(a) == len(b)
        for da, db in zip(a, b):
            assert da.center == db.center
            assert np.array_equal(da.vector, db.vector)

    def test_all_zero_mask_gives_empty_list(self, rng):
        img = rng.integers(0, 256, (30, 30, 3)).astype(float)
        frame = Frame(img, ColorSpace.RGB)
        descs = sample(frame, SamplingPlan(), mask=np.zeros((30, 30), dtype=bool))
        assert descs == []

    def test_too_small_frame_raises(self):
        frame = Frame(np.zeros((8, 8, 3)), ColorSpace.RGB)
        with pytest.raises(ValueError, match="no valid sample positions"):
            sample(frame, SamplingPlan(interval=9, scales=(9,)))

    def test_anchor_shifts_grid(self, rng):
        img = rng.integers(0, 256, (40, 40, 3)).astype(float)
        frame = Frame(img, ColorSpace.RGB)
        descs = sample(frame, SamplingPlan(), anchor=(7, 6))
        oracle = enumerate_valid_centers(40, 40, 9, 9, anchor=(7, 6))
        assert sorted(d.center for d in descs) == sorted(oracle)

    def test_descriptor_dimensions(self, rng):
        img = rng.integers(0, 256, (30, 30, 3)).astype(float)
        descs = sample(Frame(img, ColorSpace.RGB), SamplingPlan())
        for d in descs:
            assert d.vector.shape == (88,)
            assert d.surf.shape == (64,)
            assert d.color.shape == (24,)
            norm = np.linalg.norm(d.surf)
            assert norm == 0.0 or abs(norm - 1.0) <= 1e-6
            assert abs(d.color.sum() - 3.0) <= 1e-6

    def test_dump_format(self, rng, tmp_path):
        img = rng.integers(0, 256, (30, 30, 3)).astype(float)
        descs = sample(Frame(img, ColorSpace.RGB), SamplingPlan())
        path = tmp_path / "descs.txt"
        dump_descriptors(descs, path)
        lines = path.read_text().splitlines()
        assert len(lines) == len(descs)
        fields = lines[0].split()
        assert len(fields) == 3 + 88
        assert int(fields[0]) == descs[0].center[0]
        assert int(fields[2]) == descs[0].scale


class TestKeypointMode:
    def _blobby_image(self, rng):
        px = np.full((80, 80), 30.0)
        for _ in range(6):
            cx, cy = rng.integers(18, 62, 2)
            r = int(rng.integers(4, 9))
            yy, xx = np.ogrid[:80, :80]
            px[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = 220.0
        return px

    def test_detects_on_blobs_not_on_flat(self, rng):
        px = self._blobby_image(rng)
        kps = fast_hessian(integral(_gray_frame(px)), 100.0)
        assert len(kps) > 0
        flat = fast_hessian(integral(_gray_frame(np.full((80, 80), 64.0))), 100.0)
        assert flat == []

    def test_threshold_monotone(self, rng):
        px = self._blobby_image(rng)
        ii = integral(_gray_frame(px))
        low = set(fast_hessian(ii, 50.0))
        high = set(fast_hessian(ii, 500.0))
        assert high <= low

    def test_keypoint_sampling_produces_descriptors(self, rng):
        px = self._blobby_image(rng)
        img = np.stack([px, px * 0.8, px * 0.5], axis=2)
        plan = SamplingPlan(mode=SamplingMode.KEYPOINT, hessian_threshold=100.0)
        descs = sample(Frame(img, ColorSpace.RGB), plan)
        assert len(descs) > 0
        for d in descs:
            assert d.scale in (15, 21)
