"""Image I/O, sample loading, augmentation, synthetic generation."""

import os

import numpy as np
import pytest

from mhenet.data import (DEPTH_CONTRAST_MIN, FG_FRACTION_RANGE,
                         RGB_CONTRAST_MAX, Sample, augment, collate,
                         load_sample, read_gray, read_image, read_manifest,
                         resize_nearest, scan_dataset, synth_generate,
                         write_image, write_manifest)

RNG = lambda s: np.random.default_rng(s)


class TestImageIO:
    def test_round_trip_gray_exact(self, tmp_path):
        arr = RNG(0).integers(0, 256, size=(13, 17), dtype=np.uint8)
        path = str(tmp_path / "g.png")
        write_image(path, arr)
        np.testing.assert_array_equal(read_image(path), arr)

    def test_round_trip_rgb_exact(self, tmp_path):
        arr = RNG(1).integers(0, 256, size=(9, 7, 3), dtype=np.uint8)
        path = str(tmp_path / "c.png")
        write_image(path, arr)
        np.testing.assert_array_equal(read_image(path), arr)

    def test_pgm_supported(self, tmp_path):
        arr = RNG(2).integers(0, 256, size=(6, 6), dtype=np.uint8)
        path = str(tmp_path / "x.pgm")
        write_image(path, arr)
        np.testing.assert_array_equal(read_image(path), arr)

    def test_extreme_values_scale(self, tmp_path):
        arr = np.array([[0, 255]], dtype=np.uint8)
        path = str(tmp_path / "e.png")
        write_image(path, arr)
        np.testing.assert_array_equal(read_gray(path) / 255.0, [[0.0, 1.0]])

    def test_non_uint8_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_image(str(tmp_path / "f.png"), np.zeros((4, 4)))


class TestLoadSample:
    def _dataset(self, tmp_path, size=32):
        root = str(tmp_path / "ds")
        return synth_generate(3, size, seed=5, root=root)

    def test_loaded_ranges_and_binarity(self, tmp_path):
        manifest = self._dataset(tmp_path)
        s = load_sample(manifest.root, manifest.entries[0])
        assert s.rgb.shape[0] == 3 and s.depth.shape[0] == 1
        assert 0.0 <= s.rgb.min() and s.rgb.max() <= 1.0
        assert set(np.unique(s.gt)) <= {0.0, 1.0}

    def test_resize_keeps_gt_binary(self, tmp_path):
        manifest = self._dataset(tmp_path)
        s = load_sample(manifest.root, manifest.entries[1], target_size=(48, 48))
        assert s.gt.shape == (1, 48, 48)
        assert set(np.unique(s.gt)) <= {0.0, 1.0}

    def test_loading_twice_is_bitwise_identical(self, tmp_path):
        manifest = self._dataset(tmp_path)
        a = load_sample(manifest.root, manifest.entries[2], target_size=(32, 32))
        b = load_sample(manifest.root, manifest.entries[2], target_size=(32, 32))
        for x, y in ((a.rgb, b.rgb), (a.depth, b.depth), (a.gt, b.gt)):
            assert x.tobytes() == y.tobytes()

    def test_missing_file_rejected(self, tmp_path):
        manifest = self._dataset(tmp_path)
        os.remove(os.path.join(manifest.root, manifest.entries[0].depth))
        with pytest.raises(FileNotFoundError):
            scan_dataset(manifest.root)


class _FlipOnlyRng:
    """Forces the flip branch and neutralizes rotation and cropping."""

    def random(self):
        return 0.0                      # flip triggers (p < 0.5 branch)

    def uniform(self, lo, hi):
        return 0.0 if lo < 0 else hi    # rotation 0 deg, crop scale 1.0

    def integers(self, lo, hi):
        return lo


class TestAugment:
    def _sample(self, seed=6, size=32):
        rng = RNG(seed)
        gt = np.zeros((size, size))
        gt[8:20, 10:22] = 1.0
        return Sample(rng.random((3, size, size)), rng.random((1, size, size)),
                      gt[None], "s").validate()

    def test_fixed_seed_reproducible(self):
        s = self._sample()
        a = augment(s, RNG(7))
        b = augment(s, RNG(7))
        assert a.rgb.tobytes() == b.rgb.tobytes()
        assert a.gt.tobytes() == b.gt.tobytes()

    def test_gt_stays_binary_and_sizes_fixed(self):
        s = self._sample()
        rng = RNG(8)
        for _ in range(10):
            out = augment(s, rng)
            assert out.gt.shape == s.gt.shape
            assert out.rgb.shape == s.rgb.shape
            assert set(np.unique(out.gt)) <= {0.0, 1.0}

    def test_forced_flip_twice_is_identity(self):
        s = self._sample()
        once = augment(s, _FlipOnlyRng())
        twice = augment(once, _FlipOnlyRng())
        np.testing.assert_allclose(twice.rgb, s.rgb, atol=1e-12)
        np.testing.assert_array_equal(twice.gt, s.gt)

    def test_same_geometry_for_all_maps(self):
        # encode position in both depth and gt; they must move together
        size = 32
        gt = np.zeros((size, size))
        gt[4:12, 4:12] = 1.0
        s = Sample(np.stack([gt, gt, gt]), gt[None].copy(), gt[None].copy(), "s")
        out = augment(s, RNG(9))
        np.testing.assert_allclose(out.rgb[0], out.rgb[1], atol=1e-12)
        overlap = (out.depth[0] > 0.5) == (out.gt[0] > 0.5)
        assert overlap.mean() > 0.98    # bilinear vs nearest only differ at edges


class TestCollate:
    def test_batch_shapes(self):
        samples = [TestAugment()._sample(seed) for seed in (10, 11)]
        rgb, depth, gt = collate(samples)
        assert rgb.shape == (2, 3, 32, 32)
        assert depth.shape == (2, 1, 32, 32)
        assert gt.shape == (2, 1, 32, 32)


class TestSynthetic:
    def test_contracts_hold_for_every_sample(self, tmp_path):
        root = str(tmp_path / "syn")
        manifest = synth_generate(8, 32, seed=0, root=root)
        assert len(manifest) == 8
        lo, hi = FG_FRACTION_RANGE
        for e in manifest.entries:
            s = load_sample(root, e)
            mask = s.gt[0] > 0.5
            frac = mask.mean()
            assert lo <= frac <= hi
            lum = s.rgb.mean(axis=0)
            assert abs(lum[mask].mean() - lum[~mask].mean()) <= RGB_CONTRAST_MAX
            d = s.depth[0]
            assert abs(d[mask].mean() - d[~mask].mean()) >= DEPTH_CONTRAST_MIN

    def test_same_seed_identical_files(self, tmp_path):
        r1 = str(tmp_path / "a")
        r2 = str(tmp_path / "b")
        synth_generate(3, 32, seed=42, root=r1)
        synth_generate(3, 32, seed=42, root=r2)
        for sub in ("Imgs", "Depths", "GT"):
            for name in sorted(os.listdir(os.path.join(r1, sub))):
                b1 = open(os.path.join(r1, sub, name), "rb").read()
                b2 = open(os.path.join(r2, sub, name), "rb").read()
                assert b1 == b2

    def test_size_must_divide_32(self, tmp_path):
        with pytest.raises(ValueError):
            synth_generate(1, 33, seed=0, root=str(tmp_path / "bad"))


class TestManifest:
    def test_write_read_round_trip(self, tmp_path):
        root = str(tmp_path / "m")
        manifest = synth_generate(4, 32, seed=1, root=root)
        path = write_manifest(manifest)
        loaded = read_manifest(root, path)
        assert [e.rgb for e in loaded.entries] == [e.rgb for e in manifest.entries]
        assert [e.id for e in loaded.entries] == [e.id for e in manifest.entries]


class TestResizeNearest:
    def test_preserves_valueset(self):
        arr = (RNG(12).random((10, 10)) > 0.5).astype(np.float64)
        out = resize_nearest(arr, 23, 7)
        assert set(np.unique(out)) <= {0.0, 1.0}
