import numpy as np
import pytest

from conftest import micro_scene
from urbansplat import metrics


class TestPsnr:
    def test_known_value(self):
        pred = np.full((8, 8, 3), 0.6)
        target = np.full((8, 8, 3), 0.5)
        # MSE = 0.01 -> 10 log10(1/0.01) = 20 dB
        assert metrics.psnr(pred, target) == pytest.approx(20.0)

    def test_identical_is_inf(self):
        img = np.random.default_rng(0).uniform(size=(4, 4, 3))
        assert metrics.psnr(img, img.copy()) == float("inf")

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(1)
        target = rng.uniform(size=(16, 16, 3))
        small = metrics.psnr(target + 0.01, target)
        large = metrics.psnr(target + 0.1, target)
        assert small > large


class TestMaskedPsnr:
    def test_empty_mask_is_none(self):
        img = np.zeros((4, 4, 3))
        assert metrics.psnr_masked(img, img, np.zeros((4, 4), bool)) is None

    def test_only_mask_pixels_count(self):
        rng = np.random.default_rng(2)
        target = rng.uniform(size=(8, 8, 3))
        pred = target.copy()
        mask = np.zeros((8, 8), dtype=bool)
        mask[:4] = True
        pred[4:] += 10.0  # corrupt only outside the mask
        assert metrics.psnr_masked(pred, target, mask) == float("inf")
        pred2 = target.copy()
        pred2[:4] += 0.1
        assert metrics.psnr_masked(pred2, target, mask) == pytest.approx(20.0)


class TestFootprint:
    def test_centered_object_covers_center(self):
        scene, cam = micro_scene(0)
        mask = metrics.object_footprint_mask(scene, cam, 0)
        assert mask[cam.height // 2, cam.width // 2]
        assert not mask.all()

    def test_invalid_frame_no_footprint(self):
        scene, cam = micro_scene(1)
        scene.objects["obj"].track.valid[:] = False
        mask = metrics.object_footprint_mask(scene, cam, 0)
        assert not mask.any()

    def test_behind_camera_no_footprint(self):
        scene, cam = micro_scene(2)
        scene.objects["obj"].track.translations[:, 2] = -10.0
        mask = metrics.object_footprint_mask(scene, cam, 0)
        assert not mask.any()

    def test_expand_grows_mask(self):
        scene, cam = micro_scene(3)
        tight = metrics.object_footprint_mask(scene, cam, 0, expand_lw=1.0)
        wide = metrics.object_footprint_mask(scene, cam, 0, expand_lw=2.0)
        assert wide.sum() > tight.sum()
        assert np.all(wide[tight])

    def test_psnr_star_sees_object_region_only(self):
        rng = np.random.default_rng(4)
        scene, cam = micro_scene(5)
        target = rng.uniform(size=(cam.height, cam.width, 3))
        mask = metrics.object_footprint_mask(scene, cam, 0, expand_lw=1.5)
        pred = target.copy()
        pred[~mask] += 5.0
        assert metrics.psnr_star(pred, target, scene, cam, 0) == float("inf")


class TestMiou:
    def test_perfect(self):
        labels = np.random.default_rng(5).integers(0, 4, size=(10, 10))
        assert metrics.miou(labels, labels, 4) == pytest.approx(1.0)

    def test_disjoint(self):
        ref = np.zeros((4, 4), dtype=int)
        pred = np.ones((4, 4), dtype=int)
        assert metrics.miou(pred, ref, 2) == pytest.approx(0.0)

    def test_known_overlap(self):
        ref = np.array([0, 0, 1, 1])
        pred = np.array([0, 1, 1, 1])
        # class 0: inter 1, union 2; class 1: inter 2, union 3
        assert metrics.miou(pred, ref, 2) == pytest.approx(
            (1.0 / 2.0 + 2.0 / 3.0) / 2.0)

    def test_absent_class_skipped(self):
        ref = np.zeros(6, dtype=int)
        pred = np.zeros(6, dtype=int)
        assert metrics.miou(pred, ref, 5) == pytest.approx(1.0)

    def test_ignore_index(self):
        ref = np.array([0, -1, -1, 1])
        pred = np.array([0, 5, 5, 1])
        assert metrics.miou(pred, ref, 2) == pytest.approx(1.0)

    def test_all_ignored_is_none(self):
        assert metrics.miou(np.zeros(3, int), np.full(3, -1), 2) is None
