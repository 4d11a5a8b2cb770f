import json
import os

import numpy as np
import pytest

from urbansplat.dataset import Dataset, load_dataset, project_lidar_depth
from urbansplat.geometry import Camera
from urbansplat.synth import SynthSpec, generate, perturb


class TestSynthGenerate:
    def test_layout(self, tiny_dataset):
        root = tiny_dataset
        assert os.path.isfile(os.path.join(root, "scene.json"))
        assert os.path.isfile(os.path.join(root, "sfm.ply"))
        assert os.path.isdir(os.path.join(root, "gt_scene"))
        for sub in ("images", "sky", "sem", "lidar"):
            assert len(os.listdir(os.path.join(root, sub))) == 6

    def test_deterministic(self, tmp_path):
        from conftest import tree_hash

        spec = SynthSpec(width=48, height=36, num_frames=2, seed=9,
                         sky_resolution=16)
        a, b = tmp_path / "a", tmp_path / "b"
        generate(spec, str(a))
        generate(spec, str(b))
        assert tree_hash(str(a)) == tree_hash(str(b))

    def test_spec_json_round_trip(self, tmp_path):
        spec = SynthSpec(width=48, height=36, num_frames=3, seed=1)
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec.__dict__))
        assert SynthSpec.from_file(str(path)) == spec

    def test_spec_rejects_unknown_fields(self):
        with pytest.raises((TypeError, ValueError)):
            SynthSpec.from_json({"width": 32, "bogus": 1})


class TestLoadDataset:
    def test_fields(self, tiny_dataset):
        ds = load_dataset(tiny_dataset)
        assert ds.num_frames == 6
        assert len(ds.frames) == 6
        assert ds.num_classes == 3
        assert 0 <= ds.vehicle_class_index < 3
        assert len(ds.tracklets) == 2
        assert ds.sfm_points is not None and ds.sfm_points.shape[1] == 3
        # test_every=5 puts frames 0 and 5 in the test split
        assert ds.split["test"] == [0, 5]
        assert ds.split["train"] == [1, 2, 3, 4]

    def test_frame_contents(self, tiny_dataset):
        ds = load_dataset(tiny_dataset)
        f = ds.frames[0]
        assert f.image.shape == (72, 96, 3)
        assert 0.0 <= f.image.min() and f.image.max() <= 1.0
        assert f.lidar.shape[1] == 3
        assert f.sky_mask.shape == (72, 96)
        assert set(np.unique(f.sky_mask)) <= {0.0, 1.0}
        assert f.semantic.shape == (72, 96)
        assert f.semantic.max() < ds.num_classes

    def test_tracklets_valid_poses(self, tiny_dataset):
        ds = load_dataset(tiny_dataset)
        for tr in ds.tracklets.values():
            assert tr.track.num_frames == 6
            assert tr.dims.shape == (3,)
            dets = np.linalg.det(tr.track.rotations[tr.track.valid])
            np.testing.assert_allclose(dets, 1.0, atol=1e-8)

    def test_rejects_bad_class_map(self, tiny_dataset, tmp_path):
        import shutil

        root = tmp_path / "broken"
        shutil.copytree(tiny_dataset, root)
        desc = json.loads((root / "scene.json").read_text())
        desc["class_map"] = {"ground": 0, "wall": 2, "vehicle": 3}
        (root / "scene.json").write_text(json.dumps(desc))
        with pytest.raises(ValueError):
            load_dataset(str(root))

    def test_rejects_missing_image(self, tiny_dataset, tmp_path):
        import shutil

        root = tmp_path / "broken"
        shutil.copytree(tiny_dataset, root)
        os.remove(root / "images" / sorted(os.listdir(root / "images"))[0])
        with pytest.raises(FileNotFoundError):
            load_dataset(str(root))


class TestPerturb:
    def test_moves_tracklets_keeps_truth(self, tiny_dataset, tmp_path):
        import shutil

        root = tmp_path / "noisy"
        shutil.copytree(tiny_dataset, root)
        perturb(str(root), sigma_t=0.2, sigma_yaw_deg=5.0, seed=3)
        noisy = load_dataset(str(root))
        clean = load_dataset(tiny_dataset)
        assert noisy.true_poses  # clean poses preserved for scoring
        moved = 0.0
        for oid, tr in noisy.tracklets.items():
            ref = clean.tracklets[oid].track
            moved += float(np.abs(tr.track.translations - ref.translations).max())
            # z untouched: noise is planar
            np.testing.assert_allclose(tr.track.translations[:, 2],
                                       ref.translations[:, 2], atol=1e-12)
            dets = np.linalg.det(tr.track.rotations[tr.track.valid])
            np.testing.assert_allclose(dets, 1.0, atol=1e-8)
        assert moved > 0.01

    def test_perturb_deterministic(self, tiny_dataset, tmp_path):
        import shutil

        from conftest import tree_hash

        a, b = tmp_path / "a", tmp_path / "b"
        shutil.copytree(tiny_dataset, a)
        shutil.copytree(tiny_dataset, b)
        perturb(str(a), seed=7)
        perturb(str(b), seed=7)
        assert tree_hash(str(a)) == tree_hash(str(b))


class TestLidarProjection:
    def test_known_point(self):
        K = np.array([[50.0, 0.0, 15.5], [0.0, 50.0, 11.5], [0.0, 0.0, 1.0]])
        cam = Camera(K=K, R=np.eye(3), t=np.zeros(3), width=32, height=24)
        depth, mask = project_lidar_depth(np.array([[0.0, 0.0, 4.0]]), cam)
        assert mask[12, 16] or mask[11, 15]  # rounding of the 0.5 center
        assert depth[mask][0] == pytest.approx(4.0)
        assert mask.sum() == 1

    def test_nearest_wins(self):
        K = np.array([[50.0, 0.0, 16.0], [0.0, 50.0, 12.0], [0.0, 0.0, 1.0]])
        cam = Camera(K=K, R=np.eye(3), t=np.zeros(3), width=32, height=24)
        pts = np.array([[0.0, 0.0, 6.0], [0.0, 0.0, 2.0]])
        depth, mask = project_lidar_depth(pts, cam)
        assert depth[12, 16] == pytest.approx(2.0)

    def test_behind_and_outside_dropped(self):
        K = np.array([[50.0, 0.0, 16.0], [0.0, 50.0, 12.0], [0.0, 0.0, 1.0]])
        cam = Camera(K=K, R=np.eye(3), t=np.zeros(3), width=32, height=24)
        pts = np.array([[0.0, 0.0, -3.0], [90.0, 0.0, 2.0]])
        depth, mask = project_lidar_depth(pts, cam)
        assert not mask.any()
        np.testing.assert_array_equal(depth, 0.0)
