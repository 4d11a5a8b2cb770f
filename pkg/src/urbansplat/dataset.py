"""Dataset loading and validation.

Layout under a scene root:
  scene.json           cameras, tracklets, class map, optional split
  images/NNNN.png      8-bit RGB
  lidar/NNNN.ply       world-frame xyz sweeps (ascii or binary LE)
  sky/NNNN.png         optional binary sky masks (1 = sky)
  sem/NNNN.png         optional per-pixel class labels (raw uint values)
  sfm.ply              optional extra seed points

World is z-up metric; camera extrinsics map world to camera. Tracklet
poses are dense arrays of length num_frames with a validity flag per
frame.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import imio, plyio
from .geometry import Camera
from .scene import PoseTrack


@dataclass
class FrameRecord:
    timestep: int
    camera: Camera
    image: np.ndarray            # (H, W, 3) float64
    lidar: np.ndarray            # (N, 3) world points
    sky_mask: np.ndarray | None  # (H, W) float 0/1
    semantic: np.ndarray | None  # (H, W) int32


@dataclass
class Tracklet:
    track: PoseTrack
    dims: np.ndarray  # (3,) length, width, height


@dataclass
class Dataset:
    root: str
    frames: list
    class_map: dict          # name -> class index
    vehicle_class: str
    tracklets: dict          # id -> Tracklet
    sfm_points: np.ndarray | None
    sfm_colors: np.ndarray | None
    split: dict              # {"train": [...], "test": [...]}
    true_poses: dict         # id -> clean poses (present on perturbed scenes)

    @property
    def num_frames(self):
        return len(self.frames)

    @property
    def num_classes(self):
        return max(self.class_map.values()) + 1

    @property
    def vehicle_class_index(self):
        return self.class_map[self.vehicle_class]

    def train_frames(self):
        return [self.frames[i] for i in self.split["train"]]

    def test_frames(self):
        return [self.frames[i] for i in self.split["test"]]


def load_dataset(root):
    with open(os.path.join(root, "scene.json")) as f:
        desc = json.load(f)
    n = int(desc["num_frames"])
    if n < 1:
        raise ValueError("num_frames must be >= 1")

    class_map = {str(k): int(v) for k, v in desc["class_map"].items()}
    vals = sorted(class_map.values())
    if vals != list(range(len(vals))):
        raise ValueError("class_map values must be 0..M-1 without gaps")
    vehicle_class = desc["vehicle_class"]
    if vehicle_class not in class_map:
        raise ValueError(f"vehicle_class {vehicle_class!r} not in class_map")

    if len(desc["frames"]) != n:
        raise ValueError("frames list length != num_frames")
    frames = []
    prev_t = -1
    for rec in desc["frames"]:
        t = int(rec["timestep"])
        if t <= prev_t:
            raise ValueError("frame timesteps must be strictly increasing")
        prev_t = t
        cam = Camera.from_json(rec["camera"])
        img = imio.read_png(os.path.join(root, rec["image"]))
        if img.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"image size mismatch at frame {t}")
        pts, _ = plyio.read_ply(os.path.join(root, rec["lidar"]))
        sky_mask = None
        if rec.get("sky_mask"):
            sky_mask = (imio.read_png_gray(os.path.join(root, rec["sky_mask"])) > 0.5).astype(
                np.float64
            )
            if sky_mask.shape != (cam.height, cam.width):
                raise ValueError(f"sky mask size mismatch at frame {t}")
        semantic = None
        if rec.get("semantic"):
            semantic = imio.read_png_labels(os.path.join(root, rec["semantic"]))
            if semantic.shape != (cam.height, cam.width):
                raise ValueError(f"semantic size mismatch at frame {t}")
            if semantic.max() >= len(vals):
                raise ValueError(f"semantic labels exceed class count at frame {t}")
        frames.append(
            FrameRecord(
                timestep=t, camera=cam, image=img, lidar=pts,
                sky_mask=sky_mask, semantic=semantic,
            )
        )
    if prev_t != n - 1 or frames[0].timestep != 0:
        raise ValueError("timesteps must cover 0..num_frames-1")

    tracklets = {}
    for tr in desc.get("tracklets", []):
        oid = str(tr["id"])
        recs = tr["frames"]
        if len(recs) != n:
            raise ValueError(f"tracklet {oid} must list all {n} frames")
        R = np.zeros((n, 3, 3))
        T = np.zeros((n, 3))
        valid = np.zeros(n, dtype=bool)
        for k, fr in enumerate(recs):
            if int(fr["t"]) != k:
                raise ValueError(f"tracklet {oid} frames out of order")
            valid[k] = bool(fr["valid"])
            if valid[k]:
                R[k] = np.array(fr["R"], dtype=np.float64)
                T[k] = np.array(fr["T"], dtype=np.float64)
            else:
                R[k] = np.eye(3)
        track = PoseTrack(rotations=R, translations=T, valid=valid)
        dims = np.array(tr["dims"], dtype=np.float64)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError(f"tracklet {oid} dims must be 3 positive extents")
        tracklets[oid] = Tracklet(track=track, dims=dims)

    sfm_points = sfm_colors = None
    if desc.get("sfm"):
        sfm_points, sfm_colors = plyio.read_ply(os.path.join(root, desc["sfm"]))

    split = desc.get("split")
    if split is None:
        split = {"train": list(range(n)), "test": []}
    for key in ("train", "test"):
        if any(not 0 <= i < n for i in split.get(key, [])):
            raise ValueError(f"split[{key}] indices out of range")

    return Dataset(
        root=root,
        frames=frames,
        class_map=class_map,
        vehicle_class=vehicle_class,
        tracklets=tracklets,
        sfm_points=sfm_points,
        sfm_colors=sfm_colors,
        split={"train": list(split.get("train", [])), "test": list(split.get("test", []))},
        true_poses=desc.get("true_poses", {}),
    )


def project_lidar_depth(points, camera):
    """Splat world points into a nearest-depth pixel map.

    Returns (depth (H, W), mask (H, W) bool). Each point lands on the
    pixel containing its projection; the closest point wins a pixel.
    """
    H, W = camera.height, camera.width
    depth = np.full((H, W), np.inf)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.size:
        p = pts @ camera.R.T + camera.t
        z = p[:, 2]
        keep = z > camera.near_clip
        p, z = p[keep], z[keep]
        u = np.round(camera.fx * p[:, 0] / z + camera.cx).astype(np.int64)
        v = np.round(camera.fy * p[:, 1] / z + camera.cy).astype(np.int64)
        inb = (u >= 0) & (u < W) & (v >= 0) & (v < H)
        u, v, z = u[inb], v[inb], z[inb]
        np.minimum.at(depth, (v, u), z)
    mask = np.isfinite(depth)
    depth[~mask] = 0.0
    return depth, mask
