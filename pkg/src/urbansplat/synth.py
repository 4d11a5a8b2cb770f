"""Synthetic benchmark scenes with exact ground truth.

A generated scene is a textured ground plane, side walls, and a few
box-shaped "vehicles" driving through the view; images, LiDAR sweeps, sky
masks, and semantic labels are produced by rendering the ground-truth
scene itself, so a perfect reconstruction is attainable and every
supervision channel is self-consistent. Class map: sky 0, ground 1,
vehicle 2.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import imio, plyio
from .geometry import SH_C0, Camera, rotation_z
from .rasterizer import RenderConfig, render
from .scene import (
    GaussianSet,
    ObjectNode,
    PoseTrack,
    SceneGraph,
    SkyCubemap,
    inverse_sigmoid,
    save_checkpoint,
)

CLASS_MAP = {"sky": 0, "ground": 1, "vehicle": 2}
VEHICLE_CLASS = "vehicle"
SEM_LOGIT = 8.0


@dataclass
class SynthSpec:
    seed: int = 0
    num_frames: int = 30
    width: int = 160
    height: int = 120
    num_objects: int = 2
    ground_points: int = 900
    wall_points: int = 350
    object_points: int = 160
    sky_resolution: int = 64
    test_every: int = 8          # every k-th frame held out; 0 = none
    lidar_stride: int = 3        # pixel subsampling of simulated sweeps
    focal: float = 120.0
    write_gt_checkpoint: bool = True

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, (str, bytes)):
            obj = json.loads(obj)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown synth spec fields {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


def _one_hot_logits(n, cls, m=3):
    sem = np.full((n, m), -SEM_LOGIT)
    sem[:, cls] = SEM_LOGIT
    return sem


def _dc(colors):
    return (np.asarray(colors, dtype=np.float64) - 0.5) / SH_C0


def _gaussian_set(positions, colors, log_scales, opacity, semantic,
                  fourier_k=1, sh_degree=1):
    n = positions.shape[0]
    B = (sh_degree + 1) ** 2
    appearance = np.zeros((n, fourier_k, B, 3))
    appearance[:, 0, 0, :] = _dc(colors)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianSet(
        positions=positions,
        log_scales=log_scales,
        rotations=rot,
        opacity_logits=np.full(n, float(inverse_sigmoid(opacity))),
        appearance=appearance,
        semantic=semantic,
        sh_degree=sh_degree,
        fourier_k=fourier_k,
    )


def _ground(rng, spec):
    n = spec.ground_points
    side = int(np.sqrt(n))
    xs = np.linspace(-18, 24, side)
    ys = np.linspace(-9, 9, max(side // 2, 2))
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=-1)
    pts[:, :2] += rng.uniform(-0.25, 0.25, (pts.shape[0], 2))
    # checker-like albedo so the plane carries gradient signal
    u = np.floor(pts[:, 0] / 3.0) + np.floor(pts[:, 1] / 3.0)
    base = np.where((u % 2)[:, None] == 0, 0.55, 0.35)
    colors = base + rng.uniform(-0.05, 0.05, (pts.shape[0], 3))
    colors[:, 2] += 0.05
    ls = np.tile(np.log([0.9, 0.9, 0.05]), (pts.shape[0], 1))
    sem = _one_hot_logits(pts.shape[0], CLASS_MAP["ground"])
    return _gaussian_set(pts, np.clip(colors, 0.05, 0.95), ls, 0.92, sem)


def _walls(rng, spec):
    n = spec.wall_points
    pts = np.zeros((n, 3))
    half = n // 2
    pts[:half, 0] = rng.uniform(-18, 24, half)
    pts[:half, 1] = 9.5 + rng.uniform(-0.2, 0.2, half)
    pts[:half, 2] = rng.uniform(0.0, 4.0, half)
    rest = n - half
    pts[half:, 0] = rng.uniform(-18, 24, rest)
    pts[half:, 1] = -9.5 + rng.uniform(-0.2, 0.2, rest)
    pts[half:, 2] = rng.uniform(0.0, 4.0, rest)
    hue = rng.uniform(0.25, 0.75, (n, 1))
    colors = np.concatenate([hue, 0.4 + 0.3 * np.sin(pts[:, :1]), hue], axis=1)
    ls = np.tile(np.log([0.7, 0.15, 0.55]), (n, 1))
    sem = _one_hot_logits(n, CLASS_MAP["ground"])
    return _gaussian_set(pts, np.clip(colors, 0.05, 0.95), ls, 0.9, sem)


def _vehicle(rng, spec, dims):
    """Points on the surface of a box, brightly and distinctively painted."""
    n = spec.object_points
    l, w, h = dims
    pts = []
    per_face = max(n // 6, 8)
    for axis, sign in ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)):
        p = rng.uniform(-0.5, 0.5, (per_face, 3)) * np.array([l, w, h])
        p[:, axis] = sign * (l, w, h)[axis] / 2
        pts.append(p)
    pts = np.concatenate(pts)
    pts[:, 2] += h / 2  # rest the box on the ground plane
    base = rng.uniform(0.2, 0.9, 3)
    colors = np.clip(base + rng.uniform(-0.2, 0.2, (pts.shape[0], 3)), 0.05, 0.95)
    ls = np.tile(np.log([0.22, 0.22, 0.22]), (pts.shape[0], 1))
    sem = np.full(pts.shape[0], SEM_LOGIT)
    return _gaussian_set(pts, colors, ls, 0.93, sem, fourier_k=1)


def _track(rng, spec, lane_y, speed, x0):
    n = spec.num_frames
    T = np.zeros((n, 3))
    R = np.zeros((n, 3, 3))
    for t in range(n):
        T[t] = (x0 + speed * t, lane_y, 0.0)
        R[t] = rotation_z(0.0 if speed >= 0 else np.pi)
    return PoseTrack(rotations=R, translations=T, valid=np.ones(n, dtype=bool))


def _sky_faces(resolution):
    """Smooth gradient: blue zenith to warm horizon, never saturating."""
    from .sky import face_uv  # noqa: F401  (documenting the convention)

    res = resolution
    faces = np.zeros((6, res, res, 3))
    # reconstruct per-texel directions face by face
    g = (np.arange(res, dtype=np.float64) + 0.5) / res * 2.0 - 1.0
    uu, vv = np.meshgrid(g, g)
    ax = {
        0: lambda u, v: np.stack([np.ones_like(u), -v, -u], -1),
        1: lambda u, v: np.stack([-np.ones_like(u), -v, u], -1),
        2: lambda u, v: np.stack([u, np.ones_like(u), v], -1),
        3: lambda u, v: np.stack([u, -np.ones_like(u), -v], -1),
        4: lambda u, v: np.stack([u, -v, np.ones_like(u)], -1),
        5: lambda u, v: np.stack([-u, -v, -np.ones_like(u)], -1),
    }
    for f in range(6):
        d = ax[f](uu, vv)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        # note faces store t along rows: dir component mapping must match
        # sky.face_uv; here v is the row coordinate
        up = np.clip(d[..., 2], -1.0, 1.0)
        zen = np.array([0.35, 0.5, 0.85])
        hor = np.array([0.8, 0.72, 0.6])
        w_up = np.clip(up, 0.0, 1.0)[..., None]
        faces[f] = hor + (zen - hor) * w_up
        faces[f] += 0.05 * d[..., 0:1]  # horizontal tint for asymmetry
    return np.clip(faces, 0.02, 0.98)


def look_at_camera(eye, target, width, height, focal):
    """z-up look-at; camera +z forward, +y down in the image."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f = f / np.linalg.norm(f)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(f, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    x = x / np.linalg.norm(x)
    y = np.cross(f, x)
    y = y / np.linalg.norm(y)
    R = np.stack([x, y, f])
    t = -R @ eye
    K = np.array(
        [
            [focal, 0.0, (width - 1) / 2.0],
            [0.0, focal, (height - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )
    return Camera(K=K, R=R, t=t, width=width, height=height)


def build_scene(spec):
    """Ground-truth SceneGraph for a spec (no I/O)."""
    rng = np.random.default_rng(spec.seed)
    background = _ground(rng, spec).concat(_walls(rng, spec))
    objects = {}
    lanes = [-2.5, 2.5, -5.5, 5.5]
    for i in range(spec.num_objects):
        dims = np.array([4.2, 1.9, 1.6]) * rng.uniform(0.9, 1.1)
        speed = (0.55 if i % 2 == 0 else -0.5) * rng.uniform(0.85, 1.15)
        x0 = -10.0 + 4.0 * i if speed >= 0 else 14.0 - 4.0 * i
        objects[f"car_{i}"] = ObjectNode(
            gaussians=_vehicle(rng, spec, dims),
            track=_track(rng, spec, lanes[i % len(lanes)], speed, x0),
            box_dims=dims * np.array([1.05, 1.05, 2.1]),  # box spans z in [-h, h]
        )
    return SceneGraph(
        background=background,
        objects=objects,
        sky=SkyCubemap(_sky_faces(spec.sky_resolution)),
        num_frames=spec.num_frames,
        num_classes=len(CLASS_MAP),
        vehicle_class_index=CLASS_MAP[VEHICLE_CLASS],
    )


def cameras_for(spec):
    cams = []
    for t in range(spec.num_frames):
        eye = np.array([-14.0 + 0.35 * t, -7.5 + 0.05 * t, 2.6])
        target = np.array([eye[0] + 10.0, 0.0, 1.0])
        cams.append(look_at_camera(eye, target, spec.width, spec.height, spec.focal))
    return cams


def simulate_lidar(out, camera, stride):
    """Backproject rendered depth where the foreground is near-opaque.

    Blended depth is an alpha-weighted sum; dividing by blended alpha at
    O >= 0.95 pixels gives the expected surface depth along the ray."""
    O = out.opacity
    D = out.depth
    H, W = O.shape
    vs, us = np.meshgrid(
        np.arange(0, H, stride), np.arange(0, W, stride), indexing="ij"
    )
    us = us.ravel()
    vs = vs.ravel()
    sel = O[vs, us] >= 0.95
    us, vs = us[sel], vs[sel]
    z = D[vs, us] / O[vs, us]
    x = (us - camera.cx) / camera.fx * z
    y = (vs - camera.cy) / camera.fy * z
    p_cam = np.stack([x, y, z], axis=-1)
    return (p_cam - camera.t) @ camera.R


def generate(spec, out_dir):
    """Write a full dataset under out_dir; returns the GT scene."""
    scene = build_scene(spec)
    cams = cameras_for(spec)
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("images", "lidar", "sky", "sem"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    cfg = RenderConfig(render_semantics=True)
    frames_json = []
    for t in range(spec.num_frames):
        cam = cams[t]
        out = render(scene, cam, t, cfg)
        name = f"{t:04d}.png"
        imio.write_png(os.path.join(out_dir, "images", name), out.color)
        sky_mask = (out.transmittance >= 0.5).astype(np.float64)
        imio.write_png(os.path.join(out_dir, "sky", name), sky_mask)
        labels = np.argmax(out.semantic, axis=-1).astype(np.uint8)
        labels[sky_mask > 0.5] = CLASS_MAP["sky"]
        imio.write_png_labels(os.path.join(out_dir, "sem", name), labels)
        pts = simulate_lidar(out, cam, spec.lidar_stride)
        plyio.write_ply(os.path.join(out_dir, "lidar", f"{t:04d}.ply"), pts)
        frames_json.append(
            {
                "timestep": t,
                "image": f"images/{name}",
                "lidar": f"lidar/{t:04d}.ply",
                "sky_mask": f"sky/{name}",
                "semantic": f"sem/{name}",
                "camera": cam.to_json(),
            }
        )

    # sparse SfM-like seeds: noisy subset of background points
    rng = np.random.default_rng(spec.seed + 1)
    bg = scene.background.positions
    take = rng.choice(bg.shape[0], size=min(300, bg.shape[0]), replace=False)
    sfm = bg[np.sort(take)] + rng.normal(0, 0.05, (len(take), 3))
    plyio.write_ply(os.path.join(out_dir, "sfm.ply"), sfm)

    tracklets = []
    for oid, node in scene.objects.items():
        tracklets.append(
            {
                "id": oid,
                "dims": [float(v) for v in node.box_dims],
                "frames": [
                    {
                        "t": t,
                        "valid": bool(node.track.valid[t]),
                        "R": node.track.rotations[t].tolist(),
                        "T": node.track.translations[t].tolist(),
                    }
                    for t in range(spec.num_frames)
                ],
            }
        )
    test = list(range(spec.num_frames))[:: spec.test_every] if spec.test_every else []
    train = [i for i in range(spec.num_frames) if i not in test]
    desc = {
        "num_frames": spec.num_frames,
        "class_map": CLASS_MAP,
        "vehicle_class": VEHICLE_CLASS,
        "frames": frames_json,
        "tracklets": tracklets,
        "sfm": "sfm.ply",
        "split": {"train": train, "test": test},
    }
    with open(os.path.join(out_dir, "scene.json"), "w") as f:
        json.dump(desc, f, indent=1)
    if spec.write_gt_checkpoint:
        save_checkpoint(scene, os.path.join(out_dir, "gt_scene"))
    return scene


def perturb(dataset_dir, sigma_t=0.2, sigma_yaw_deg=5.0, seed=0, xy_only=True):
    """Corrupt tracklet poses in place (scene.json) and stash the clean
    poses under true_poses for residual-recovery evaluation."""
    path = os.path.join(dataset_dir, "scene.json")
    with open(path) as f:
        desc = json.load(f)
    rng = np.random.default_rng(seed)
    true_poses = {}
    for tr in desc.get("tracklets", []):
        clean_T = []
        clean_R = []
        for fr in tr["frames"]:
            clean_R.append(fr["R"])
            clean_T.append(fr["T"])
            if not fr["valid"]:
                continue
            noise = rng.normal(0.0, sigma_t, 3)
            if xy_only:
                noise[2] = 0.0
            fr["T"] = (np.array(fr["T"]) + noise).tolist()
            dyaw = rng.normal(0.0, np.deg2rad(sigma_yaw_deg))
            fr["R"] = (np.array(fr["R"]) @ rotation_z(dyaw)).tolist()
        true_poses[tr["id"]] = {"translations": clean_T, "rotations": clean_R}
    desc["true_poses"] = true_poses
    with open(path, "w") as f:
        json.dump(desc, f, indent=1)
    return true_poses
