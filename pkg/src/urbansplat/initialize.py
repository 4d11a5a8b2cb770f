"""Scene initialization from LiDAR aggregation, tracked boxes, and
optional SfM seeds.

Background: union of sweeps with in-box (dynamic) returns removed,
voxel-downsampled, kept only where some training camera sees them, merged
with SfM points. Objects: in-box returns pooled across frames in the
object's local frame, with a uniform resample fallback for sparsely hit
boxes. Colors come from the first frame that sees each point.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geometry import SH_C0
from .scene import (
    GaussianSet,
    ObjectNode,
    SceneGraph,
    SkyCubemap,
    inverse_sigmoid,
)

VOXEL_SIZE = 0.15
MIN_BOX_POINTS = 2000
BOX_RESAMPLE_COUNT = 8000
INIT_OPACITY = 0.1


def voxel_downsample(points, voxel=VOXEL_SIZE):
    """Centroid per occupied voxel; output ordered by voxel key so the
    result is independent of input order up to float summation order."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts
    cells = np.floor(pts / voxel).astype(np.int64)
    _, inverse, counts = np.unique(
        cells, axis=0, return_inverse=True, return_counts=True
    )
    # accumulate in sorted-cell order for reproducibility
    order = np.argsort(inverse, kind="stable")
    sums = np.zeros((counts.shape[0], 3))
    np.add.at(sums, inverse[order], pts[order])
    return sums / counts[:, None]


def points_in_box(points_local, dims):
    """Closed-box containment test in the object frame."""
    half = np.asarray(dims, dtype=np.float64) / 2.0
    p = np.abs(np.asarray(points_local, dtype=np.float64))
    return np.all(p <= half + 1e-12, axis=1)


def collect_object_points(dataset, object_id, rng=None):
    """Pool in-box LiDAR returns across this object's valid frames,
    expressed in the object frame. Falls back to a uniform in-box sample
    when the pooled cloud is too sparse to shape the model."""
    tr = dataset.tracklets[object_id]
    pooled = []
    for frame in dataset.frames:
        t = frame.timestep
        if not tr.track.valid[t] or frame.lidar.size == 0:
            continue
        R = tr.track.rotations[t]
        T = tr.track.translations[t]
        local = (frame.lidar - T) @ R
        inside = points_in_box(local, tr.dims)
        if inside.any():
            pooled.append(local[inside])
    pts = np.concatenate(pooled) if pooled else np.zeros((0, 3))
    if pts.shape[0] < MIN_BOX_POINTS:
        rng = rng or np.random.default_rng(0)
        half = tr.dims / 2.0
        pts = rng.uniform(-half, half, size=(BOX_RESAMPLE_COUNT, 3))
    return pts


def background_points(dataset):
    """Union of sweeps minus in-box returns, voxelized, visibility-filtered,
    plus SfM seeds."""
    kept = []
    for frame in dataset.frames:
        pts = frame.lidar
        if pts.size == 0:
            continue
        dynamic = np.zeros(pts.shape[0], dtype=bool)
        for tr in dataset.tracklets.values():
            t = frame.timestep
            if not tr.track.valid[t]:
                continue
            local = (pts - tr.track.translations[t]) @ tr.track.rotations[t]
            dynamic |= points_in_box(local, tr.dims)
        kept.append(pts[~dynamic])
    pts = np.concatenate(kept) if kept else np.zeros((0, 3))
    pts = voxel_downsample(pts)
    if pts.shape[0]:
        visible = np.zeros(pts.shape[0], dtype=bool)
        for frame in dataset.frames:
            cam = frame.camera
            p = pts @ cam.R.T + cam.t
            z = p[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                u = cam.fx * p[:, 0] / z + cam.cx
                v = cam.fy * p[:, 1] / z + cam.cy
            visible |= (
                (z > cam.near_clip)
                & (u >= 0) & (u < cam.width)
                & (v >= 0) & (v < cam.height)
            )
        pts = pts[visible]
    if dataset.sfm_points is not None and dataset.sfm_points.size:
        pts = np.concatenate([pts, dataset.sfm_points])
    return pts


def colorize(points, dataset, transform_per_frame=None):
    """Sample each point's color from the first frame that sees it.

    transform_per_frame maps object-local points to world per timestep
    (None for world-frame points). Never-seen points get mid-gray."""
    pts = np.asarray(points, dtype=np.float64)
    colors = np.full((pts.shape[0], 3), 0.5)
    unseen = np.ones(pts.shape[0], dtype=bool)
    for frame in dataset.frames:
        if not unseen.any():
            break
        world = pts
        if transform_per_frame is not None:
            world = transform_per_frame(pts, frame.timestep)
            if world is None:
                continue
        cam = frame.camera
        p = world[unseen] @ cam.R.T + cam.t
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = cam.fx * p[:, 0] / z + cam.cx
            v = cam.fy * p[:, 1] / z + cam.cy
        ok = (
            (z > cam.near_clip)
            & (u >= 0) & (u <= cam.width - 1)
            & (v >= 0) & (v <= cam.height - 1)
        )
        if not ok.any():
            continue
        ui = np.round(u[ok]).astype(np.int64)
        vi = np.round(v[ok]).astype(np.int64)
        idx = np.nonzero(unseen)[0][ok]
        colors[idx] = frame.image[vi, ui]
        unseen[idx] = False
    return colors


def knn_log_scales(points):
    """Isotropic per-point scale: log of the mean distance to the three
    nearest neighbors (floored to keep degenerate duplicates finite)."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < 2:
        return np.full((n, 3), np.log(0.1))
    k = min(4, n)
    tree = cKDTree(pts)
    dists, _ = tree.query(pts, k=k)
    mean_d = dists[:, 1:].mean(axis=1)
    mean_d = np.maximum(mean_d, 1e-4)
    return np.log(mean_d)[:, None].repeat(3, axis=1)


def make_gaussian_set(points, colors, sh_degree, fourier_k, semantic, num_classes=None):
    """Assemble a GaussianSet with the standard cold-start values: identity
    rotations, knn scales, opacity INIT_OPACITY, DC-only color."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    B = (sh_degree + 1) ** 2
    appearance = np.zeros((n, fourier_k, B, 3))
    appearance[:, 0, 0, :] = (np.asarray(colors, dtype=np.float64) - 0.5) / SH_C0
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    if semantic == "vector":
        sem = np.zeros((n, num_classes))
    else:
        sem = np.zeros(n)
    return GaussianSet(
        positions=pts,
        log_scales=knn_log_scales(pts),
        rotations=rotations,
        opacity_logits=np.full(n, float(inverse_sigmoid(INIT_OPACITY))),
        appearance=appearance,
        semantic=sem,
        sh_degree=sh_degree,
        fourier_k=fourier_k,
    )


def init_scene(dataset, sh_degree=1, fourier_k_objects=5, sky_resolution=256,
               seed=0):
    """Build the initial SceneGraph for a dataset."""
    rng = np.random.default_rng(seed)
    bg_pts = background_points(dataset)
    bg_colors = colorize(bg_pts, dataset)
    background = make_gaussian_set(
        bg_pts, bg_colors, sh_degree, fourier_k=1,
        semantic="vector", num_classes=dataset.num_classes,
    )
    objects = {}
    for oid in sorted(dataset.tracklets.keys()):
        tr = dataset.tracklets[oid]
        local = collect_object_points(dataset, oid, rng)

        def to_world(p, t, _tr=tr):
            if not _tr.track.valid[t]:
                return None
            return p @ _tr.track.rotations[t].T + _tr.track.translations[t]

        colors = colorize(local, dataset, transform_per_frame=to_world)
        gs = make_gaussian_set(
            local, colors, sh_degree, fourier_k=fourier_k_objects,
            semantic="scalar",
        )
        objects[oid] = ObjectNode(
            gaussians=gs, track=tr.track.copy(), box_dims=tr.dims.copy()
        )
    return SceneGraph(
        background=background,
        objects=objects,
        sky=SkyCubemap.constant(sky_resolution, 0.5),
        num_frames=dataset.num_frames,
        num_classes=dataset.num_classes,
        vehicle_class_index=dataset.vehicle_class_index,
    )
