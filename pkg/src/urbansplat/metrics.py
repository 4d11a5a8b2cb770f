"""Evaluation metrics: PSNR, SSIM, object-region PSNR (masked by projected
box footprints), and semantic mIoU.
"""

from __future__ import annotations

import cv2
import numpy as np

from .geometry import effective_pose
from .losses import ssim as _ssim_with_grad


def psnr(pred, target):
    """10 log10(1 / MSE) for [0, 1] images; inf when identical."""
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(
        target, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def ssim_metric(pred, target):
    value, _ = _ssim_with_grad(pred, target)
    return value


def box_corners(dims, expand_lw=1.0):
    """Object-frame corners of the box; length/width scaled by expand_lw,
    height kept."""
    l, w, h = np.asarray(dims, dtype=np.float64)
    l *= expand_lw
    w *= expand_lw
    corners = np.array(
        [
            [sx * l / 2, sy * w / 2, sz * h / 2]
            for sx in (-1, 1)
            for sy in (-1, 1)
            for sz in (-1, 1)
        ]
    )
    return corners


def object_footprint_mask(scene, camera, timestep, expand_lw=1.5):
    """Union of the rasterized convex hulls of each valid object box
    projected into the image; the boxes' ground footprint is scaled by
    expand_lw to catch shadows and silhouette fringes."""
    H, W = camera.height, camera.width
    mask = np.zeros((H, W), dtype=np.uint8)
    for node in scene.objects.values():
        track = node.track
        if not track.valid[timestep]:
            continue
        R, T = effective_pose(
            track.rotations[timestep], track.translations[timestep],
            track.delta_yaws[timestep], track.delta_translations[timestep],
        )
        corners = box_corners(node.box_dims, expand_lw) @ R.T + T
        p = corners @ camera.R.T + camera.t
        if np.all(p[:, 2] <= camera.near_clip):
            continue
        infront = p[:, 2] > camera.near_clip
        p = p[infront]
        u = camera.fx * p[:, 0] / p[:, 2] + camera.cx
        v = camera.fy * p[:, 1] / p[:, 2] + camera.cy
        pts = np.stack([u, v], axis=-1)
        pts = np.round(pts).astype(np.int64)
        pts = np.clip(pts, [-4 * W, -4 * H], [5 * W, 5 * H]).astype(np.int32)
        if len(pts) < 3:
            continue
        hull = cv2.convexHull(pts.reshape(-1, 1, 2))
        cv2.fillConvexPoly(mask, hull, 1)
    return mask.astype(bool)


def psnr_masked(pred, target, mask):
    """PSNR restricted to mask pixels; None when the mask is empty."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return None
    p = np.asarray(pred, dtype=np.float64)[m]
    t = np.asarray(target, dtype=np.float64)[m]
    mse = float(np.mean((p - t) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def psnr_star(pred, target, scene, camera, timestep, expand_lw=1.5):
    """Object-region PSNR: plain PSNR inside the union of expanded,
    projected box footprints."""
    mask = object_footprint_mask(scene, camera, timestep, expand_lw)
    return psnr_masked(pred, target, mask)


def miou(pred_labels, ref_labels, num_classes, ignore_index=-1):
    """Mean IoU over the classes that appear in the reference."""
    p = np.asarray(pred_labels).ravel()
    r = np.asarray(ref_labels).ravel()
    keep = r != ignore_index
    p, r = p[keep], r[keep]
    ious = []
    for c in range(num_classes):
        in_ref = r == c
        if not in_ref.any():
            continue
        in_pred = p == c
        inter = float(np.sum(in_ref & in_pred))
        union = float(np.sum(in_ref | in_pred))
        ious.append(inter / union if union > 0 else 0.0)
    return float(np.mean(ious)) if ious else None
