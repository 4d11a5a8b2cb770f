"""Brute-force reference blend: per pixel, every projected Gaussian in
global depth order, no tiling, no saturation stop. Shares the projection
stage with the fast path (projection has its own closed-form tests); the
blend arithmetic is written independently in _kernels.reference_blend.
"""

from __future__ import annotations

import numpy as np

from .. import sky as skymod
from . import _kernels
from .forward import RenderConfig, RenderOutputs, _project, assemble_world_set


def render_reference(scene, camera, timestep, config=None):
    """Oracle renderer. O(P * H * W); keep scenes small."""
    config = config or RenderConfig()
    world = assemble_world_set(
        scene, timestep, config.model_filter, config.render_semantics
    )
    valid, _, mean2d, _, conic, _, depth_pt, color_pt, _, _ = _project(
        world, camera, config
    )
    idx = np.nonzero(valid)[0]
    order = idx[np.lexsort((idx, depth_pt[idx]))]

    H, W = camera.height, camera.width
    M = world.sem.shape[1]
    out_color = np.zeros((H, W, 3))
    out_depth = np.zeros((H, W))
    out_sem = np.zeros((H, W, M))
    out_T = np.ones((H, W))
    if order.size:
        _kernels.reference_blend(
            H, W,
            np.ascontiguousarray(mean2d[order]),
            np.ascontiguousarray(conic[order]),
            np.ascontiguousarray(color_pt[order]),
            np.ascontiguousarray(world.sem[order]),
            np.ascontiguousarray(depth_pt[order]),
            np.ascontiguousarray(world.opacities[order]),
            config.alpha_clamp, config.alpha_threshold,
            out_color, out_depth, out_sem, out_T,
        )
    sky_rgb = None
    color_final = out_color
    if config.include_sky:
        sky_rgb = skymod.sample_cubemap(scene.sky.faces, camera.ray_directions())
        color_final = out_color + out_T[:, :, None] * sky_rgb
    return RenderOutputs(
        color=color_final,
        depth=out_depth,
        opacity=1.0 - out_T,
        transmittance=out_T,
        semantic=out_sem if config.render_semantics else None,
        sky_color=sky_rgb,
        visible={sl.key: int(valid[sl.start : sl.stop].sum()) for sl in world.slices},
    )
