"""Analytic backward pass for the renderer.

Gradients flow image -> blend weights -> projected footprints -> world
parameters -> per-model parameters (including object pose residuals and
sky texels). All reductions are sequential or per-slot; results are
bitwise reproducible for any thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .. import sky as skymod
from ..geometry import (
    quat_rotmat_backward,
    quat_to_rotmat,
    rotation_z_grad,
)
from . import _kernels
from .forward import RenderContext, render, set_threads


@dataclass
class ModelGrads:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    appearance: np.ndarray
    semantic: np.ndarray
    # per-view densification statistics
    screen_grad_norm: np.ndarray   # |d mean2d| per point, zero when invisible
    visible: np.ndarray            # bool, survived culling this view
    max_radius: np.ndarray         # screen-space support radius (px)
    # object-only pose residual grads
    delta_translation: np.ndarray | None = None
    delta_yaw: float | None = None


@dataclass
class SceneGrads:
    models: dict                   # key -> ModelGrads ("background" or object id)
    sky_faces: np.ndarray | None   # (6, R, R, 3) or None when sky disabled


def render_backward(scene, camera, timestep, upstream, config=None, ctx=None,
                    semantic_alpha_grad=True):
    """Backpropagate image-space gradients into every scene parameter.

    upstream: dict with optional (H, W, ...) arrays under keys 'color',
    'depth', 'opacity', 'semantic'; missing keys mean zero gradient.
    semantic_alpha_grad=False cuts the semantic channel's influence on
    blend weights, leaving only the per-Gaussian logit path (the training
    recipe's stop-gradient); leave True for mathematically exact Jacobians.
    """
    if ctx is None:
        _, ctx = render(scene, camera, timestep, config, want_ctx=True)
    config = ctx.config
    camera = ctx.camera
    world = ctx.world
    H, W = camera.height, camera.width
    M = world.sem.shape[1]

    d_color = np.ascontiguousarray(upstream.get("color", np.zeros((H, W, 3))), dtype=np.float64)
    d_depth = np.ascontiguousarray(upstream.get("depth", np.zeros((H, W))), dtype=np.float64)
    d_opac = np.array(upstream.get("opacity", np.zeros((H, W))), dtype=np.float64)
    d_sem = np.ascontiguousarray(
        upstream.get("semantic", np.zeros((H, W, M))), dtype=np.float64
    )
    if d_sem.shape[2] != M:
        raise ValueError("semantic upstream width != rendered class count")

    d_sky_faces = None
    if config.include_sky:
        # C = C_fg + T * C_sky and O = 1 - T, so the sky path adds
        # -sum_c dC*C_sky to the opacity-channel upstream
        d_opac = d_opac - np.sum(d_color * ctx.sky_rgb, axis=-1)
        d_sky_px = d_color * ctx.final_T[:, :, None]
        d_sky_faces = skymod.splat_cubemap_grad(
            scene.sky.faces.shape, ctx.ray_dirs, d_sky_px
        )

    prev_threads = set_threads(config.num_threads)
    try:
        order = ctx.order
        S = order.size
        E = ctx.entry_point.size
        g_mean2d_e = np.zeros((E, 2))
        g_conic_e = np.zeros((E, 3))
        g_color_e = np.zeros((E, 3))
        g_sem_e = np.zeros((E, M))
        g_depth_e = np.zeros(E)
        g_op_e = np.zeros(E)

        if E:
            _kernels.backward_tiles(
                H, W, config.tile_size, ctx.grid[0],
                ctx.starts, ctx.ends, ctx.entry_point,
                np.ascontiguousarray(ctx.mean2d[order]),
                np.ascontiguousarray(ctx.conic[order]),
                np.ascontiguousarray(ctx.radius[order]),
                np.ascontiguousarray(ctx.color_pt[order]),
                np.ascontiguousarray(world.sem[order]),
                np.ascontiguousarray(ctx.depth_pt[order]),
                np.ascontiguousarray(world.opacities[order]),
                config.alpha_clamp, config.alpha_threshold,
                ctx.final_T, ctx.last_entry,
                d_color, d_depth, d_opac, d_sem,
                1.0 if semantic_alpha_grad else 0.0,
                g_mean2d_e, g_conic_e, g_color_e, g_sem_e, g_depth_e, g_op_e,
            )

        P = world.count
        # entry -> sorted-point reduction (bincount sums in entry order:
        # fixed and sequential, so reruns are bitwise identical)
        def reduce_entries(g_entry, width=None):
            shape = (S,) if width is None else (S, width)
            if not E:
                acc = np.zeros(shape)
            elif width is None:
                acc = np.bincount(ctx.entry_point, weights=g_entry, minlength=S)
            else:
                acc = np.stack(
                    [np.bincount(ctx.entry_point, weights=g_entry[:, c], minlength=S)
                     for c in range(width)], axis=1)
            full = np.zeros((P,) + shape[1:])
            full[order] = acc
            return full

        g_mean2d = reduce_entries(g_mean2d_e, 2)
        g_conic = reduce_entries(g_conic_e, 3)
        g_color = reduce_entries(g_color_e, 3)
        g_sem = reduce_entries(g_sem_e, M) if M else np.zeros((P, 0))
        g_depth = reduce_entries(g_depth_e)
        g_op = reduce_entries(g_op_e)

        B_max = world.sh_t.shape[1]
        d_mu_w = np.zeros((P, 3))
        d_R_w = np.zeros((P, 3, 3))
        d_log_scales = np.zeros((P, 3))
        d_op_logit = np.zeros(P)
        d_sh_t = np.zeros((P, B_max, 3))
        if P:
            _kernels.point_backward(
                ctx.valid, ctx.p_cam, ctx.cov2d, ctx.conic,
                world.R_w, world.log_scales, world.opacities, world.sh_t,
                world.sh_degree, ctx.viewdir, world.mu_w, camera.center,
                ctx.clamp_mask, camera.R, camera.fx, camera.fy,
                g_mean2d, g_conic, g_color, g_depth, g_op,
                d_mu_w, d_R_w, d_log_scales, d_op_logit, d_sh_t,
            )

        models = {}
        for sl in world.slices:
            s, e = sl.start, sl.stop
            key = sl.key
            gs = scene.background if key == "background" else scene.objects[key].gaussians
            dmu = d_mu_w[s:e]
            dRw = d_R_w[s:e]
            dsh = d_sh_t[s:e, : sl.sh_dim]
            # Fourier expansion: d coeffs[k] = basis_k * d z
            d_app = np.einsum("k,nbc->nkbc", sl.time_basis, dsh)

            if sl.is_object:
                Rp = sl.R_eff
                d_positions = dmu @ Rp
                R_obj = quat_to_rotmat(gs.rotations)
                d_R_obj = np.einsum("ji,njk->nik", Rp, dRw)  # R'^T dRw
                d_rot = quat_rotmat_backward(gs.rotations, d_R_obj)
                # dR' = sum dRw R_o^T + sum dmu mu_o^T
                d_Reff = np.einsum("nij,nkj->ik", dRw, R_obj)
                d_Reff += np.einsum("ni,nj->ij", dmu, gs.positions)
                dRz = sl.R_track @ rotation_z_grad(sl.delta_yaw)
                d_yaw = float(np.sum(d_Reff * dRz))
                d_dT = dmu.sum(axis=0)
                d_semantic = g_sem[s:e, scene.vehicle_class_index] if M else np.zeros(e - s)
            else:
                d_positions = dmu
                d_rot = quat_rotmat_backward(gs.rotations, dRw)
                d_yaw = None
                d_dT = None
                d_semantic = g_sem[s:e] if M else np.zeros((e - s, scene.num_classes))

            models[key] = ModelGrads(
                positions=d_positions,
                log_scales=d_log_scales[s:e],
                rotations=d_rot,
                opacity_logits=d_op_logit[s:e],
                appearance=d_app,
                semantic=d_semantic,
                screen_grad_norm=np.linalg.norm(g_mean2d[s:e], axis=-1),
                visible=ctx.valid[s:e].astype(bool),
                max_radius=ctx.radius[s:e] * ctx.valid[s:e],
                delta_translation=d_dT,
                delta_yaw=d_yaw,
            )
        return SceneGrads(models=models, sky_faces=d_sky_faces)
    finally:
        numba.set_num_threads(prev_threads)
