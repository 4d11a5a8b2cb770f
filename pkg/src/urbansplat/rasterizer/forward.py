"""Render orchestration: scene graph -> flat world-space point set ->
projection -> depth sort -> tile binning -> blended images.

The flat set concatenates background points followed by objects in scene
order; a point's index in that concatenation is its source index, which is
also the tie-break key of the global depth sort (np.lexsort), so the blend
order and therefore the output is independent of input permutation and of
thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .. import sky as skymod
from ..geometry import (
    ALPHA_CLAMP,
    ALPHA_THRESHOLD,
    FRUSTUM_GUARD,
    LOWPASS_2D,
    effective_pose,
    fourier_basis,
    quat_to_rotmat,
)
from . import _kernels


@dataclass
class RenderConfig:
    tile_size: int = 16
    saturation_stop: float = 1e-4
    alpha_threshold: float = ALPHA_THRESHOLD
    alpha_clamp: float = ALPHA_CLAMP
    lowpass: float = LOWPASS_2D
    frustum_guard: float = FRUSTUM_GUARD
    include_sky: bool = True
    render_semantics: bool = False
    model_filter: tuple | None = None  # keys to keep: "background" or object ids
    num_threads: int = 0               # 0 = leave numba's current setting


@dataclass
class ModelSlice:
    key: str
    start: int
    stop: int
    is_object: bool
    sh_dim: int
    time_basis: np.ndarray            # (k,) Fourier features at this frame
    R_eff: np.ndarray | None = None   # (3,3) effective object rotation
    T_eff: np.ndarray | None = None
    R_track: np.ndarray | None = None
    delta_yaw: float = 0.0

    @property
    def count(self):
        return self.stop - self.start


@dataclass
class WorldSet:
    """Scene flattened to world space at one timestep."""

    mu_w: np.ndarray
    R_w: np.ndarray
    log_scales: np.ndarray
    opacities: np.ndarray
    sh_t: np.ndarray       # (P, B_max, 3), zero-padded past each model's sh_dim
    sem: np.ndarray        # (P, M) blended-logit rows, or (P, 0)
    sh_degree: int
    slices: list

    @property
    def count(self):
        return self.mu_w.shape[0]


@dataclass
class RenderOutputs:
    color: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray          # 1 - transmittance
    transmittance: np.ndarray
    semantic: np.ndarray | None
    sky_color: np.ndarray | None
    visible: dict                # model key -> visible-point count


@dataclass
class RenderContext:
    """Forward intermediates reused by the backward pass."""

    config: RenderConfig
    camera: object
    timestep: int
    world: WorldSet
    valid: np.ndarray
    order: np.ndarray            # sorted-survivor -> world index
    p_cam: np.ndarray
    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    radius: np.ndarray
    depth_pt: np.ndarray
    color_pt: np.ndarray
    clamp_mask: np.ndarray
    viewdir: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    entry_point: np.ndarray
    grid: tuple
    final_T: np.ndarray
    last_entry: np.ndarray
    sky_rgb: np.ndarray | None
    ray_dirs: np.ndarray | None


def set_threads(n):
    """Clamp-and-set numba's worker count; returns the previous value."""
    prev = numba.get_num_threads()
    if n and n > 0:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
    return prev


def assemble_world_set(scene, timestep, model_filter=None, with_semantics=True):
    """Flatten the scene at one frame: object Gaussians are carried into
    world space by their effective (residual-refined) pose; appearance
    coefficients are collapsed over the Fourier axis at this timestep."""
    if not 0 <= timestep < scene.num_frames:
        raise ValueError(f"timestep {timestep} outside [0, {scene.num_frames})")
    keys = ["background"] + scene.object_ids()
    if model_filter is not None:
        wanted = set(model_filter)
        unknown = wanted - set(keys)
        if unknown:
            raise KeyError(f"unknown model keys {sorted(unknown)}")
        keys = [k for k in keys if k in wanted]

    degrees = [scene.background.sh_degree] + [
        o.gaussians.sh_degree for o in scene.objects.values()
    ]
    sh_degree = max(degrees)
    B_max = (sh_degree + 1) ** 2
    M = scene.num_classes if with_semantics else 0

    parts = {k: [] for k in ("mu", "R", "ls", "op", "sh", "sem")}
    slices = []
    cursor = 0
    for key in keys:
        if key == "background":
            gs = scene.background
            n = gs.count
            basis = fourier_basis(gs.fourier_k, timestep, scene.num_frames)
            mu = gs.positions
            Rw = quat_to_rotmat(gs.rotations) if n else np.zeros((0, 3, 3))
            sem_rows = gs.semantic[:, :M] if M else np.zeros((n, 0))
            sl = ModelSlice(
                key=key, start=cursor, stop=cursor + n, is_object=False,
                sh_dim=gs.sh_dim, time_basis=basis,
            )
        else:
            node = scene.objects[key]
            gs = node.gaussians
            track = node.track
            if not track.valid[timestep]:
                continue  # object absent this frame
            n = gs.count
            basis = fourier_basis(gs.fourier_k, timestep, scene.num_frames)
            R_eff, T_eff = effective_pose(
                track.rotations[timestep], track.translations[timestep],
                track.delta_yaws[timestep], track.delta_translations[timestep],
            )
            mu = gs.positions @ R_eff.T + T_eff
            Rw = R_eff @ quat_to_rotmat(gs.rotations) if n else np.zeros((0, 3, 3))
            sem_rows = np.zeros((n, M))
            if M:
                sem_rows[:, scene.vehicle_class_index] = gs.semantic
            sl = ModelSlice(
                key=key, start=cursor, stop=cursor + n, is_object=True,
                sh_dim=gs.sh_dim, time_basis=basis,
                R_eff=R_eff, T_eff=T_eff,
                R_track=track.rotations[timestep].copy(),
                delta_yaw=float(track.delta_yaws[timestep]),
            )
        sh_t = np.einsum("nkbc,k->nbc", gs.appearance, basis)
        if gs.sh_dim < B_max:
            pad = np.zeros((n, B_max, 3))
            pad[:, : gs.sh_dim] = sh_t
            sh_t = pad
        parts["mu"].append(mu)
        parts["R"].append(Rw)
        parts["ls"].append(gs.log_scales)
        parts["op"].append(gs.opacity_logits)
        parts["sh"].append(sh_t)
        parts["sem"].append(sem_rows)
        slices.append(sl)
        cursor += n

    def cat(lst, shape_tail):
        if not lst:
            return np.zeros((0,) + shape_tail)
        return np.ascontiguousarray(np.concatenate(lst, axis=0))

    logits = cat(parts["op"], ())
    from ..scene import sigmoid

    return WorldSet(
        mu_w=cat(parts["mu"], (3,)),
        R_w=cat(parts["R"], (3, 3)),
        log_scales=cat(parts["ls"], (3,)),
        opacities=sigmoid(logits),
        sh_t=cat(parts["sh"], (B_max, 3)),
        sem=cat(parts["sem"], (M,)),
        sh_degree=sh_degree,
        slices=slices,
    )


def _project(world, camera, config):
    P = world.count
    valid = np.zeros(P, dtype=np.uint8)
    p_cam = np.zeros((P, 3))
    mean2d = np.zeros((P, 2))
    cov2d = np.zeros((P, 3))
    conic = np.zeros((P, 3))
    radius = np.zeros(P)
    depth = np.zeros(P)
    color = np.zeros((P, 3))
    clamp_mask = np.zeros((P, 3), dtype=np.uint8)
    viewdir = np.zeros((P, 3))
    if P:
        _kernels.project_points(
            world.mu_w, world.R_w, world.log_scales, world.opacities,
            world.sh_t, world.sh_degree,
            camera.R, camera.t, camera.center,
            camera.fx, camera.fy, camera.cx, camera.cy,
            camera.width, camera.height, camera.near_clip,
            config.frustum_guard, config.lowpass, config.alpha_threshold,
            valid, p_cam, mean2d, cov2d, conic, radius, depth, color,
            clamp_mask, viewdir,
        )
    return valid, p_cam, mean2d, cov2d, conic, radius, depth, color, clamp_mask, viewdir


def _bin_entries(mean2d_s, radius_s, grid, tile_size):
    gx, gy = grid
    S = mean2d_s.shape[0]
    counts = np.zeros(S, dtype=np.int64)
    if S:
        _kernels.count_tile_hits(mean2d_s, radius_s, gx, gy, tile_size, counts)
    offsets = np.zeros(S + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    E = int(offsets[-1])
    entry_tile = np.zeros(E, dtype=np.int64)
    entry_point = np.zeros(E, dtype=np.int64)
    if E:
        _kernels.fill_tile_entries(
            mean2d_s, radius_s, gx, gy, tile_size, offsets[:-1],
            entry_tile, entry_point,
        )
        order = np.argsort(entry_tile, kind="stable")
        entry_tile = entry_tile[order]
        entry_point = entry_point[order]
    tile_ids = np.arange(gx * gy, dtype=np.int64)
    starts = np.searchsorted(entry_tile, tile_ids, side="left")
    ends = np.searchsorted(entry_tile, tile_ids, side="right")
    return starts.astype(np.int64), ends.astype(np.int64), entry_point


def render(scene, camera, timestep, config=None, want_ctx=False):
    """Render the scene through camera at one frame.

    Returns RenderOutputs, or (RenderOutputs, RenderContext) when the
    caller intends to run the backward pass on the same view.
    """
    config = config or RenderConfig()
    prev_threads = set_threads(config.num_threads)
    try:
        world = assemble_world_set(
            scene, timestep, config.model_filter, config.render_semantics
        )
        (valid, p_cam, mean2d, cov2d, conic, radius, depth_pt, color_pt,
         clamp_mask, viewdir) = _project(world, camera, config)

        idx = np.nonzero(valid)[0]
        # depth-ascending, source-index tie-break; stable under permutation
        order = idx[np.lexsort((idx, depth_pt[idx]))]

        H, W = camera.height, camera.width
        ts = config.tile_size
        gx = (W + ts - 1) // ts
        gy = (H + ts - 1) // ts
        M = world.sem.shape[1]

        mean2d_s = np.ascontiguousarray(mean2d[order])
        conic_s = np.ascontiguousarray(conic[order])
        radius_s = np.ascontiguousarray(radius[order])
        color_s = np.ascontiguousarray(color_pt[order])
        sem_s = np.ascontiguousarray(world.sem[order])
        depth_s = np.ascontiguousarray(depth_pt[order])
        opac_s = np.ascontiguousarray(world.opacities[order])

        starts, ends, entry_point = _bin_entries(mean2d_s, radius_s, (gx, gy), ts)

        out_color = np.zeros((H, W, 3))
        out_depth = np.zeros((H, W))
        out_sem = np.zeros((H, W, M))
        out_T = np.ones((H, W))
        out_last = np.full((H, W), -1, dtype=np.int64)
        if order.size:
            _kernels.forward_tiles(
                H, W, ts, gx, starts, ends, entry_point,
                mean2d_s, conic_s, radius_s, color_s, sem_s, depth_s, opac_s,
                config.saturation_stop, config.alpha_clamp, config.alpha_threshold,
                out_color, out_depth, out_sem, out_T, out_last,
            )

        sky_rgb = None
        ray_dirs = None
        color_final = out_color
        if config.include_sky:
            ray_dirs = camera.ray_directions()
            sky_rgb = skymod.sample_cubemap(scene.sky.faces, ray_dirs)
            color_final = out_color + out_T[:, :, None] * sky_rgb

        visible = {
            sl.key: int(valid[sl.start : sl.stop].sum()) for sl in world.slices
        }
        outputs = RenderOutputs(
            color=color_final,
            depth=out_depth,
            opacity=1.0 - out_T,
            transmittance=out_T,
            semantic=out_sem if config.render_semantics else None,
            sky_color=sky_rgb,
            visible=visible,
        )
        if not want_ctx:
            return outputs
        ctx = RenderContext(
            config=config, camera=camera, timestep=timestep, world=world,
            valid=valid, order=order, p_cam=p_cam, mean2d=mean2d, cov2d=cov2d,
            conic=conic, radius=radius, depth_pt=depth_pt, color_pt=color_pt,
            clamp_mask=clamp_mask, viewdir=viewdir,
            starts=starts, ends=ends, entry_point=entry_point, grid=(gx, gy),
            final_T=out_T, last_entry=out_last,
            sky_rgb=sky_rgb, ray_dirs=ray_dirs,
        )
        return outputs, ctx
    finally:
        numba.set_num_threads(prev_threads)


def render_decomposed(scene, camera, timestep, target, config=None):
    """Render a subset of the scene: 'background', one object id, or an
    iterable of keys. Sky stays on unless the config disables it."""
    config = config or RenderConfig()
    if isinstance(target, str):
        target = (target,)
    from dataclasses import replace

    return render(scene, camera, timestep, replace(config, model_filter=tuple(target)))
