"""Optimization loop: Adam over every scene parameter group, adaptive
density control (clone/split/prune), per-object box containment pruning,
pose residual refinement, and the composite loss.

All randomness (frame order, split sampling, box-prune sampling) flows
from one seeded generator, and every kernel is deterministic, so a run is
reproducible bit for bit from (dataset, config).
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from . import metrics as me
from .dataset import project_lidar_depth
from .geometry import quat_to_rotmat
from .rasterizer import RenderConfig, render, render_backward
from .scene import inverse_sigmoid, save_checkpoint, sigmoid


@dataclass
class LossWeights:
    ssim_mix: float = 0.2       # D-SSIM share inside the color loss
    depth: float = 0.01
    sky: float = 0.05
    semantic: float = 0.1
    opacity_reg: float = 0.1


@dataclass
class TrainConfig:
    iterations: int = 30000
    seed: int = 0
    # learning rates (exp-decayed entries give (initial, final))
    lr_position: float = 1.6e-4          # scaled by model extent, decays 100x
    lr_position_final_scale: float = 0.01
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_appearance: float = 2.5e-3
    lr_semantic: float = 1e-2
    lr_pose_t: tuple = (0.02, 2e-4)
    lr_pose_yaw: tuple = (1e-2, 5e-4)
    # object Gaussians stay frozen this many iterations so pose residuals
    # align against fixed geometry; otherwise the cloud itself absorbs the
    # mean tracker error (it gets gradient every step, each frame's
    # residual only when its frame is drawn)
    pose_warmup: int = 300
    lr_sky: tuple = (1e-2, 1e-4)
    # adaptive density control
    densify_start: int = 500
    densify_end: int = 15000
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    split_factor: float = 1.6
    split_children: int = 2
    prune_opacity: float = 0.005
    big_point_px: float = 20.0
    big_point_world: float = 0.1         # x extent
    opacity_reset_interval: int = 3000   # 0 disables
    box_prune_samples: int = 32
    box_prune_factor: float = 1.0
    background_extent: float = 20.0
    # loss switches resolve automatically from data availability
    weights: LossWeights = field(default_factory=LossWeights)
    render: RenderConfig = field(default_factory=RenderConfig)
    checkpoint_every: int = 0            # 0 = final only
    log_every: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15


def exp_lr(step, max_steps, lr_init, lr_final):
    if max_steps <= 0:
        return lr_init
    t = min(max(step / max_steps, 0.0), 1.0)
    return float(lr_init * (lr_final / lr_init) ** t)


class Adam:
    """Per-array Adam with reindexable state (densification moves rows)."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def step(self, key, param, grad, lr):
        st = self.state.get(key)
        if st is None:
            st = {"m": np.zeros_like(param), "v": np.zeros_like(param), "t": 0}
            self.state[key] = st
        st["t"] += 1
        st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * grad
        st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * grad * grad
        m_hat = st["m"] / (1 - self.beta1 ** st["t"])
        v_hat = st["v"] / (1 - self.beta2 ** st["t"])
        param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def remap(self, key, keep_idx, n_added):
        st = self.state.get(key)
        if st is None:
            return
        for name in ("m", "v"):
            old = st[name]
            new = np.zeros((len(keep_idx) + n_added,) + old.shape[1:], dtype=old.dtype)
            new[: len(keep_idx)] = old[keep_idx]
            st[name] = new

    def reset(self, key):
        st = self.state.get(key)
        if st is not None:
            st["m"][:] = 0.0
            st["v"][:] = 0.0


COLUMNS = ("positions", "log_scales", "rotations", "opacity_logits",
           "appearance", "semantic")


class DensifyStats:
    def __init__(self, n):
        self.grad_accum = np.zeros(n)
        self.denom = np.zeros(n)
        self.max_radius = np.zeros(n)

    def update(self, mg):
        vis = mg.visible
        self.grad_accum[vis] += mg.screen_grad_norm[vis]
        self.denom[vis] += 1.0
        self.max_radius = np.maximum(self.max_radius, mg.max_radius)


def _split_offsets(gs, mask, rng):
    """Sample positions from each split parent's own covariance."""
    idx = np.nonzero(mask)[0]
    eps = rng.standard_normal((len(idx), 3))
    R = quat_to_rotmat(gs.rotations[idx])
    M = R * np.exp(gs.log_scales[idx])[:, None, :]
    return gs.positions[idx] + np.einsum("nij,nj->ni", M, eps)


def densify_and_prune(gs, stats, extent, cfg, rng, iteration):
    """One adaptive-density step for one model.

    Returns (new_set, keep_idx, n_added). keep_idx are surviving original
    rows (clones/splits append after them, optimizer state starts at zero
    for appended rows)."""
    n = gs.count
    avg = np.where(stats.denom > 0, stats.grad_accum / np.maximum(stats.denom, 1), 0.0)
    world_size = np.exp(gs.log_scales).max(axis=1)
    hot = avg >= cfg.densify_grad_threshold
    clone_mask = hot & (world_size <= cfg.percent_dense * extent)
    split_mask = hot & (world_size > cfg.percent_dense * extent)

    new_rows = {c: [] for c in COLUMNS}
    n_children = cfg.split_children
    if clone_mask.any():
        for c in COLUMNS:
            new_rows[c].append(getattr(gs, c)[clone_mask])
    if split_mask.any():
        child_ls = gs.log_scales[split_mask] - np.log(cfg.split_factor)
        for _ in range(n_children):
            pos = _split_offsets(gs, split_mask, rng)
            new_rows["positions"].append(pos)
            new_rows["log_scales"].append(child_ls)
            for c in ("rotations", "opacity_logits", "appearance", "semantic"):
                new_rows[c].append(getattr(gs, c)[split_mask])

    prune = sigmoid(gs.opacity_logits) < cfg.prune_opacity
    if cfg.opacity_reset_interval and iteration > cfg.opacity_reset_interval:
        prune |= stats.max_radius > cfg.big_point_px
        prune |= world_size > cfg.big_point_world * extent
    prune |= split_mask  # split parents are replaced by their children
    keep_idx = np.nonzero(~prune)[0]

    cols = {}
    for c in COLUMNS:
        parts = [getattr(gs, c)[keep_idx]] + new_rows[c]
        cols[c] = np.concatenate(parts) if len(parts) > 1 else parts[0]
    n_added = cols["positions"].shape[0] - len(keep_idx)
    new_gs = replace_set(gs, cols)
    return new_gs, keep_idx, n_added


def replace_set(gs, cols):
    from .scene import GaussianSet

    return GaussianSet(sh_degree=gs.sh_degree, fourier_k=gs.fourier_k, **cols)


def box_prune_mask(gs, box_dims, factor, n_samples, rng):
    """Monte-Carlo containment: sample each Gaussian's own distribution and
    drop it when most of its mass sits outside the (scaled) box."""
    n = gs.count
    if n == 0:
        return np.zeros(0, dtype=bool)
    R = quat_to_rotmat(gs.rotations)
    M = R * np.exp(gs.log_scales)[:, None, :]
    eps = rng.standard_normal((n, n_samples, 3))
    samples = gs.positions[:, None, :] + np.einsum("nij,nsj->nsi", M, eps)
    half = factor * np.asarray(box_dims) / 2.0
    inside = np.all(np.abs(samples) <= half, axis=2)
    return inside.mean(axis=1) < 0.5


def _pose_yaw_error(R_clean, R_track, delta_yaw):
    from .geometry import rotation_z

    R_eff = R_track @ rotation_z(delta_yaw)
    E = R_clean.T @ R_eff
    return abs(np.arctan2(E[1, 0] - E[0, 1], E[0, 0] + E[1, 1]))


def pose_residual_errors(scene, dataset):
    """Median translation / yaw error of the effective poses against the
    clean poses stored by the perturbation tool. None without ground truth."""
    if not dataset.true_poses:
        return None
    t_errs, y_errs = [], []
    for oid, clean in dataset.true_poses.items():
        node = scene.objects.get(oid)
        if node is None:
            continue
        T_clean = np.array(clean["translations"], dtype=np.float64)
        R_clean = np.array(clean["rotations"], dtype=np.float64)
        tr = node.track
        for t in range(tr.num_frames):
            if not tr.valid[t]:
                continue
            T_eff = tr.translations[t] + tr.delta_translations[t]
            t_errs.append(float(np.linalg.norm(T_eff - T_clean[t])))
            y_errs.append(_pose_yaw_error(R_clean[t], tr.rotations[t], tr.delta_yaws[t]))
    if not t_errs:
        return None
    return {
        "median_translation_m": float(np.median(t_errs)),
        "median_yaw_rad": float(np.median(y_errs)),
        "median_yaw_deg": float(np.degrees(np.median(y_errs))),
    }


def train(dataset, scene, config=None, out_dir=None, quiet=True,
          optimize_poses=True):
    """Run the full loop; mutates scene in place and returns a summary.

    Loss terms switch on automatically: depth when sweeps are non-empty,
    sky BCE when masks exist, semantic CE when labels exist. The opacity
    entropy regularizer on object Gaussians starts after densification
    ends."""
    cfg = config or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    adam = Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    w = cfg.weights

    train_idx = dataset.split["train"] or list(range(dataset.num_frames))
    frames = dataset.frames
    use_depth = any(frames[i].lidar.size for i in train_idx) and w.depth > 0
    use_sky = any(frames[i].sky_mask is not None for i in train_idx) and w.sky > 0
    use_sem = any(frames[i].semantic is not None for i in train_idx) and w.semantic > 0

    depth_maps = {}
    if use_depth:
        for i in train_idx:
            depth_maps[i] = project_lidar_depth(frames[i].lidar, frames[i].camera)

    render_cfg = replace(cfg.render, render_semantics=use_sem)

    stats = {"background": DensifyStats(scene.background.count)}
    for oid, node in scene.objects.items():
        stats[oid] = DensifyStats(node.gaussians.count)

    def model_of(key):
        return scene.background if key == "background" else scene.objects[key].gaussians

    def extent_of(key):
        if key == "background":
            return cfg.background_extent
        return float(np.linalg.norm(scene.objects[key].box_dims))

    log_path = os.path.join(out_dir, "metrics.jsonl") if out_dir else None
    if log_path:
        os.makedirs(out_dir, exist_ok=True)
        log_f = open(log_path, "w")
    else:
        log_f = None

    schedule_order = []
    t_start = time.perf_counter()
    epoch_order = []
    for it in range(1, cfg.iterations + 1):
        if not epoch_order:
            epoch_order = list(rng.permutation(train_idx))
        fi = int(epoch_order.pop())
        frame = frames[fi]
        t = frame.timestep

        out, ctx = render(scene, frame.camera, t, render_cfg, want_ctx=True)

        upstream = {}
        v_color, g_color = L.color_loss(out.color, frame.image, w.ssim_mix)
        upstream["color"] = g_color
        total = v_color
        parts = {"color": v_color}
        if use_depth:
            dmap, dmask = depth_maps[fi]
            v_d, g_d = L.depth_loss(out.depth, dmap, dmask)
            upstream["depth"] = w.depth * g_d
            total += w.depth * v_d
            parts["depth"] = v_d
        if use_sky and frame.sky_mask is not None:
            v_s, g_s = L.sky_loss(out.opacity, frame.sky_mask)
            upstream["opacity"] = w.sky * g_s
            total += w.sky * v_s
            parts["sky"] = v_s
        if use_sem and frame.semantic is not None:
            v_m, g_m = L.semantic_loss(out.semantic, frame.semantic)
            upstream["semantic"] = w.semantic * g_m
            total += w.semantic * v_m
            parts["semantic"] = v_m

        grads = render_backward(
            scene, frame.camera, t, upstream, ctx=ctx,
            semantic_alpha_grad=False,
        )

        # opacity entropy on object Gaussians once densification settled
        reg_grads = {}
        if it > cfg.densify_end and w.opacity_reg > 0:
            for oid, node in scene.objects.items():
                o = sigmoid(node.gaussians.opacity_logits)
                v_r, g_r = L.opacity_entropy(o)
                reg_grads[oid] = w.opacity_reg * g_r * o * (1.0 - o)
                total += w.opacity_reg * v_r
                parts["opacity_reg"] = parts.get("opacity_reg", 0.0) + w.opacity_reg * v_r

        # --- parameter updates -------------------------------------------
        lr_pos_decay = exp_lr(it, cfg.iterations, 1.0, cfg.lr_position_final_scale)
        for key, mg in grads.models.items():
            gs = model_of(key)
            ext = extent_of(key)
            hold = (key != "background" and optimize_poses
                    and it <= cfg.pose_warmup)
            if not hold:
                adam.step((key, "positions"), gs.positions, mg.positions,
                          cfg.lr_position * ext * lr_pos_decay)
                adam.step((key, "log_scales"), gs.log_scales, mg.log_scales, cfg.lr_scale)
                adam.step((key, "rotations"), gs.rotations, mg.rotations, cfg.lr_rotation)
                op_grad = mg.opacity_logits
                if key in reg_grads:
                    op_grad = op_grad + reg_grads[key]
                adam.step((key, "opacity_logits"), gs.opacity_logits, op_grad, cfg.lr_opacity)
                adam.step((key, "appearance"), gs.appearance, mg.appearance, cfg.lr_appearance)
            if use_sem and not hold:
                adam.step((key, "semantic"), gs.semantic, mg.semantic, cfg.lr_semantic)
            if key != "background" and optimize_poses:
                # residuals are stepped as whole tracks with the gradient
                # scattered at the sampled frame; the momentum decay across
                # non-visits damps per-frame jitter, which the raised
                # initial rates already account for
                node = scene.objects[key]
                g_dt = np.zeros_like(node.track.delta_translations)
                g_dy = np.zeros_like(node.track.delta_yaws)
                g_dt[t] = mg.delta_translation
                g_dy[t] = mg.delta_yaw
                adam.step((key, "delta_translations"), node.track.delta_translations,
                          g_dt, exp_lr(it, cfg.iterations, *cfg.lr_pose_t))
                adam.step((key, "delta_yaws"), node.track.delta_yaws,
                          g_dy, exp_lr(it, cfg.iterations, *cfg.lr_pose_yaw))
        if grads.sky_faces is not None:
            adam.step(("sky", "faces"), scene.sky.faces, grads.sky_faces,
                      exp_lr(it, cfg.iterations, *cfg.lr_sky))
            np.clip(scene.sky.faces, 0.0, 1.0, out=scene.sky.faces)

        # --- density control ----------------------------------------------
        for key, mg in grads.models.items():
            stats[key].update(mg)

        if (cfg.densify_start <= it <= cfg.densify_end
                and it % cfg.densify_interval == 0):
            for key in list(grads.models.keys()):
                gs = model_of(key)
                new_gs, keep_idx, n_added = densify_and_prune(
                    gs, stats[key], extent_of(key), cfg, rng, it
                )
                if key != "background":
                    node = scene.objects[key]
                    drop = box_prune_mask(
                        new_gs, node.box_dims, cfg.box_prune_factor,
                        cfg.box_prune_samples, rng,
                    )
                    if drop.any():
                        full = np.arange(new_gs.count)
                        kept2 = full[~drop]
                        new_gs = new_gs.subset(~drop)
                        # compose the two reindexings for optimizer state
                        tmp = np.concatenate(
                            [keep_idx, -np.ones(n_added, dtype=np.int64)]
                        )[kept2]
                        keep_idx = tmp[tmp >= 0]
                        n_added = int((tmp < 0).sum())
                if key == "background":
                    scene.background = new_gs
                else:
                    scene.objects[key].gaussians = new_gs
                for c in COLUMNS:
                    adam.remap((key, c), keep_idx, n_added)
                stats[key] = DensifyStats(new_gs.count)

        if (cfg.opacity_reset_interval
                and it % cfg.opacity_reset_interval == 0
                and it <= cfg.densify_end):
            cap = float(inverse_sigmoid(0.01))
            for key in ["background"] + scene.object_ids():
                gs = model_of(key)
                np.minimum(gs.opacity_logits, cap, out=gs.opacity_logits)
                adam.reset((key, "opacity_logits"))

        if log_f and (it % cfg.log_every == 0 or it == cfg.iterations):
            # no wall-clock fields: the log must be byte-identical across
            # reruns with the same seed
            entry = {
                "iteration": it,
                "loss_total": float(total),
                **{f"loss_{k}": float(v) for k, v in parts.items()},
                "frame": fi,
                "gaussians": {k: int(model_of(k).count)
                              for k in ["background"] + scene.object_ids()},
            }
            log_f.write(json.dumps(entry) + "\n")
            log_f.flush()
        if not quiet and it % 200 == 0:
            print(f"iter {it}: loss {total:.5f}")

        if out_dir and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            save_checkpoint(scene, os.path.join(out_dir, f"ckpt_{it:06d}"))

    if log_f:
        log_f.close()
    if out_dir:
        save_checkpoint(scene, os.path.join(out_dir, "ckpt_final"))

    summary = {
        "iterations": cfg.iterations,
        "elapsed_s": time.perf_counter() - t_start,
        "gaussians": {k: int(model_of(k).count)
                      for k in ["background"] + scene.object_ids()},
    }
    pe = pose_residual_errors(scene, dataset)
    if pe:
        summary["pose_errors"] = pe
    return summary


def evaluate(scene, dataset, frame_indices=None, render_config=None):
    """Render the given frames and score them against ground truth."""
    idx = frame_indices
    if idx is None:
        idx = dataset.split["test"] or list(range(dataset.num_frames))
    cfg = render_config or RenderConfig()
    want_sem = any(dataset.frames[i].semantic is not None for i in idx)
    cfg = replace(cfg, render_semantics=want_sem)
    rows = []
    renders = {}
    for i in idx:
        frame = dataset.frames[i]
        out = render(scene, frame.camera, frame.timestep, cfg)
        row = {
            "frame": i,
            "psnr": me.psnr(out.color, frame.image),
            "ssim": me.ssim_metric(out.color, frame.image),
        }
        star = me.psnr_star(out.color, frame.image, scene, frame.camera, frame.timestep)
        row["psnr_star"] = star
        if frame.semantic is not None and out.semantic is not None:
            pred = np.argmax(out.semantic, axis=-1)
            row["miou"] = me.miou(pred, frame.semantic, dataset.num_classes)
        rows.append(row)
        renders[i] = out
    def agg(key):
        vals = [r[key] for r in rows if r.get(key) is not None
                and np.isfinite(r.get(key))]
        return float(np.mean(vals)) if vals else None
    report = {
        "frames": rows,
        "mean_psnr": agg("psnr"),
        "mean_ssim": agg("ssim"),
        "mean_psnr_star": agg("psnr_star"),
        "mean_miou": agg("miou"),
    }
    return report, renders
