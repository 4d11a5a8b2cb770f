"""Shared fixtures.

NUMBA_NUM_THREADS must be pinned before numba is first imported anywhere;
thread-count invariance tests need more workers than this box has cores
(oversubscription is fine, determinism must hold regardless).
"""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import hashlib

import numpy as np
import pytest

from urbansplat.geometry import Camera
from urbansplat.scene import (
    GaussianSet,
    ObjectNode,
    PoseTrack,
    SceneGraph,
    SkyCubemap,
    inverse_sigmoid,
)


def tree_hash(root):
    """Hash every file under root (names and bytes) into one digest."""
    h = hashlib.sha256()
    for base, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            h.update(name.encode())
            with open(os.path.join(base, name), "rb") as f:
                h.update(f.read())
    return h.hexdigest()


def random_gaussian_set(rng, n, fourier_k=1, sh_degree=1, num_classes=3,
                        kind="vector", center=(0.0, 0.0, 6.0), spread=1.5,
                        opacity_range=(0.2, 0.7)):
    center = np.asarray(center, dtype=np.float64)
    pos = center + rng.normal(0.0, spread, (n, 3))
    ls = rng.uniform(np.log(0.08), np.log(0.3), (n, 3))
    rot = rng.normal(0.0, 1.0, (n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    op = inverse_sigmoid(rng.uniform(*opacity_range, n))
    B = (sh_degree + 1) ** 2
    app = rng.normal(0.0, 0.3, (n, fourier_k, B, 3))
    app[:, 0, 0, :] += 0.8
    if kind == "vector":
        sem = rng.normal(0.0, 2.0, (n, num_classes))
    else:
        sem = rng.normal(0.0, 2.0, n)
    return GaussianSet(pos, ls, rot, op, app, sem,
                       sh_degree=sh_degree, fourier_k=fourier_k)


def micro_scene(seed, n_bg=6, n_obj=4, n_frames=3, num_classes=3,
                k_bg=1, k_obj=3, sky_res=4, width=24, height=18,
                opacity_range=(0.2, 0.7)):
    """Tiny scene with one moving object, random sky, low-res camera.

    Small enough that finite differencing the whole render is cheap."""
    rng = np.random.default_rng(seed)
    bg = random_gaussian_set(rng, n_bg, fourier_k=k_bg, num_classes=num_classes,
                             opacity_range=opacity_range)
    tr = np.zeros((n_frames, 3))
    tr[:, 0] = np.linspace(-0.5, 0.5, n_frames)
    tr[:, 2] = 5.0
    track = PoseTrack(
        rotations=np.stack([np.eye(3)] * n_frames),
        translations=tr,
        valid=np.ones(n_frames, dtype=bool),
        delta_translations=rng.normal(0.0, 0.05, (n_frames, 3)),
        delta_yaws=rng.normal(0.0, 0.05, n_frames),
    )
    obj = ObjectNode(
        gaussians=random_gaussian_set(rng, n_obj, fourier_k=k_obj, kind="scalar",
                                      center=(0.0, 0.0, 0.0), spread=0.4,
                                      opacity_range=opacity_range),
        track=track,
        box_dims=np.array([2.0, 2.0, 2.0]),
    )
    sky = SkyCubemap(np.clip(rng.uniform(0.2, 0.8, (6, sky_res, sky_res, 3)), 0, 1))
    scene = SceneGraph(background=bg, objects={"obj": obj}, sky=sky,
                       num_frames=n_frames, num_classes=num_classes,
                       vehicle_class_index=2)
    K = np.array([[20.0, 0.0, (width - 1) / 2.0],
                  [0.0, 20.0, (height - 1) / 2.0],
                  [0.0, 0.0, 1.0]])
    cam = Camera(K=K, R=np.eye(3), t=np.zeros(3), width=width, height=height)
    return scene, cam


def linear_probe(rng, cam, num_classes):
    """Random linear functional over every render output; its gradient
    with respect to any parameter is what render_backward must return."""
    H, W = cam.height, cam.width
    return {
        "color": rng.normal(0.0, 1.0, (H, W, 3)),
        "depth": rng.normal(0.0, 1.0, (H, W)),
        "opacity": rng.normal(0.0, 1.0, (H, W)),
        "semantic": rng.normal(0.0, 1.0, (H, W, num_classes)),
    }


def probe_loss(scene, cam, t, probe, cfg):
    from urbansplat.rasterizer import render

    out = render(scene, cam, t, cfg)
    return (
        np.sum(probe["color"] * out.color)
        + np.sum(probe["depth"] * out.depth)
        + np.sum(probe["opacity"] * out.opacity)
        + np.sum(probe["semantic"] * out.semantic)
    )


def fd_worst_rel(scene, cam, t, probe, cfg, arr, analytic, rng,
                 max_checks=10, h=1e-4):
    """Central-difference a sample of arr's entries against analytic.

    arr must be the live array inside scene so mutating it changes the
    render. The render is only piecewise smooth (alpha threshold,
    frustum guard, binning radius), so a step that straddles one of
    those boundaries measures the jump, not the slope: when the
    half-step estimate disagrees, the step is halved until two
    consecutive estimates agree. Returns the worst relative error over
    the sampled entries."""
    flat = arr.reshape(-1)
    g = np.asarray(analytic, dtype=np.float64).reshape(-1)
    assert g.shape == flat.shape
    idxs = np.arange(flat.size)
    if flat.size > max_checks:
        idxs = rng.choice(flat.size, max_checks, replace=False)

    def central(i, step):
        orig = flat[i]
        flat[i] = orig + step
        lp = probe_loss(scene, cam, t, probe, cfg)
        flat[i] = orig - step
        lm = probe_loss(scene, cam, t, probe, cfg)
        flat[i] = orig
        return (lp - lm) / (2.0 * step)

    worst = 0.0
    used = 0
    for i in idxs:
        fd = central(i, h)
        step = h
        for _ in range(3):
            half = central(i, step / 2.0)
            if abs(half - fd) <= 2e-2 * max(abs(half), abs(fd)) + 1e-6:
                break
            fd, step = half, step / 2.0
        else:
            continue  # no smooth neighborhood at these scales
        used += 1
        denom = max(abs(fd), abs(g[i]), 1e-6)
        worst = max(worst, abs(fd - g[i]) / denom)
    assert used > 0, "every sampled entry straddled a discontinuity"
    return worst


def gradient_param_table(scene, grads, timestep):
    """(name, live array, analytic gradient) for every learnable class.

    Per-frame pose residual grads come back as one frame's row/scalar;
    scatter them into full-track arrays so FD can probe any frame (the
    untouched frames must show zero gradient)."""
    bg = grads.models["background"]
    ob = grads.models["obj"]
    node = scene.objects["obj"]
    dT = np.zeros_like(node.track.delta_translations)
    dT[timestep] = ob.delta_translation
    dy = np.zeros_like(node.track.delta_yaws)
    dy[timestep] = ob.delta_yaw
    return [
        ("bg.positions", scene.background.positions, bg.positions),
        ("bg.log_scales", scene.background.log_scales, bg.log_scales),
        ("bg.rotations", scene.background.rotations, bg.rotations),
        ("bg.opacity_logits", scene.background.opacity_logits, bg.opacity_logits),
        ("bg.appearance", scene.background.appearance, bg.appearance),
        ("bg.semantic", scene.background.semantic, bg.semantic),
        ("obj.positions", node.gaussians.positions, ob.positions),
        ("obj.log_scales", node.gaussians.log_scales, ob.log_scales),
        ("obj.rotations", node.gaussians.rotations, ob.rotations),
        ("obj.opacity_logits", node.gaussians.opacity_logits, ob.opacity_logits),
        ("obj.appearance", node.gaussians.appearance, ob.appearance),
        ("obj.semantic", node.gaussians.semantic, ob.semantic),
        ("obj.delta_translation", node.track.delta_translations, dT),
        ("obj.delta_yaw", node.track.delta_yaws, dy),
        ("sky.faces", scene.sky.faces, grads.sky_faces),
    ]


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small generated dataset shared by ingest/training/cli tests."""
    from urbansplat.synth import SynthSpec, generate

    root = tmp_path_factory.mktemp("data") / "tiny"
    spec = SynthSpec(width=96, height=72, num_frames=6, seed=2, test_every=5)
    generate(spec, str(root))
    return str(root)
