"""Command-line entry points.

Exit codes: 0 success, 2 argument/validation problems, 1 runtime failure.
The SEED environment variable overrides the seed for train and synth.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np


def _camera_from_arg(arg, data_dir):
    """--camera accepts an integer frame-camera index (with --data) or a
    path to a camera JSON file."""
    from .geometry import Camera

    if os.path.exists(arg) and not arg.isdigit():
        with open(arg) as f:
            return Camera.from_json(json.load(f))
    try:
        idx = int(arg)
    except ValueError:
        raise SystemExit(f"--camera {arg!r} is neither an index nor a file") from None
    if data_dir is None:
        raise SystemExit("--camera by index needs --data for the camera track")
    from .dataset import load_dataset

    ds = load_dataset(data_dir)
    if not 0 <= idx < ds.num_frames:
        raise SystemExit(f"camera index {idx} outside [0, {ds.num_frames})")
    return ds.frames[idx].camera


def _seed_override(value):
    env = os.environ.get("SEED")
    return int(env) if env is not None else value


def cmd_train(args):
    from .dataset import load_dataset
    from .initialize import init_scene
    from .training import TrainConfig, train

    ds = load_dataset(args.data)
    cfg_kwargs = {}
    if args.config:
        with open(args.config) as f:
            raw = json.load(f)
        cfg_kwargs = dict(raw)
    cfg = TrainConfig(**{k: v for k, v in cfg_kwargs.items()
                         if k in TrainConfig.__dataclass_fields__})
    if args.iterations:
        cfg = replace(cfg, iterations=args.iterations)
    cfg = replace(cfg, seed=_seed_override(args.seed if args.seed is not None else cfg.seed))
    scene = init_scene(ds, seed=cfg.seed,
                       sky_resolution=cfg_kwargs.get("sky_resolution", 256))
    summary = train(ds, scene, cfg, out_dir=args.out, quiet=args.quiet,
                    optimize_poses=not args.no_pose_opt)
    elapsed = summary.pop("elapsed_s", None)
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    if elapsed is not None:
        summary["elapsed_s"] = elapsed
    print(json.dumps(summary))
    return 0


def cmd_render(args):
    from . import imio
    from .rasterizer import render, render_decomposed
    from .scene import load_checkpoint

    scene = load_checkpoint(args.ckpt)
    cam = _camera_from_arg(args.camera, args.data)
    if not 0 <= args.frame < scene.num_frames:
        raise SystemExit(f"--frame {args.frame} outside [0, {scene.num_frames})")
    if args.target:
        out = render_decomposed(scene, cam, args.frame, tuple(args.target))
    else:
        out = render(scene, cam, args.frame)
    imio.write_png(args.out, out.color)
    return 0


def cmd_eval(args):
    from . import imio
    from .dataset import load_dataset
    from .scene import load_checkpoint
    from .training import evaluate

    scene = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    if args.split == "test":
        idx = ds.split["test"]
    elif args.split == "train":
        idx = ds.split["train"]
    else:
        idx = list(range(ds.num_frames))
    if not idx:
        raise SystemExit(f"split {args.split!r} is empty")
    report, renders = evaluate(scene, ds, idx)
    img_dir = os.path.splitext(args.report)[0] + "_images"
    os.makedirs(img_dir, exist_ok=True)
    for i, out in renders.items():
        imio.write_png(os.path.join(img_dir, f"{i:04d}.png"), out.color)
    report["images_dir"] = img_dir

    def jsonable(x):
        if isinstance(x, float) and not np.isfinite(x):
            return "inf" if x > 0 else "-inf"
        return x

    with open(args.report, "w") as f:
        json.dump(report, f, indent=2, default=str)
    print(json.dumps({k: jsonable(v) for k, v in report.items() if k != "frames"}))
    return 0


def cmd_edit(args):
    from . import imio
    from .editing import EditScript, apply_edit
    from .rasterizer import render
    from .scene import load_checkpoint, save_checkpoint

    scene = load_checkpoint(args.ckpt)
    edited = apply_edit(scene, EditScript.from_file(args.script))
    if args.save_ckpt:
        save_checkpoint(edited, args.save_ckpt)
    if args.out:
        cam = _camera_from_arg(args.camera, args.data)
        out = render(edited, cam, args.frame)
        imio.write_png(args.out, out.color)
    return 0


def cmd_decompose(args):
    from . import imio
    from .rasterizer import render_decomposed
    from .scene import load_checkpoint

    scene = load_checkpoint(args.ckpt)
    cam = _camera_from_arg(args.camera, args.data)
    keys = ["background"] + scene.object_ids()
    if args.target not in keys:
        raise SystemExit(f"--target must be one of {keys}")
    out = render_decomposed(scene, cam, args.frame, args.target)
    imio.write_png(args.out, out.color)
    return 0


def cmd_synth(args):
    from .synth import SynthSpec, generate, perturb

    spec = SynthSpec.from_file(args.spec) if args.spec else SynthSpec()
    spec.seed = _seed_override(spec.seed)
    generate(spec, args.out)
    if args.perturb:
        sigma_t, sigma_yaw = args.perturb
        perturb(args.out, sigma_t=float(sigma_t), sigma_yaw_deg=float(sigma_yaw),
                seed=spec.seed)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="urbansplat")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="optimize a scene from a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON with TrainConfig overrides")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-pose-opt", action="store_true")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render a checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--frame", type=int, required=True)
    r.add_argument("--camera", required=True,
                   help="frame index (with --data) or camera JSON path")
    r.add_argument("--out", required=True)
    r.add_argument("--data")
    r.add_argument("--target", nargs="*", help="subset of models to draw")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="score a checkpoint against a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=["test", "train", "all"])
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("edit", help="apply an edit script, optionally render")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--script", required=True)
    d.add_argument("--frame", type=int, default=0)
    d.add_argument("--camera")
    d.add_argument("--out")
    d.add_argument("--data")
    d.add_argument("--save-ckpt")
    d.set_defaults(func=cmd_edit)

    c = sub.add_parser("decompose", help="render one model in isolation")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--target", required=True)
    c.add_argument("--frame", type=int, required=True)
    c.add_argument("--camera", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--data")
    c.set_defaults(func=cmd_decompose)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--spec", help="SynthSpec JSON; defaults apply if omitted")
    s.add_argument("--out", required=True)
    s.add_argument("--perturb", nargs=2, metavar=("SIGMA_T", "SIGMA_YAW_DEG"),
                   help="corrupt tracklet poses after generation")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except SystemExit as e:
        if isinstance(e.code, str) or e.code is None:
            print(e, file=sys.stderr)
            return 2
        return e.code
    except (FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # pragma: no cover - defensive
        print(f"fatal: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
