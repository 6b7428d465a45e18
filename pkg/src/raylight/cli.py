"""Command-line entry point: train, render, eval, ablate, serve, gen-toy.

Exit codes: 0 success, 1 runtime failure (divergence, corrupt checkpoint),
2 usage error (bad paths, bad config keys). All file outputs are written
atomically so an interrupted run never leaves a truncated artifact.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

import dataclasses

from . import dataio, pipeline
from .geometry import Aabb, CameraIntrinsics, Pose, pose_from_orbit


class UsageError(Exception):
    pass


def _build_parser():
    p = argparse.ArgumentParser(prog="raylight", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scale=False):
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", default=None, help="output directory")
        if scale:
            sp.add_argument("--scale", type=int, choices=(1, 2, 4, 8), default=1)

    sp = sub.add_parser("train", help="train a model on a dataset directory")
    sp.add_argument("--config", default=None, help="JSON config file")
    sp.add_argument("--preset", default="tiny-test", help="base preset when no --config")
    sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    sp.add_argument("--data", required=True, help="Blender-convention dataset directory")
    sp.add_argument("--downsample", type=int, default=1)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("render", help="render one view from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--orbit", default=None, metavar="AZ,EL,RADIUS")
    sp.add_argument("--pose-file", default=None, help="JSON or text file with 16 numbers")
    sp.add_argument("--width", type=int, default=None)
    sp.add_argument("--height", type=int, default=None)
    sp.add_argument("--out-image", default=None, help="output PNG path")
    common(sp, scale=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint against a split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--downsample", type=int, default=1)
    sp.add_argument("--json", action="store_true", help="one JSON record per view")
    common(sp, scale=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="mask top-k grid levels and re-evaluate")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="val")
    sp.add_argument("--downsample", type=int, default=1)
    sp.add_argument("--ks", default=None, help="comma-separated k values (default 0,L/2,L)")
    common(sp, scale=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("serve", help="HTTP render service for a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--port", type=int, default=7860)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("gen-toy", help="generate a procedural toy dataset")
    sp.add_argument("--primitives", type=int, default=3)
    sp.add_argument("--train-views", type=int, default=20)
    sp.add_argument("--val-views", type=int, default=4)
    sp.add_argument("--test-views", type=int, default=4)
    sp.add_argument("--width", type=int, default=64)
    sp.add_argument("--height", type=int, default=64)
    sp.add_argument("--constant-color", default=None, metavar="R,G,B")
    common(sp)
    sp.set_defaults(func=cmd_gen_toy)
    return p


def _require_dir(path, what):
    if path is None:
        raise UsageError(f"{what} directory is required")
    if not os.path.isdir(path):
        raise UsageError(f"{what} directory {path!r} does not exist")
    return path


def _load_split(args, split, required=True):
    tpath = os.path.join(args.data, f"transforms_{split}.json")
    if not os.path.exists(tpath):
        if required:
            raise UsageError(f"split {split!r} not found at {tpath}")
        return None
    background, aabb = _dataset_conventions(args.data)
    return dataio.load_blender_dataset(
        args.data,
        split=split,
        downsample=args.downsample,
        background=background,
        aabb=aabb,
    )


def _dataset_conventions(data_dir):
    # toy datasets record their compositing background and scene bounds;
    # Blender scenes follow the white-background convention with default bounds
    spec_path = os.path.join(data_dir, "toy_spec.json")
    if os.path.exists(spec_path):
        with open(spec_path, "r", encoding="utf-8") as f:
            d = json.load(f)
        bounds = d.get("bounds")
        aabb = (
            Aabb(np.asarray(bounds["min"]), np.asarray(bounds["max"]))
            if bounds
            else None
        )
        return tuple(d.get("background", (0.0, 0.0, 0.0))), aabb
    return (1.0, 1.0, 1.0), None


def cmd_train(args):
    if args.config is not None:
        if not os.path.exists(args.config):
            raise UsageError(f"config file {args.config!r} does not exist")
        cfg = pipeline.load_config(args.config)
    else:
        try:
            cfg = pipeline.get_preset(args.preset)
        except ValueError as e:
            raise UsageError(str(e)) from e
    try:
        cfg = pipeline.apply_overrides(cfg, args.overrides)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    _require_dir(args.data, "data")
    out_dir = args.out or "out"
    train_data = _load_split(args, "train")
    val_data = _load_split(args, "val", required=False)

    if args.resume is not None and not os.path.exists(args.resume):
        raise UsageError(f"resume checkpoint {args.resume!r} does not exist")
    model, log = pipeline.train(
        cfg,
        train_data,
        val_data=val_data,
        out_dir=out_dir,
        resume=args.resume,
        threads=args.threads,
    )
    last = log.records[-1] if log.records else {}
    if log.diverged:
        print(
            f"training diverged at step {last.get('step', '?')}; "
            f"last good checkpoint kept in {out_dir}",
            file=sys.stderr,
        )
        return 1
    print(
        f"trained {last.get('step', 0)} steps"
        f" (final loss {last.get('loss', float('nan')):.6f});"
        f" checkpoint in {out_dir}"
    )
    return 0


def _parse_orbit(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError("--orbit needs AZ,EL,RADIUS")
    try:
        az, el, radius = (float(x) for x in parts)
    except ValueError as e:
        raise UsageError(f"bad --orbit value: {e}") from e
    if radius <= 0:
        raise UsageError("--orbit radius must be positive")
    return pose_from_orbit(azimuth_deg=az, elevation_deg=el, radius=radius)


def _parse_pose_file(path):
    if not os.path.exists(path):
        raise UsageError(f"pose file {path!r} does not exist")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        vals = np.asarray(json.loads(text), dtype=np.float64)
    except (json.JSONDecodeError, ValueError):
        try:
            vals = np.asarray([float(x) for x in text.split()], dtype=np.float64)
        except ValueError as e:
            raise UsageError(f"pose file {path!r} is not 16 numbers: {e}") from e
    if vals.size != 16:
        raise UsageError(f"pose file {path!r} must hold 16 numbers, got {vals.size}")
    try:
        return Pose(vals.reshape(4, 4))
    except ValueError as e:
        raise UsageError(f"pose file {path!r}: {e}") from e


def _load_model(path):
    if not os.path.exists(path):
        raise UsageError(f"checkpoint {path!r} does not exist")
    ckpt = dataio.load_checkpoint(path)  # ValueError here is a runtime failure
    return ckpt, dataio.model_from_checkpoint(ckpt)


def cmd_render(args):
    if (args.orbit is None) == (args.pose_file is None):
        raise UsageError("exactly one of --orbit / --pose-file is required")
    pose = _parse_orbit(args.orbit) if args.orbit else _parse_pose_file(args.pose_file)
    ckpt, model = _load_model(args.checkpoint)
    intr = dataio.intrinsics_from_checkpoint(ckpt) or dataio.toy_intrinsics(256, 256)
    if args.width or args.height:
        w = args.width or intr.width
        h = args.height or intr.height
        # keep the checkpoint field of view at the new resolution
        intr = CameraIntrinsics(width=w, height=h, focal=intr.focal * (w / intr.width))
    img = pipeline.render_image(model, intr, pose, scale=args.scale, threads=args.threads)
    out_path = args.out_image
    if out_path is None:
        out_dir = args.out or "."
        os.makedirs(out_dir, exist_ok=True)
        out_path = os.path.join(out_dir, "render.png")
    dataio.save_png(out_path, img)
    print(f"wrote {out_path} ({img.shape[1]}x{img.shape[0]})")
    return 0


def cmd_eval(args):
    _require_dir(args.data, "data")
    data = _load_split(args, args.split)
    _, model = _load_model(args.checkpoint)
    metrics = pipeline.evaluate(model, data, scale=args.scale, threads=args.threads)
    if args.json:
        for v in metrics["views"]:
            print(json.dumps(v))
        print(json.dumps({"mean_psnr": metrics["psnr"], "mean_ssim": metrics["ssim"]}))
    else:
        for v in metrics["views"]:
            print(f"view {v['view']:3d}  psnr {v['psnr']:7.2f}  ssim {v['ssim']:6.4f}")
        print(f"mean       psnr {metrics['psnr']:7.2f}  ssim {metrics['ssim']:6.4f}")
    return 0


def cmd_ablate(args):
    _require_dir(args.data, "data")
    data = _load_split(args, args.split)
    _, model = _load_model(args.checkpoint)
    n_levels = model.grid.cfg.levels
    if args.ks is None:
        ks = [0, n_levels // 2, n_levels]
    else:
        try:
            ks = [int(x) for x in args.ks.split(",")]
        except ValueError as e:
            raise UsageError(f"bad --ks: {e}") from e
    for k in ks:
        if not 0 <= k <= n_levels:
            raise UsageError(f"k={k} outside [0, {n_levels}]")
    rows = pipeline.ablate_masking(model, data, ks, scale=args.scale, threads=args.threads)
    print("masked_top_k   psnr   similarity")
    for r in rows:
        print(f"{r['k']:12d} {r['psnr']:7.2f} {r['similarity']:11.4f}")
    return 0


def cmd_serve(args):
    from . import serve

    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint {args.checkpoint!r} does not exist")
    serve.run_server(args.checkpoint, port=args.port, threads=args.threads)
    return 0


def cmd_gen_toy(args):
    out_dir = args.out or "toy-scene"
    seed = args.seed if args.seed is not None else 0
    constant = None
    if args.constant_color is not None:
        parts = args.constant_color.split(",")
        if len(parts) != 3:
            raise UsageError("--constant-color needs R,G,B in [0, 1]")
        constant = tuple(float(x) for x in parts)
    spec = dataio.make_toy_spec(seed, args.primitives, constant_color=constant)
    splits = {}
    if args.train_views:
        splits["train"] = args.train_views
    if args.val_views:
        splits["val"] = args.val_views
    if args.test_views:
        splits["test"] = args.test_views
    dataio.write_blender_dataset(out_dir, spec, splits, args.width, args.height)
    total = sum(splits.values())
    print(f"wrote {total} views across {sorted(splits)} to {out_dir}")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
