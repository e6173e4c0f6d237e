"""Command-line surface: synth / fit / render / relight / eval / serve.

Exit codes: 0 success, 2 usage error, 1 runtime failure. Output files are
written atomically, so a failing command leaves no partial artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


class UsageError(ValueError):
    pass


def _positive_int(value: str) -> int:
    n = int(value)
    if n <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic flash/no-flash dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--views", type=_positive_int, default=60)
    p.add_argument("--flash-every", type=_positive_int, default=5)
    p.add_argument("--points", type=_positive_int, default=50_000)
    p.add_argument("--size", type=_positive_int, default=160, help="image size in pixels")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fit", help="fit a scene model to a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output model container")
    p.add_argument(
        "--steps", type=_positive_int, default=2000,
        help="training steps (with --resume: additional steps)",
    )
    p.add_argument("--patch", type=_positive_int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-lights", type=float, default=1e-2)
    p.add_argument("--lr-tex", type=float, default=1e-3)
    p.add_argument("--init-tex", choices=["flash", "nonflash"], default="flash")
    p.add_argument("--desc-init", choices=["random", "position"], default="random")
    p.add_argument("--train-split", choices=["train", "all"], default="train")
    p.add_argument("--log-csv", default=None, help="loss-series CSV path")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--config", default=None, help="JSON file of fit-config fields (overridden by flags)")
    for term in ("normal", "symm", "cm", "tv", "mask"):
        p.add_argument(f"--weight-{term}", type=float, default=None, help=f"loss weight for the {term} term")
    p.add_argument("--beta", type=float, default=None, help="pooled-color balance inside the mismatch")

    p = sub.add_parser("render", help="render the model for a camera and lighting")
    p.add_argument("--model", required=True)
    p.add_argument("--camera-json", required=True)
    p.add_argument("--lighting-json", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-matte", action="store_true", help="skip background matting")

    p = sub.add_parser("relight", help="batch renders over directions and SH files")
    p.add_argument("--model", required=True)
    p.add_argument("--camera-json", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--directions", default=None, help="JSON list of directional specs")
    p.add_argument("--sh", nargs="*", default=[], help="JSON files with 27 SH coefficients")

    p = sub.add_parser("eval", help="evaluate a model against a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["train", "val", "all"], default="val")

    p = sub.add_parser("serve", help="start the frame service")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None, help="default: $RELIT_PORT or 8000")
    p.add_argument("--workers", type=int, default=0)

    return parser


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse handles --help (0) and usage errors (2)
        return int(e.code or 0)
    try:
        return _dispatch(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(run_command(sys.argv[1:]))


def _dispatch(args) -> int:
    return {
        "synth": _cmd_synth,
        "fit": _cmd_fit,
        "render": _cmd_render,
        "relight": _cmd_relight,
        "eval": _cmd_eval,
        "serve": _cmd_serve,
    }[args.command](args)


def _cmd_synth(args) -> int:
    from .dataio import save_dataset
    from .synthetic import generate_scene, make_dataset

    scene, cloud = generate_scene(args.seed, n_points=args.points)
    dataset = make_dataset(
        scene,
        n_views=args.views,
        flash_every=args.flash_every,
        image_size=args.size,
        cloud=cloud,
    )
    path = save_dataset(dataset, args.out)
    n_flash = sum(1 for f in dataset.frames if f.flash)
    print(f"wrote {path} ({args.views} views, {n_flash} flash, {len(dataset.val_indices)} val)")
    return 0


def _load_training_frames(manifest, split: str):
    from .dataio import load_dataset

    frames, cloud, glob = load_dataset(manifest)
    if split == "train":
        val = set(glob.get("val_indices", []))
        frames = [f for i, f in enumerate(frames) if i not in val]
    return frames, cloud


def _cmd_fit(args) -> int:
    from .fitting import FitConfig, Fitter
    from .losses import LossReport, LossWeights

    frames, cloud = _load_training_frames(args.manifest, args.train_split)
    if args.resume:
        fitter = Fitter.from_checkpoint(args.resume, frames)
        fitter.config.validation_every = args.checkpoint_every
    else:
        fields = {}
        if args.config:
            with open(args.config) as fh:
                fields = json.load(fh)
        fields.update(
            steps=args.steps,
            patch=args.patch,
            seed=args.seed,
            lr=args.lr,
            lr_lights=args.lr_lights,
            lr_tex=args.lr_tex,
            init_tex=args.init_tex,
            desc_init=args.desc_init,
            validation_every=args.checkpoint_every,
        )
        weights = fields.get("weights", {})
        if isinstance(weights, LossWeights):
            weights = weights.__dict__.copy()
        for term in ("normal", "symm", "cm", "tv", "mask"):
            value = getattr(args, f"weight_{term}")
            if value is not None:
                weights[term] = value
        if args.beta is not None:
            weights["beta"] = args.beta
        if weights:
            fields["weights"] = weights
        config = FitConfig(**fields)
        fitter = Fitter(frames, cloud, config)

    rows = [LossReport.CSV_HEADER]
    fitter.run(args.steps, on_report=lambda r: rows.append(r.csv_row()), checkpoint_path=args.out)
    fitter.save_checkpoint(args.out)
    if args.log_csv:
        from .images import atomic_write_bytes

        atomic_write_bytes(args.log_csv, ("\n".join(rows) + "\n").encode())
    last = fitter.reports[-1]
    print(f"fitted {fitter.step_count} steps; final loss {last.total:.4f} -> {args.out}")
    return 0


def _load_camera_file(path):
    from .dataio import camera_from_json

    with open(path) as fh:
        return camera_from_json(json.load(fh))


def _cmd_render(args) -> int:
    from .container import load_scene
    from .images import atomic_write_bytes
    from .render import parse_lighting, render_png

    model, _ = load_scene(args.model)
    camera = _load_camera_file(args.camera_json)
    with open(args.lighting_json) as fh:
        spec = parse_lighting(json.load(fh))
    png = render_png(model, camera, spec, matte_with_mask=not args.no_matte)
    atomic_write_bytes(args.out, png)
    print(f"wrote {args.out}")
    return 0


def _cmd_relight(args) -> int:
    from .container import load_scene
    from .images import atomic_write_bytes
    from .network import load_net
    from .render import parse_lighting, render_png

    if not args.directions and not args.sh:
        raise UsageError("relight needs --directions and/or --sh inputs")
    model, _ = load_scene(args.model)
    net = load_net(model.net_params, model.net_config)
    camera = _load_camera_file(args.camera_json)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    count = 0
    if args.directions:
        with open(args.directions) as fh:
            specs = json.load(fh)
        if not isinstance(specs, list):
            raise UsageError("--directions must contain a JSON list")
        for i, entry in enumerate(specs):
            entry = dict(entry)
            entry.setdefault("mode", "directional")
            png = render_png(model, camera, parse_lighting(entry), net=net)
            atomic_write_bytes(out_dir / f"dir_{i:03d}.png", png)
            count += 1
    for path in args.sh:
        with open(path) as fh:
            payload = json.load(fh)
        coeffs = payload["coefficients"] if isinstance(payload, dict) else payload
        spec = parse_lighting({"mode": "sh", "coefficients": coeffs})
        png = render_png(model, camera, spec, net=net)
        atomic_write_bytes(out_dir / f"sh_{Path(path).stem}.png", png)
        count += 1
    print(f"wrote {count} renders to {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    from .container import load_scene
    from .dataio import load_synthetic_dataset
    from .synthetic import evaluate

    model, _ = load_scene(args.model)
    dataset = load_synthetic_dataset(args.manifest)
    if not dataset.gt_maps:
        raise UsageError("manifest has no ground-truth maps to evaluate against")
    metrics = evaluate(model, dataset, split=args.split)
    print(json.dumps(metrics, indent=1, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    from .service import ServiceSettings, load_and_serve

    port = args.port
    if port is None:
        port = int(os.environ.get("RELIT_PORT", "8000"))
    load_and_serve(
        args.model,
        host=args.host,
        port=port,
        settings=ServiceSettings(workers=args.workers),
    )
    return 0
