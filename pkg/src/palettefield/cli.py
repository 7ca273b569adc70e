"""Command-line interface for the decomposition pipeline.

Exit codes: 0 = success, 1 = user error (bad input, missing files,
degenerate data), 2 = internal error. With --json each command prints one
machine-parseable summary object on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import colorhull, dataio, optimizer, renderer
from .errors import PaletteFieldError
from .field import GridField2D
from .optimizer import TrainConfig
from .palette import Palette, parse_hex_color

JITTER_AMPLITUDE = 1.0 / 512.0


def _load_pixels(path: Path, background) -> np.ndarray:
    """Pixels of either a single image, a directory of images, or a dataset
    directory containing transforms_train.json."""
    if path.is_dir():
        if (path / "transforms_train.json").exists():
            return dataio.load_nerf_synthetic(path, background=background).all_pixels()
        images = dataio.load_image_directory(path, background=background)
        return np.concatenate([img.reshape(-1, 3) for img in images])
    return dataio.load_image(path, background=background).reshape(-1, 3)


def _emit(args, human: str, payload: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload))
    else:
        print(human)


def cmd_hull(args) -> int:
    pixels = _load_pixels(Path(args.input), background=(1, 1, 1))
    points = colorhull.prepare_hull_points(pixels, max_points=args.max_points,
                                           seed=args.seed)
    try:
        hull = colorhull.build_hull(points)
    except PaletteFieldError:
        if not args.jitter:
            raise
        rng = np.random.default_rng(args.seed)
        jittered = points + rng.uniform(
            -JITTER_AMPLITUDE, JITTER_AMPLITUDE, size=points.shape
        )
        hull = colorhull.build_hull(jittered)
    Path(args.out).write_text(colorhull.to_obj(hull))
    _emit(
        args,
        f"hull: {len(hull.vertices)} vertices, {len(hull.facets)} facets "
        f"from {hull.source_count} points -> {args.out}",
        {
            "vertices": len(hull.vertices),
            "facets": len(hull.facets),
            "source_points": hull.source_count,
            "out": str(args.out),
        },
    )
    return 0


def cmd_decompose(args) -> int:
    config = TrainConfig(
        mode=args.mode,
        iterations=args.iters,
        batch_rays=args.batch_rays,
        K=args.layers,
        lambda_hull=args.lambda_hull,
        lambda_sparsity=args.lambda_sparsity,
        eta=args.eta,
        learning_rate_fields=args.lr_fields,
        learning_rate_palette=args.lr_palette,
        seed=args.seed,
        ablation=args.ablation,
        palette_init=args.palette_init,
        grid_resolution=args.grid_resolution,
        samples_per_ray=args.samples_per_ray,
        stratified=args.stratified,
        hull_jitter=JITTER_AMPLITUDE if args.jitter else 0.0,
    )
    path = Path(args.input)
    if args.mode == "2d":
        dataset = dataio.load_image(path)
    else:
        dataset = dataio.load_nerf_synthetic(path)
    result = optimizer.fit(
        dataset, config, checkpoint_path=args.out, log_path=args.log
    )
    final_psnr = result.history[-1]["psnr"] if result.history else None
    _emit(
        args,
        f"decomposed {path} -> {args.out} "
        f"(K={config.K}, steps={config.iterations}, "
        f"final batch PSNR={final_psnr if final_psnr is None else round(final_psnr, 2)})",
        {
            "out": str(args.out),
            "K": config.K,
            "iterations": config.iterations,
            "final_psnr": final_psnr,
            "palette": result.palette.export_colors().tolist(),
        },
    )
    return 0


def _render_view(fields, palette, header, view: int, width, samples):
    meta = header.get("meta", {})
    if header["mode"] == "2d":
        out = renderer.render_image2d(fields, palette)
        if width and width < out.rgb.shape[1]:
            out = renderer.decimate_render(out, width)
        return out
    cameras = [renderer.Camera.from_json_dict(c) for c in meta.get("cameras", [])]
    if not cameras:
        raise PaletteFieldError("checkpoint carries no cameras to render from")
    if not 0 <= view < len(cameras):
        raise PaletteFieldError(f"view {view} outside 0..{len(cameras) - 1}")
    camera = cameras[view]
    if width and width < camera.width:
        camera = camera.scaled(width)
    return renderer.render_image(camera, fields, palette, M=samples)


def cmd_render(args) -> int:
    fields, palette, header = dataio.load_checkpoint(args.ckpt)
    if args.pose_file:
        pose_spec = json.loads(Path(args.pose_file).read_text())
        camera = renderer.Camera.from_json_dict(pose_spec)
        if args.width and args.width < camera.width:
            camera = camera.scaled(args.width)
        out = renderer.render_image(camera, fields, palette, M=args.samples)
    else:
        out = _render_view(fields, palette, header, args.view, args.width,
                           args.samples)
    dataio.write_png(args.out, out.rgb)
    written = [str(args.out)]
    if args.layers_out:
        written += [str(p) for p in dataio.save_weight_maps(args.layers_out, out)]
    _emit(
        args,
        f"rendered view {args.view} -> {args.out}"
        + (f" (+{len(written) - 1} layer files)" if args.layers_out else ""),
        {"out": str(args.out), "files": written},
    )
    return 0


def cmd_recolor(args) -> int:
    fields, palette, header = dataio.load_checkpoint(args.ckpt)
    edits = []
    for spec in args.set:
        index_text, _, color_text = spec.partition("=")
        try:
            index = int(index_text)
        except ValueError as exc:
            raise PaletteFieldError(f"bad --set {spec!r}: index not an integer") from exc
        color = parse_hex_color(color_text)
        palette = palette.edit_color(index, color)
        edits.append({"index": index, "color": color.tolist()})
    dataio.save_checkpoint(args.out, fields, palette, header.get("meta", {}))
    _emit(
        args,
        f"recolored {len(edits)} palette entries -> {args.out}",
        {"out": str(args.out), "edits": edits},
    )
    return 0


def cmd_gradcheck(args) -> int:
    loss_fn, params, _ = optimizer.build_gradcheck_problem(args.mode, args.seed)
    error = optimizer.gradcheck(loss_fn, params, step=1e-4, samples=args.samples,
                                seed=args.seed)
    tolerance = 1e-5 if args.mode == "2d" else 1e-4
    _emit(
        args,
        f"gradcheck mode={args.mode}: max relative error {error:.3e} "
        f"(tolerance {tolerance:.0e})",
        {"mode": args.mode, "max_relative_error": error, "tolerance": tolerance},
    )
    return 0 if error < tolerance else 1


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.ckpt, max_side=args.max_side)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except SystemExit as exc:  # uvicorn rewraps startup failures
        return 1 if exc.code else 0
    except OSError:
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="palettefield",
        description="Decompose images/scenes into recolorable palette layers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("hull", help="build the RGB convex hull of the input pixels")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jitter", action="store_true",
                   help="rescue flat (e.g. grayscale) inputs with tiny jitter")
    p.add_argument("--max-points", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_hull)

    p = sub.add_parser("decompose", help="jointly fit layers and palette")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=("2d", "3d"), default="2d")
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--palette-init", default="kmeans",
                   choices=("random_in_hull", "kmeans", "hull_simplify"))
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-hull", type=float, default=0.1)
    p.add_argument("--lambda-sparsity", type=float, default=0.01)
    p.add_argument("--eta", type=float, default=12.0)
    p.add_argument("--ablation", default="full",
                   choices=("full", "direct_opaque", "fixed_palette"))
    p.add_argument("--batch-rays", type=int, default=4096)
    p.add_argument("--lr-fields", type=float, default=0.02)
    p.add_argument("--lr-palette", type=float, default=0.005)
    p.add_argument("--grid-resolution", type=int, default=64)
    p.add_argument("--samples-per-ray", type=int, default=128)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--jitter", action="store_true")
    p.add_argument("--log", default=None, help="write an ndjson training log")
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("render", help="render a view from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--pose-file", default=None,
                   help="JSON camera spec instead of a stored view index")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--layers-out", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("recolor", help="edit palette entries of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--set", action="append", default=[], metavar="I=#RRGGBB",
                   help="palette edit, repeatable")
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_recolor)

    p = sub.add_parser("gradcheck", help="verify gradients on a toy problem")
    p.add_argument("--mode", choices=("2d", "3d"), default="2d")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="serve the palette-editing API")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--max-side", type=int, default=256)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; report those as user errors
        return 1 if exc.code else 0
    try:
        return args.func(args)
    except PaletteFieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - internal failure path
        import traceback

        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
