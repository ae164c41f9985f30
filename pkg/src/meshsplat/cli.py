"""Command-line entry point.

Subcommands: synth, rasterize, render-path, export-splats, metrics.
Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bvh import build_bvh
from .config import ConfigError, load_run_config
from .export import export_splat_ply, load_field, save_field
from .metrics import field_report
from .pipeline import Pipeline
from .raster import (DepthColormapCodec, encode_depth_colormap,
                     render_control_maps, save_png, save_raster)
from .scene import load_mesh, load_path
from .splatter import render


def _parse_views(view_range: str | None, count: int) -> list[int]:
    if view_range is None:
        return list(range(count))
    lo, _, hi = view_range.partition(":")
    lo = int(lo) if lo else 0
    hi = int(hi) if hi else count
    if not (0 <= lo < hi <= count):
        raise ConfigError(f"view range {view_range!r} outside 0:{count}")
    return list(range(lo, hi))


def _build_pipeline(args) -> Pipeline:
    run = load_run_config(args.config)
    if args.seed is not None:
        run.pipeline.seed = args.seed
        run.seed = args.seed
    if args.out is not None:
        run.out_dir = Path(args.out)
    mesh = load_mesh(run.mesh_path)
    index = build_bvh(mesh)
    path = load_path(run.camera_path)
    pipe = Pipeline(mesh, index, path, run.pipeline, schedule=run.schedule)
    pipe.run_config = run
    return pipe


def cmd_synth(args) -> int:
    pipe = _build_pipeline(args)
    run = pipe.run_config
    field = pipe.run_blocks()
    out = run.out_dir
    frames = out / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    save_field(field, out / "field.npz")
    export_splat_ply(field, out / "field.ply")
    for i in range(len(pipe.path)):
        view = render(field, pipe.path.poses[i], pipe.path.intrinsics,
                      background=run.pipeline.background)
        save_png(view.rgb, frames / f"view_{i:04d}.png")
    manifest = pipe.manifest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"synth: {len(field)} surfels over {len(pipe.path)} views -> {out}")
    return 0


def cmd_rasterize(args) -> int:
    pipe = _build_pipeline(args)
    out = pipe.run_config.out_dir / "maps"
    out.mkdir(parents=True, exist_ok=True)
    views = _parse_views(args.views, len(pipe.path))
    codec = DepthColormapCodec(near=1.0, far=pipe.config.dome_radius)
    for i in views:
        maps = pipe.maps(i)
        save_raster(maps.depth, out / f"depth_{i:04d}.raster", "f32")
        save_raster(maps.semantic, out / f"semantic_{i:04d}.raster", "u16")
        save_raster(maps.instance, out / f"instance_{i:04d}.raster", "u32")
        save_png(encode_depth_colormap(maps.depth, codec),
                 out / f"depthmap_{i:04d}.png")
        save_png(maps.valid, out / f"valid_{i:04d}.png")
    print(f"rasterize: {len(views)} views -> {out}")
    return 0


def cmd_render_path(args) -> int:
    pipe = _build_pipeline(args)
    field = load_field(args.field)
    out = pipe.run_config.out_dir / "renders"
    out.mkdir(parents=True, exist_ok=True)
    views = _parse_views(args.views, len(pipe.path))
    for i in views:
        view = render(field, pipe.path.poses[i], pipe.path.intrinsics,
                      background=pipe.config.background)
        save_png(view.rgb, out / f"view_{i:04d}.png")
        if args.alpha:
            save_png(view.alpha, out / f"alpha_{i:04d}.png")
    print(f"render-path: {len(views)} views -> {out}")
    return 0


def cmd_export_splats(args) -> int:
    field = load_field(args.field)
    export_splat_ply(field, args.out)
    print(f"export-splats: {len(field)} surfels -> {args.out}")
    return 0


def cmd_metrics(args) -> int:
    pipe = _build_pipeline(args)
    field = load_field(args.field)
    views = _parse_views(args.views, len(pipe.path))
    report = field_report(field, pipe, views=views,
                          oracle=pipe.run_config.backend == "oracle")
    report["seed"] = pipe.config.seed
    text = json.dumps(report, indent=2)
    if args.out is not None:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshsplat",
        description="Gaussian-surfel scene synthesis on labeled meshes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, field=False, views=False):
        p.add_argument("--config", required=True, help="run config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override out.dir")
        if field:
            p.add_argument("--field", required=True, help="field .npz file")
        if views:
            p.add_argument("--views", default=None,
                           help="half-open view range lo:hi")

    common(sub.add_parser("synth", help="run the full synthesis pipeline"))
    common(sub.add_parser("rasterize", help="write per-view control maps"),
           views=True)
    rp = sub.add_parser("render-path", help="render a saved field along the path")
    common(rp, field=True, views=True)
    rp.add_argument("--alpha", action="store_true",
                    help="also write alpha rasters")
    ex = sub.add_parser("export-splats", help="convert a field to viewer PLY")
    ex.add_argument("--field", required=True)
    ex.add_argument("--out", required=True)
    me = sub.add_parser("metrics", help="quality report against the oracle")
    common(me, field=True, views=True)
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "rasterize": cmd_rasterize,
    "render-path": cmd_render_path,
    "export-splats": cmd_export_splats,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
