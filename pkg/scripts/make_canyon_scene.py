#!/usr/bin/env python3
"""Write the street-canyon demo scene: mesh, camera path, run config.

Usage: python scripts/make_canyon_scene.py [outdir] [--views N]
                                           [--width W] [--height H]
"""

import argparse
from pathlib import Path

from meshsplat.scene import save_mesh, save_path
from meshsplat.scenes import canyon_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("outdir", nargs="?", default="demo_scene")
    ap.add_argument("--views", type=int, default=60)
    ap.add_argument("--width", type=int, default=256)
    ap.add_argument("--height", type=int, default=144)
    ap.add_argument("--seed", type=int, default=19)
    args = ap.parse_args()

    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    mesh, path = canyon_scene(views=args.views, width=args.width,
                              height=args.height)
    save_mesh(mesh, out / "scene.ply")
    save_path(path, out / "path.txt")
    (out / "run.cfg").write_text(
        "scene.mesh = scene.ply\n"
        "scene.camera_path = path.txt\n"
        "out.dir = out\n"
        f"seed = {args.seed}\n")
    print(f"scene: {mesh.num_faces} faces, {args.views} views -> {out}")
    print(f"next: meshsplat synth --config {out / 'run.cfg'}")


if __name__ == "__main__":
    main()
