#!/usr/bin/env python3
"""End-to-end demo: build the canyon scene, synthesize, report quality.

Usage: python scripts/run_canyon_demo.py [workdir] [--views N]

Writes scene files, runs the synth pipeline through the CLI, then prints
the per-view quality report (PSNR/SSIM against the procedural oracle,
silhouette fractions, cross-view brightness gap).
"""

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("workdir", nargs="?", default="demo_scene")
    ap.add_argument("--views", type=int, default=60)
    ap.add_argument("--width", type=int, default=256)
    ap.add_argument("--height", type=int, default=144)
    args = ap.parse_args()

    work = Path(args.workdir)
    here = Path(__file__).parent
    subprocess.run([sys.executable, str(here / "make_canyon_scene.py"),
                    str(work), "--views", str(args.views),
                    "--width", str(args.width), "--height", str(args.height)],
                   check=True)
    cfg = work / "run.cfg"

    t0 = time.monotonic()
    subprocess.run([sys.executable, "-m", "meshsplat.cli", "synth",
                    "--config", str(cfg)], check=True)
    print(f"synth finished in {time.monotonic() - t0:.0f}s")

    report_path = work / "report.json"
    subprocess.run([sys.executable, "-m", "meshsplat.cli", "metrics",
                    "--config", str(cfg),
                    "--field", str(work / "out" / "field.npz"),
                    "--out", str(report_path)], check=True)
    report = json.loads(report_path.read_text())
    psnrs = [v["psnr"] for v in report["views"] if v["psnr"] is not None]
    sils = [v["silhouette_fraction"] for v in report["views"]]
    print(f"surfels: {report['surfels']}")
    print(f"psnr:   min {min(psnrs):.1f}  mean {sum(psnrs)/len(psnrs):.1f} dB")
    print(f"silhouette: max {max(sils):.2%}")
    print(f"brightness gap: {report['brightness_gap']:.4f}")
    print(f"viewer splats: {work / 'out' / 'field.ply'}")


if __name__ == "__main__":
    main()
