"""Run configuration: one flat, dotted-key file drives a whole run.

Example::

    scene.mesh = corridor.ply
    scene.camera_path = path.txt
    out.dir = runs/demo
    seed = 11
    backend = oracle
    diffusion.T = 1000
    diffusion.delta = 1
    diffusion.schedule = cosine
    aginpaint.n_g = 100
    aginpaint.lr = 0.00375
    aginpaint.steps = 8
    aginpaint.beta = 1.0
    gca.t1_sigma_ratio = 0.35
    gca.w_start = 0.2
    gca.w_end = 0.8
    gca.steps = 3
    gca.refine_iters = 15
    gca.color_lr = 0.4
    pipeline.tau = 0.3
    pipeline.block_length = 200
    pipeline.stage2 = true
    pipeline.gca = true
    pipeline.low_alpha = 0.5
    pipeline.dome_radius = 500

Relative paths resolve against the config file's directory.  Unknown keys
are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .align import GcaParams
from .diffusion import NoiseSchedule
from .inpaint import GuidanceParams, default_steps
from .pipeline import PipelineConfig


class ConfigError(ValueError):
    pass


_KNOWN_KEYS = {
    "scene.mesh", "scene.camera_path", "out.dir", "seed", "backend",
    "diffusion.T", "diffusion.delta", "diffusion.schedule",
    "aginpaint.n_g", "aginpaint.lr", "aginpaint.steps", "aginpaint.beta",
    "gca.t1_sigma_ratio", "gca.w_start", "gca.w_end", "gca.steps",
    "gca.refine_iters", "gca.color_lr",
    "pipeline.tau", "pipeline.block_length", "pipeline.stage2",
    "pipeline.gca", "pipeline.low_alpha", "pipeline.dome_radius",
}


@dataclass
class RunConfig:
    mesh_path: Path
    camera_path: Path
    out_dir: Path
    seed: int
    backend: str
    schedule: NoiseSchedule
    pipeline: PipelineConfig


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected 'key = value'")
        key, _, val = stripped.partition("=")
        key = key.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        values[key] = val.strip()
    return values


def _get(values, key, cast, default):
    if key not in values:
        return default
    raw = values[key]
    try:
        if cast is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key}: cannot parse {raw!r}") from exc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text())
    base = path.parent

    for required in ("scene.mesh", "scene.camera_path"):
        if required not in values:
            raise ConfigError(f"missing required key {required}")
    mesh_path = (base / values["scene.mesh"]).resolve()
    camera_path = (base / values["scene.camera_path"]).resolve()
    for p, what in ((mesh_path, "mesh"), (camera_path, "camera path")):
        if not p.is_file():
            raise ConfigError(f"{what} file not found: {p}")
    out_dir = (base / _get(values, "out.dir", str, "out")).resolve()

    backend = _get(values, "backend", str, "oracle")
    if backend != "oracle":
        raise ConfigError(f"unknown backend {backend!r} (available: oracle)")

    schedule = NoiseSchedule(
        T=_get(values, "diffusion.T", int, 1000),
        delta=_get(values, "diffusion.delta", int, 1),
        kind=_get(values, "diffusion.schedule", str, "cosine"))

    guidance = GuidanceParams(
        n_g=_get(values, "aginpaint.n_g", int, 100),
        lr=_get(values, "aginpaint.lr", float, 0.00375),
        smooth_l1_beta=_get(values, "aginpaint.beta", float, 1.0),
        steps=default_steps(schedule,
                            _get(values, "aginpaint.steps", int, 8)))
    gca = GcaParams(
        t1_sigma_ratio=_get(values, "gca.t1_sigma_ratio", float, 0.35),
        steps=_get(values, "gca.steps", int, 3),
        w_start=_get(values, "gca.w_start", float, 0.2),
        w_end=_get(values, "gca.w_end", float, 0.8),
        refine_iters=_get(values, "gca.refine_iters", int, 15),
        color_lr=_get(values, "gca.color_lr", float, 0.4))

    try:
        pipeline = PipelineConfig(
            tau=_get(values, "pipeline.tau", float, 0.3),
            block_length=_get(values, "pipeline.block_length", int, 200),
            seed=_get(values, "seed", int, 0),
            low_alpha=_get(values, "pipeline.low_alpha", float, 0.5),
            dome_radius=_get(values, "pipeline.dome_radius", float, 500.0),
            run_stage2=_get(values, "pipeline.stage2", bool, True),
            run_gca=_get(values, "pipeline.gca", bool, True),
            guidance=guidance,
            gca=gca)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return RunConfig(mesh_path=mesh_path, camera_path=camera_path,
                     out_dir=out_dir, seed=pipeline.seed, backend=backend,
                     schedule=schedule, pipeline=pipeline)
