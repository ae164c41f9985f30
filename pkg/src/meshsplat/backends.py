"""Conditional generator backends.

The pipeline talks to an abstract generator: given control maps, an
optional warped reference image and a synthesis mask, produce a full
frame.  A reference-free call plays the role of the sequence-seeding
generator; a referenced call outpaints around the warped content.

Two concrete realizations live here:

* ``OracleBackend`` - a deterministic procedural texture tied to the mesh
  surface.  It is multi-view consistent by construction, which makes
  end-to-end pipeline results exactly checkable.
* ``mixture_posterior_mean`` / ``MixtureDenoiser`` - the exact posterior
  mean denoiser of a mixture-of-templates data law under the
  variance-preserving forward kernel; the diffusion machinery uses it as
  an analytic stand-in for a trained noise-prediction network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import ControlMaps
from .scene import (CameraIntrinsics, CameraPose, pixel_ray_dirs,
                    unproject_depth)
from .warp import WarpResult


# ---------------------------------------------------------------------------
# deterministic hashing (splitmix64), identical across platforms

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(x: np.ndarray) -> np.ndarray:
    z = (x + _GOLDEN).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _hash_unit(*keys) -> np.ndarray:
    """Uniform [0,1) from integer key arrays, broadcast together."""
    acc = np.uint64(0x243F6A8885A308D3)
    acc = np.broadcast_to(acc, np.broadcast_shapes(
        *[np.shape(k) for k in keys])).copy()
    for k in keys:
        acc = _mix(acc ^ np.asarray(k, dtype=np.int64).astype(np.uint64))
    return acc.astype(np.float64) / 2.0 ** 64


# ---------------------------------------------------------------------------
# procedural surface texture

SEMANTIC_PALETTE = {
    0: (0.50, 0.50, 0.50),
    1: (0.46, 0.50, 0.54),   # road: cool gray, channel order is stable
    2: (0.62, 0.48, 0.40),   # left facades: warm brick
    3: (0.44, 0.52, 0.60),   # right facades: cool slate
    4: (0.58, 0.56, 0.46),   # end walls: sandstone
    5: (0.52, 0.42, 0.56),   # obstacles
}
_NOISE_CELL = 5.0     # meters; coarse enough to stay band-limited far away
_NOISE_AMP = 0.10
_TINT_AMP = 0.08
_SUN = np.array([0.3, 0.8, -0.52])
_SUN_DIR = _SUN / np.linalg.norm(_SUN)


def _palette_lookup(semantic: np.ndarray) -> np.ndarray:
    sem = np.asarray(semantic, dtype=np.int64)
    base = np.empty(sem.shape + (3,))
    known = np.zeros(sem.shape, dtype=bool)
    for s, rgb in SEMANTIC_PALETTE.items():
        pick = sem == s
        base[pick] = rgb
        known |= pick
    if np.any(~known):
        other = sem[~known]
        base[~known] = np.stack(
            [0.35 + 0.3 * _hash_unit(other, np.full_like(other, ch))
             for ch in range(3)], axis=-1)
    return base


def _value_noise(points: np.ndarray, instance: np.ndarray,
                 channel: int) -> np.ndarray:
    """Trilinear value noise in [0,1), keyed per instance and channel."""
    p = np.asarray(points, dtype=np.float64) / _NOISE_CELL
    cell = np.floor(p).astype(np.int64)
    frac = p - cell
    out = np.zeros(p.shape[:-1])
    inst = np.asarray(instance, dtype=np.int64)
    chf = np.full_like(inst, channel)
    for cx in (0, 1):
        wx = frac[..., 0] if cx else 1.0 - frac[..., 0]
        for cy in (0, 1):
            wy = frac[..., 1] if cy else 1.0 - frac[..., 1]
            for cz in (0, 1):
                wz = frac[..., 2] if cz else 1.0 - frac[..., 2]
                corner = _hash_unit(cell[..., 0] + cx, cell[..., 1] + cy,
                                    cell[..., 2] + cz, inst, chf)
                out += wx * wy * wz * corner
    return out


def oracle_texture(points, normals, semantic, instance) -> np.ndarray:
    """Deterministic surface color; identical inputs give identical bits.

    Per-semantic base palette, a per-instance tint, smooth value noise at
    the meter scale, and a fixed-sun Lambert factor (view-invariant).
    Road pixels vary in luminance only, preserving the palette's channel
    ordering.
    """
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    sem = np.asarray(semantic, dtype=np.int64)
    inst = np.asarray(instance, dtype=np.int64)

    base = _palette_lookup(sem)
    luma_only = sem == 1

    tint = np.stack([_TINT_AMP * (2 * _hash_unit(inst, np.full_like(inst, 7 + ch)) - 1)
                     for ch in range(3)], axis=-1)
    tint_luma = _TINT_AMP * (2 * _hash_unit(inst, np.full_like(inst, 3)) - 1)
    tint = np.where(luma_only[..., None], tint_luma[..., None], tint)

    noise = np.stack([_NOISE_AMP * (2 * _value_noise(points, inst, ch) - 1)
                      for ch in range(3)], axis=-1)
    noise_luma = _NOISE_AMP * (2 * _value_noise(points, inst, 3) - 1)
    noise = np.where(luma_only[..., None], noise_luma[..., None], noise)

    shade = 0.8 + 0.2 * np.maximum(normals @ _SUN_DIR, 0.0)
    rgb = (base + tint + noise) * shade[..., None]
    return np.clip(rgb, 0.02, 0.98)


# ---------------------------------------------------------------------------
# sky dome: far sphere carrying a smooth vertical gradient

_HORIZON = np.array([0.74, 0.80, 0.88])
_ZENITH = np.array([0.34, 0.52, 0.82])


@dataclass(frozen=True)
class SkyDome:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 500.0

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Ray parameter of the sphere hit (cameras sit inside the dome)."""
        c = np.asarray(self.center)
        oc = np.asarray(origins) - c
        b = np.einsum("...i,...i->...", oc, dirs)
        dd = np.einsum("...i,...i->...", dirs, dirs)
        disc = b * b - dd * (np.einsum("...i,...i->...", oc, oc)
                             - self.radius ** 2)
        return (-b + np.sqrt(np.maximum(disc, 0.0))) / dd

    def color(self, points: np.ndarray) -> np.ndarray:
        d = np.asarray(points) - np.asarray(self.center)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        el = np.clip(d[..., 1], 0.0, 1.0) ** 0.75
        return _HORIZON + el[..., None] * (_ZENITH - _HORIZON)


# ---------------------------------------------------------------------------
# generator contract

@dataclass
class GeneratorRequest:
    maps: ControlMaps
    reference: WarpResult | None
    mask: np.ndarray          # True = synthesize this pixel
    seed: int = 0
    style: str = ""

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.maps.shape:
            raise ValueError("mask/maps shape mismatch")
        if self.reference is not None:
            uncovered = ~self.reference.valid
            if np.any(uncovered & ~self.mask):
                raise ValueError(
                    "mask must cover every pixel the reference leaves invalid")


class OracleBackend:
    """Procedural, multi-view consistent stand-in for a trained generator."""

    def __init__(self, mesh, index, intrinsics: CameraIntrinsics,
                 dome: SkyDome | None = None):
        self.mesh = mesh
        self.index = index
        self.intrinsics = intrinsics
        self.dome = dome or SkyDome()

    def generate(self, request: GeneratorRequest, pose: CameraPose) -> np.ndarray:
        maps = request.maps
        mask = request.mask
        if request.reference is None and not mask.all():
            raise ValueError("reference-free generation requires a full-frame mask")
        h, w = maps.shape
        out = np.zeros((h, w, 3))
        if request.reference is not None:
            keep = ~mask
            out[keep] = request.reference.image[keep]

        geo = mask & maps.valid
        if geo.any():
            pts = unproject_depth(maps.depth, pose, self.intrinsics)[geo]
            out[geo] = oracle_texture(pts, maps.normal[geo],
                                      maps.semantic[geo], maps.instance[geo])
        sky = mask & ~maps.valid
        if sky.any():
            dirs = (pixel_ray_dirs(self.intrinsics)[sky] @ pose.rotation.T)
            origins = np.broadcast_to(pose.position, dirs.shape)
            t = self.dome.intersect(origins, dirs)
            out[sky] = self.dome.color(origins + t[:, None] * dirs)
        return out

    def sky_points(self, pose: CameraPose, sky_mask: np.ndarray):
        """Dome hit points and depths for the masked sky pixels."""
        dirs = pixel_ray_dirs(self.intrinsics)[sky_mask] @ pose.rotation.T
        origins = np.broadcast_to(pose.position, dirs.shape)
        t = self.dome.intersect(origins, dirs)
        points = origins + t[:, None] * dirs
        normals = np.asarray(self.dome.center) - points
        normals = normals / np.linalg.norm(normals, axis=-1, keepdims=True)
        return points, normals, t


# ---------------------------------------------------------------------------
# analytic mixture denoiser

@dataclass
class TemplateLibrary:
    templates: np.ndarray       # (K, ...) shared-shape reference images
    weights: np.ndarray = None  # prior over templates, uniform by default
    sigma_data: float = 0.5

    def __post_init__(self):
        self.templates = np.asarray(self.templates, dtype=np.float64)
        if len(self.templates) < 1:
            raise ValueError("library needs at least one template")
        if self.weights is None:
            self.weights = np.full(len(self.templates),
                                   1.0 / len(self.templates))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.templates):
            raise ValueError("one prior weight per template")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("prior weights must sum to 1")

    @property
    def k(self) -> int:
        return len(self.templates)


def load_template_library(directory) -> TemplateLibrary:
    """Directory of PNGs plus manifest.json ({sigma_data, templates})."""
    from .raster import load_png

    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    templates, weights = [], []
    for entry in manifest["templates"]:
        img = load_png(directory / entry["file"]).astype(np.float64) / 255.0
        templates.append(img)
        weights.append(entry.get("weight", 1.0))
    weights = np.asarray(weights, dtype=np.float64)
    weights = weights / weights.sum()
    return TemplateLibrary(templates=np.stack(templates), weights=weights,
                           sigma_data=float(manifest.get("sigma_data", 0.5)))


def mixture_posterior_mean(x_t: np.ndarray, t: int,
                           library: TemplateLibrary, schedule) -> np.ndarray:
    """Exact E[x_0 | x_t] for a mixture-of-templates data law.

    Under the forward kernel N(alpha(t) x_0, sigma(t)^2 I), the posterior
    over templates is a softmax of -|x_t - alpha mu_k|^2 / (2 sigma^2)
    plus the log prior; the mean is the weighted template average.
    """
    a = schedule.alpha(t)
    s = schedule.sigma(t)
    x = np.asarray(x_t, dtype=np.float64)
    d2 = np.array([np.sum((x - a * mu) ** 2) for mu in library.templates])
    logits = -d2 / (2.0 * s * s) + np.log(library.weights)
    logits -= logits.max()
    p = np.exp(logits)
    p /= p.sum()
    return np.tensordot(p, library.templates, axes=1)


class MixtureDenoiser:
    """Noise-prediction handle backed by the analytic posterior mean.

    eps_hat = (x_t - alpha(t) E[x_0|x_t]) / sigma(t), which inverts the
    consistency parameterization exactly.  ``cond`` selects a per-view
    library when a mapping is supplied.
    """

    def __init__(self, library, schedule):
        self.library = library
        self.schedule = schedule

    def _lib_for(self, cond) -> TemplateLibrary:
        if isinstance(self.library, TemplateLibrary):
            return self.library
        return self.library[cond]

    def __call__(self, x_t: np.ndarray, cond, t: int) -> np.ndarray:
        lib = self._lib_for(cond)
        x0 = mixture_posterior_mean(x_t, t, lib, self.schedule)
        return (np.asarray(x_t) - self.schedule.alpha(t) * x0) \
            / self.schedule.sigma(t)
