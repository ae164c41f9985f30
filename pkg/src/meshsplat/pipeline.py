"""End-to-end orchestration: key views, densification, alignment, blocks.

Stage one walks the camera path backward: the last key view is generated
reference-free, every earlier key view receives the previous generation
warped into it as a reference and the revealed regions are outpainted.
Generated pixels land on the mesh as surfels wherever the growing field
is still thin, so the field is "outpainted" alongside the images.

Stage two renders each intermediate view from the field, detects
silhouettes (holes and ghost depth), fills them with appearance-guided
sampling, and lifts the newly synthesized pixels.

Long paths split into fixed-length blocks processed from the end of the
path toward the start; each later-processed block seeds its terminal key
view from a render of the already-built field instead of a reference-free
generation, which pins the appearance across block boundaries.

The generation mask handed to the backend is the union of the warp's
outpaint mask and the current low-coverage mask, so every pixel that is
about to be lifted is freshly synthesized rather than copied from warped
content; with the procedural oracle this keeps surfel colors exactly
equal to the oracle texture at their positions.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .align import GcaParams, gca_pass, gca_subsequence_passes
from .backends import (GeneratorRequest, MixtureDenoiser, OracleBackend,
                       SkyDome, TemplateLibrary)
from .diffusion import ConsistencyFunction, NoiseSchedule, seeded_rng
from .inpaint import GuidanceParams, InpaintTask, guided_sample
from .raster import render_control_maps
from .scene import CameraPath
from .splatter import low_alpha_mask, render, silhouette_mask
from .surfel import (SurfelBatch, GaussianField, flat_thickness,
                     frames_from_normals, lift_pixels, quat_from_matrix,
                     surfel_scales, LIFT_OPACITY)
from .warp import WarpResult, backward_warp, incompleteness_fraction, outpaint_mask

log = logging.getLogger(__name__)

_NS_STAGE2 = 2
_NS_GCA_KEY = 3
_NS_GCA_SUB = 4


@dataclass
class PipelineConfig:
    tau: float = 0.3                  # incompleteness threshold
    block_length: int = 200
    seed: int = 0
    low_alpha: float = 0.5
    dome_radius: float = 500.0
    run_stage2: bool = True
    run_gca: bool = True
    guidance: GuidanceParams = dataclass_field(default_factory=GuidanceParams)
    gca: GcaParams = dataclass_field(default_factory=GcaParams)
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError("incompleteness threshold must lie in (0, 1)")
        if self.block_length < 2:
            raise ValueError("block length must be at least 2")


class Pipeline:
    """Scene synthesis driver bound to one mesh, path, and backend."""

    def __init__(self, mesh, index, path: CameraPath, config: PipelineConfig,
                 schedule: NoiseSchedule | None = None):
        self.mesh = mesh
        self.index = index
        self.path = path
        self.config = config
        self.schedule = schedule or NoiseSchedule()
        self.backend = OracleBackend(
            mesh, index, path.intrinsics,
            dome=SkyDome(radius=config.dome_radius))
        self.field = GaussianField()
        self._maps_cache: dict[int, object] = {}
        self._template_cache: dict[int, TemplateLibrary] = {}
        self.cf = ConsistencyFunction(
            denoiser=MixtureDenoiser(_LazyTemplates(self), self.schedule),
            schedule=self.schedule)
        self.trace: dict = {"generations": [], "blocks": [],
                            "stage2_views": [], "skipped_views": []}

    # -- cached per-view data -------------------------------------------------

    def maps(self, i: int):
        if i not in self._maps_cache:
            self._maps_cache[i] = render_control_maps(
                self.mesh, self.index, self.path.poses[i],
                self.path.intrinsics)
        return self._maps_cache[i]

    def oracle_image(self, i: int) -> np.ndarray:
        """Full-frame backend generation; the per-view template."""
        return self.templates(i).templates[0]

    def templates(self, i: int) -> TemplateLibrary:
        if i not in self._template_cache:
            maps = self.maps(i)
            req = GeneratorRequest(maps=maps, reference=None,
                                   mask=np.ones(maps.shape, dtype=bool),
                                   seed=self.config.seed)
            img = self.backend.generate(req, self.path.poses[i])
            self._template_cache[i] = TemplateLibrary(templates=img[None])
        return self._template_cache[i]

    # -- lifting --------------------------------------------------------------

    def _lift_sky(self, image: np.ndarray, i: int,
                  sky_mask: np.ndarray) -> SurfelBatch:
        points, normals, depths = self.backend.sky_points(
            self.path.poses[i], sky_mask)
        quats = quat_from_matrix(frames_from_normals(normals))
        sx, sy = surfel_scales(depths, self.path.intrinsics)
        scales = np.stack([sx, sy, flat_thickness(sx, sy)], axis=1)
        return SurfelBatch(points, quats, scales,
                           np.full(len(points), LIFT_OPACITY),
                           np.asarray(image, dtype=np.float64)[sky_mask])

    def _lift(self, image: np.ndarray, i: int, mask: np.ndarray) -> int:
        """Lift masked pixels (surface and sky) into the field."""
        maps = self.maps(i)
        added = 0
        geo = mask & maps.valid
        if geo.any():
            batch = lift_pixels(image, maps, self.path.poses[i],
                                self.path.intrinsics, geo)
            self.field.append(batch, i)
            added += len(batch)
        sky = mask & ~maps.valid
        if sky.any():
            batch = self._lift_sky(image, i, sky)
            self.field.append(batch, i)
            added += len(batch)
        return added

    # -- keyframe selection ---------------------------------------------------

    def warp_fraction(self, src: int, dst: int) -> float:
        """Incompleteness of warping view src's content into view dst."""
        h, w = self.maps(dst).shape
        dummy = np.zeros((h, w, 3))
        res = backward_warp(dummy, self.maps(src), self.path.poses[src],
                            self.maps(dst), self.path.poses[dst],
                            self.path.intrinsics)
        return incompleteness_fraction(outpaint_mask(res, self.maps(dst)))

    def select_keyframes(self, lo: int = 0, hi: int | None = None) -> list[int]:
        """Threshold walk from the last view toward the first.

        Scanning backward from the current key view, the first earlier
        view whose warp incompleteness reaches the threshold becomes the
        next key view; the extremes are always key views.
        """
        hi = len(self.path) - 1 if hi is None else hi
        keyframes = [hi]
        fractions = {}
        k = hi
        while k > lo:
            nxt = lo
            for j in range(k - 1, lo - 1, -1):
                frac = self.warp_fraction(k, j)
                fractions[j] = frac
                if frac >= self.config.tau:
                    nxt = j
                    break
            keyframes.append(nxt)
            k = nxt
        keyframes = sorted(set(keyframes))
        self.trace.setdefault("fractions", {}).update(fractions)
        return keyframes

    # -- stage one ------------------------------------------------------------

    def stage1_generate_keyviews(self, keyframes: list[int],
                                 seed_from_field: bool = False) -> dict:
        """Backward warp-and-outpaint over the key views; returns images."""
        images: dict[int, np.ndarray] = {}
        order = sorted(keyframes, reverse=True)
        for n, k in enumerate(order):
            pose = self.path.poses[k]
            maps = self.maps(k)
            shape = maps.shape
            cover = render(self.field, pose, self.path.intrinsics,
                           background=self.config.background)
            thin = low_alpha_mask(cover, self.config.low_alpha)
            if n == 0 and not seed_from_field:
                request = GeneratorRequest(
                    maps=maps, reference=None,
                    mask=np.ones(shape, dtype=bool), seed=self.config.seed)
                kind = "reference-free"
            elif n == 0:
                reference = WarpResult(image=cover.rgb, valid=~thin,
                                       source_px=np.zeros(shape + (2,)))
                request = GeneratorRequest(maps=maps, reference=reference,
                                           mask=thin, seed=self.config.seed)
                kind = "field-seeded"
            else:
                prev = order[n - 1]
                warp = backward_warp(images[prev], self.maps(prev),
                                     self.path.poses[prev], maps, pose,
                                     self.path.intrinsics)
                gen_mask = outpaint_mask(warp, maps) | thin
                request = GeneratorRequest(maps=maps, reference=warp,
                                           mask=gen_mask,
                                           seed=self.config.seed)
                kind = "referenced"
            images[k] = self.backend.generate(request, pose)
            added = self._lift(images[k], k, thin)
            self.trace["generations"].append(
                {"view": k, "kind": kind, "lifted": added})
        return images

    # -- stage two ------------------------------------------------------------

    def stage2_densify(self, keyframes: list[int], lo: int = 0,
                       hi: int | None = None) -> None:
        """Fill silhouettes at intermediate views and lift the repairs."""
        hi = len(self.path) - 1 if hi is None else hi
        key_set = set(keyframes)
        for i in range(lo, hi + 1):
            if i in key_set:
                continue
            pose = self.path.poses[i]
            maps = self.maps(i)
            out = render(self.field, pose, self.path.intrinsics,
                         background=self.config.background)
            sil = silhouette_mask(out, maps)
            if not sil.any():
                self.trace["skipped_views"].append(i)
                continue
            task = InpaintTask(known=out.rgb, mask=~sil, cond=i)
            img = guided_sample(task, self.cf, self.schedule,
                                self.config.guidance,
                                seeded_rng(self.config.seed, _NS_STAGE2, i))
            img = np.clip(img, 0.0, 1.0)
            added = self._lift(img, i, sil)
            self.trace["stage2_views"].append(
                {"view": i, "masked": int(sil.sum()), "lifted": added})

    # -- blocks ---------------------------------------------------------------

    def _blocks(self) -> list[tuple[int, int]]:
        length = self.config.block_length
        return [(lo, min(lo + length - 1, len(self.path) - 1))
                for lo in range(0, len(self.path), length)]

    def run_blocks(self) -> GaussianField:
        """Process the whole path block by block, end of path first."""
        cfg = self.config
        blocks = self._blocks()
        for bi, (lo, hi) in enumerate(reversed(blocks)):
            t0 = time.monotonic()
            keyframes = self.select_keyframes(lo, hi)
            images = self.stage1_generate_keyviews(keyframes,
                                                   seed_from_field=bi > 0)
            if cfg.run_gca and len(keyframes) >= 2:
                views = [(self.path.poses[k], self.path.intrinsics)
                         for k in keyframes]
                gca_pass(self.field, views, self.cf, self.schedule, cfg.gca,
                         seeded_rng(cfg.seed, _NS_GCA_KEY, bi),
                         conds=keyframes,
                         valid_masks=[self.maps(k).valid for k in keyframes],
                         background=cfg.background)
            if cfg.run_stage2:
                self.stage2_densify(keyframes, lo, hi)
            if cfg.run_gca and len(keyframes) >= 2:
                gca_subsequence_passes(
                    self.field, self.path, keyframes, self.cf, self.schedule,
                    cfg.gca,
                    lambda p, _b=bi: seeded_rng(cfg.seed, _NS_GCA_SUB, _b, p),
                    conds_for=lambda i: i,
                    valid_for=lambda i: self.maps(i).valid,
                    background=cfg.background)
            self.trace["blocks"].append({
                "index": bi, "lo": lo, "hi": hi,
                "keyframes": keyframes,
                "surfels": len(self.field),
                "seconds": round(time.monotonic() - t0, 3),
            })
            log.info("block %d [%d..%d]: %d keyframes, %d surfels",
                     bi, lo, hi, len(keyframes), len(self.field))
        return self.field

    def manifest(self) -> dict:
        frac = {str(k): round(v, 6)
                for k, v in self.trace.get("fractions", {}).items()}
        return {
            "seed": self.config.seed,
            "tau": self.config.tau,
            "block_length": self.config.block_length,
            "views": len(self.path),
            "surfels": len(self.field),
            "blocks": self.trace["blocks"],
            "generations": self.trace["generations"],
            "stage2_views": self.trace["stage2_views"],
            "skipped_views": self.trace["skipped_views"],
            "incompleteness": frac,
        }


class _LazyTemplates:
    """View index -> single-template library of the backend's generation."""

    def __init__(self, pipeline: Pipeline):
        self.pipeline = pipeline

    def __getitem__(self, view: int) -> TemplateLibrary:
        return self.pipeline.templates(view)
