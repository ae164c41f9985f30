"""Global consistency alignment across a batch of views.

Renders of the current field are jointly re-noised, denoised back with
the consistency function, blended with the renders through an
exposure-balancing gain, and the blend targets drive a color-only
refinement of the surfel field:

    x_bar = w_t * gamma * x_render + (1 - w_t) * x_estimate,
    gamma = std(x_estimate) / std(x_render),

iterated over a short descending timestep list.  Early iterations favor
the denoised estimates, late iterations the rendered consensus; because
all views write into the same surfels, per-view exposure offsets average
out while geometry stays untouched.

Between alignment timesteps the blended targets are re-noised to the next
(lower) level with fresh seeded noise.  Refinement updates each surfel
color along the contribution-weighted residual of the targets, so targets
equal to the current renders are an exact fixed point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.sparse as sp

from .diffusion import ConsistencyFunction, NoiseSchedule, add_noise
from .splatter import render
from .surfel import GaussianField

log = logging.getLogger(__name__)


@dataclass
class GcaParams:
    t1_sigma_ratio: float = 0.35
    steps: int = 3
    w_start: float = 0.2
    w_end: float = 0.8
    refine_iters: int = 15
    color_lr: float = 0.4
    t1_override: int | None = None

    def __post_init__(self):
        for w in (self.w_start, self.w_end):
            if not (0.0 <= w <= 1.0):
                raise ValueError("blend weights must lie in [0, 1]")
        if self.steps < 1 or self.refine_iters < 0:
            raise ValueError("steps must be >= 1, refine_iters >= 0")

    def timesteps(self, schedule: NoiseSchedule) -> list[int]:
        t1 = self.t1_override
        if t1 is None:
            t1 = schedule.timestep_for_sigma_ratio(self.t1_sigma_ratio)
        if not (schedule.delta <= t1 <= schedule.T):
            raise ValueError("forward-noising timestep outside [delta, T]")
        ts = np.linspace(t1, schedule.delta, self.steps)
        return sorted({int(round(t)) for t in ts}, reverse=True)

    def weights(self, count: int) -> np.ndarray:
        if count == 1:
            return np.array([self.w_start])
        return np.linspace(self.w_start, self.w_end, count)


@dataclass
class GcaBatch:
    """State of one alignment pass, kept for inspection and tests."""
    views: list
    renders: list
    noised: list
    estimates: list = dataclass_field(default_factory=list)
    blended: list = dataclass_field(default_factory=list)
    excluded: list = dataclass_field(default_factory=list)


def blend_estimate(x_prime, x_tilde0, w_t, valid=None, gamma=None):
    """Exposure-balanced convex blend of render and clean estimate.

    gamma defaults to the ratio of per-channel standard deviations
    (averaged over channels) computed on `valid` pixels; a zero-variance
    render leaves gamma at 1.
    """
    x_prime = np.asarray(x_prime, dtype=np.float64)
    x_tilde0 = np.asarray(x_tilde0, dtype=np.float64)
    if x_prime.shape != x_tilde0.shape:
        raise ValueError("blend inputs must share a shape")
    if gamma is None:
        sel = np.ones(x_prime.shape[:2], dtype=bool) if valid is None else valid
        std_p = x_prime[sel].std(axis=0).mean()
        std_e = x_tilde0[sel].std(axis=0).mean()
        gamma = std_e / std_p if std_p > 0 else 1.0
    return w_t * gamma * x_prime + (1.0 - w_t) * x_tilde0


class _ViewSystem:
    """Cached sparse render structure of one view; geometry-static."""

    def __init__(self, field: GaussianField, pose, intrinsics, background):
        out, cap = render(field, pose, intrinsics, background=background,
                          capture=True)
        npx = intrinsics.height * intrinsics.width
        self.shape = (intrinsics.height, intrinsics.width)
        self.weights = sp.csr_matrix(
            (cap.weight, (cap.pixel, cap.surfel)), shape=(npx, len(field)))
        self.base = ((1.0 - out.alpha).reshape(npx)[:, None]
                     * np.asarray(background, dtype=np.float64))
        self.alpha = out.alpha
        self.initial = out

    def rgb(self, colors: np.ndarray) -> np.ndarray:
        flat = self.weights @ colors + self.base
        return flat.reshape(self.shape + (3,))


def refine_colors(field: GaussianField, views, targets, params: GcaParams,
                  background=(0.0, 0.0, 0.0), systems=None) -> GaussianField:
    """Move surfel colors toward contribution-weighted target residuals.

    Only colors change; positions, orientations, scales, opacities and
    provenance stay bit-identical.  Targets equal to the current renders
    are a fixed point.
    """
    if systems is None:
        systems = [_ViewSystem(field, pose, intr, background)
                   for pose, intr in views]
    flat_targets = [np.asarray(t, dtype=np.float64).reshape(-1, 3)
                    for t in targets]
    colors = field.surfels.color.copy()
    den = np.zeros(len(field))
    for vs in systems:
        den += np.asarray(vs.weights.sum(axis=0)).ravel()
    seen = den > 0
    den_safe = np.where(seen, den, 1.0)
    for _ in range(params.refine_iters):
        num = np.zeros_like(colors)
        for vs, tgt in zip(systems, flat_targets):
            resid = tgt - (vs.weights @ colors
                           + vs.base)
            num += vs.weights.T @ resid
        colors[seen] += params.color_lr * (num[seen] / den_safe[seen][:, None])
        np.clip(colors, 0.0, 1.0, out=colors)
    field.surfels.color[:] = colors
    return field


def gca_pass(field: GaussianField, views, cf: ConsistencyFunction,
             schedule: NoiseSchedule, params: GcaParams, noise_source,
             conds=None, valid_masks=None,
             background=(0.0, 0.0, 0.0)) -> GcaBatch:
    """One alignment pass over a batch of at least two views.

    ``conds`` are per-view conditioning objects for the denoiser;
    ``valid_masks`` restrict the exposure statistics to geometry pixels.
    Views the field does not cover at all are excluded with a warning.
    """
    views = list(views)
    if len(views) < 2:
        raise ValueError("alignment needs a batch of at least two views")
    if conds is None:
        conds = [None] * len(views)
    if valid_masks is None:
        valid_masks = [None] * len(views)

    systems = []
    active = []
    excluded = []
    for i, (pose, intr) in enumerate(views):
        vs = _ViewSystem(field, pose, intr, background)
        if vs.alpha.max() == 0.0:
            log.warning("alignment: view %d has no coverage, excluded", i)
            excluded.append(i)
            continue
        systems.append(vs)
        active.append(i)

    batch = GcaBatch(views=views,
                     renders=[systems[j].initial.rgb for j in range(len(active))],
                     noised=[], excluded=excluded)
    if not active:
        return batch

    timesteps = params.timesteps(schedule)
    ws = params.weights(len(timesteps))
    t1 = timesteps[0]
    x_t = [add_noise(batch.renders[j], t1,
                     noise_source.standard_normal(batch.renders[j].shape),
                     schedule)
           for j in range(len(active))]
    batch.noised = [x.copy() for x in x_t]

    colors = field.surfels.color
    for step, (t, w) in enumerate(zip(timesteps, ws)):
        estimates = [cf.estimate(x_t[j], conds[active[j]], t)
                     for j in range(len(active))]
        x_prime = [systems[j].rgb(colors) for j in range(len(active))]
        blended = [blend_estimate(x_prime[j], estimates[j], w,
                                  valid=valid_masks[active[j]])
                   for j in range(len(active))]
        batch.estimates.append(estimates)
        batch.blended.append(blended)
        refine_colors(field, [views[i] for i in active], blended, params,
                      background=background, systems=systems)
        colors = field.surfels.color
        if step + 1 < len(timesteps):
            t_next = timesteps[step + 1]
            x_t = [add_noise(blended[j], t_next,
                             noise_source.standard_normal(blended[j].shape),
                             schedule)
                   for j in range(len(active))]
    return batch


def gca_subsequence_passes(field: GaussianField, path, keyframes, cf,
                           schedule: NoiseSchedule, params: GcaParams,
                           noise_factory, conds_for=None,
                           valid_for=None, background=(0.0, 0.0, 0.0)):
    """Run one alignment pass per consecutive-keyframe sub-sequence.

    Sub-sequences include both bounding keyframes, so interior keyframes
    participate in two passes.  ``noise_factory(pair_index)`` supplies an
    independent noise source per pass.
    """
    keyframes = [int(k) for k in keyframes]
    if keyframes != sorted(keyframes):
        raise ValueError("keyframe indices must be sorted")
    if keyframes and not (0 <= keyframes[0] and keyframes[-1] < len(path)):
        raise ValueError("keyframe indices outside the path")
    reports = []
    for p, (a, b) in enumerate(zip(keyframes, keyframes[1:])):
        idx = list(range(a, b + 1))
        views = [(path.poses[i], path.intrinsics) for i in idx]
        conds = [conds_for(i) for i in idx] if conds_for else None
        valids = [valid_for(i) for i in idx] if valid_for else None
        reports.append(gca_pass(field, views, cf, schedule, params,
                                noise_factory(p), conds=conds,
                                valid_masks=valids, background=background))
    return reports
