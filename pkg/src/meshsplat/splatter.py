"""Software rasterizer for Gaussian-surfel fields.

Surfel covariances are pushed through the first-order perspective
linearization (EWA-style 2D covariances) and composited front to back.
The implementation gathers per-pixel contributions instead of looping:
every splat expands into (pixel, surfel) pairs over its 3-sigma bounding
box, pairs are sorted by (pixel, depth, surfel index), and transmittance
is a segmented exclusive cumulative product evaluated in log space.  The
result is identical to sequential per-pixel alpha compositing, with a
deterministic tie-break (lower surfel index first).

``capture=True`` additionally returns the per-pixel contribution weights
as a sparse (pixel, surfel, weight) list so color refinement can
re-render the view as a sparse matrix product while only colors change.

Footprints are truncated at 3 sigma; a 0.3 px dilation of the projected
covariance keeps sub-pixel splats from vanishing and closes the coverage
gaps that would otherwise alias into Moire patterns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import ControlMaps
from .scene import CameraIntrinsics, CameraPose
from .surfel import GaussianField, SurfelBatch

_Z_NEAR = 0.05
_ALPHA_MAX = 0.995
_ALPHA_MIN = 1e-3
_DILATION = 0.3 ** 2   # variance floor, 0.3 px radius
_RADIUS_CAP = 48.0     # px, bounds the pair expansion of grazing splats

LOW_ALPHA_THRESHOLD = 0.5
SILHOUETTE_ALPHA = 0.6


@dataclass
class RenderOutput:
    rgb: np.ndarray        # (H, W, 3) composited over the background
    alpha: np.ndarray      # (H, W) accumulated opacity
    depth: np.ndarray      # (H, W) alpha-weighted expected depth, 0 if empty
    inv_depth: np.ndarray  # (H, W) alpha-weighted expected inverse depth
    median_depth: np.ndarray = None  # (H, W) depth at half the final alpha


@dataclass
class Capture:
    """Per-pixel contribution structure of one render."""
    pixel: np.ndarray   # flat pixel index
    surfel: np.ndarray  # index into the rendered batch
    weight: np.ndarray  # compositing weight alpha_i * T_i


def _project_batch(batch: SurfelBatch, pose: CameraPose,
                   intrinsics: CameraIntrinsics):
    """2D means, inverse 2D covariances, depths, radii of visible surfels."""
    R = pose.rotation
    pc = (batch.position - pose.position) @ R
    z = pc[:, 2]
    keep = z > _Z_NEAR
    ids = np.nonzero(keep)[0]
    if ids.size == 0:
        return (ids,) + (None,) * 4
    pc = pc[ids]
    z = z[ids]

    cov_w = batch.world_covariances()[ids]
    cov_c = np.einsum("ji,njk,kl->nil", R, cov_w, R)

    fx, fy = intrinsics.fx, intrinsics.fy
    inv_z = 1.0 / z
    J = np.zeros((len(ids), 2, 3))
    J[:, 0, 0] = fx * inv_z
    J[:, 0, 2] = -fx * pc[:, 0] * inv_z ** 2
    J[:, 1, 1] = fy * inv_z
    J[:, 1, 2] = -fy * pc[:, 1] * inv_z ** 2
    cov2 = np.einsum("nij,njk,nlk->nil", J, cov_c, J)
    cov2[:, 0, 0] += _DILATION
    cov2[:, 1, 1] += _DILATION

    means = np.stack([fx * pc[:, 0] * inv_z + intrinsics.cx,
                      fy * pc[:, 1] * inv_z + intrinsics.cy], axis=1)
    mid = 0.5 * (cov2[:, 0, 0] + cov2[:, 1, 1])
    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.minimum(3.0 * np.sqrt(lam_max), _RADIUS_CAP)

    on_screen = ((means[:, 0] + radius > 0)
                 & (means[:, 0] - radius < intrinsics.width)
                 & (means[:, 1] + radius > 0)
                 & (means[:, 1] - radius < intrinsics.height)
                 & (det > 0))
    sel = np.nonzero(on_screen)[0]
    inv_cov = np.empty((len(sel), 3))
    d = det[sel]
    inv_cov[:, 0] = cov2[sel, 1, 1] / d
    inv_cov[:, 1] = -cov2[sel, 0, 1] / d
    inv_cov[:, 2] = cov2[sel, 0, 0] / d
    return ids[sel], means[sel], inv_cov, z[sel], radius[sel]


def _expand_pairs(means, radius, width, height):
    """(pair -> surfel row, pixel x, pixel y) over 3-sigma bounding boxes."""
    x0 = np.maximum(np.ceil(means[:, 0] - radius - 0.5).astype(np.int64), 0)
    x1 = np.minimum(np.floor(means[:, 0] + radius - 0.5).astype(np.int64),
                    width - 1)
    y0 = np.maximum(np.ceil(means[:, 1] - radius - 0.5).astype(np.int64), 0)
    y1 = np.minimum(np.floor(means[:, 1] + radius - 0.5).astype(np.int64),
                    height - 1)
    nx = np.maximum(x1 - x0 + 1, 0)
    ny = np.maximum(y1 - y0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, np.int64)
        return empty, empty, empty
    src = np.repeat(np.arange(len(means)), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - np.repeat(offsets, counts)
    nx_r = np.repeat(nx, counts)
    px = np.repeat(x0, counts) + local % nx_r
    py = np.repeat(y0, counts) + local // nx_r
    return src, px, py


def render(field, pose: CameraPose, intrinsics: CameraIntrinsics,
           background=(0.0, 0.0, 0.0), capture: bool = False):
    """Render a field (or raw SurfelBatch) to rgb/alpha/depth rasters.

    Returns RenderOutput, or (RenderOutput, Capture) when capture=True.
    """
    batch = field.surfels if isinstance(field, GaussianField) else field
    h, w = intrinsics.height, intrinsics.width
    bg = np.asarray(background, dtype=np.float64)
    npx = h * w
    rgb = np.zeros((npx, 3))
    alpha = np.zeros(npx)
    zsum = np.zeros(npx)
    isum = np.zeros(npx)
    med = np.zeros(npx)
    cap = Capture(pixel=np.zeros(0, np.int64), surfel=np.zeros(0, np.int64),
                  weight=np.zeros(0))

    ids = np.zeros(0, np.int64)
    if len(batch):
        ids, means, inv_cov, z, radius = _project_batch(batch, pose, intrinsics)
    if ids.size:
        src, px, py = _expand_pairs(means, radius, w, h)
        dx = (px + 0.5) - means[src, 0]
        dy = (py + 0.5) - means[src, 1]
        m = (inv_cov[src, 0] * dx * dx + 2 * inv_cov[src, 1] * dx * dy
             + inv_cov[src, 2] * dy * dy)
        a = batch.opacity[ids[src]] * np.exp(-0.5 * m)
        ok = (m <= 9.0) & (a >= _ALPHA_MIN)
        src, px, py, a = src[ok], px[ok], py[ok], np.minimum(a[ok], _ALPHA_MAX)
        flat = py * w + px
        order = np.lexsort((ids[src], z[src], flat))
        src, flat, a = src[order], flat[order], a[order]

        # exclusive per-pixel transmittance via segmented log-cumsum
        logs = np.log1p(-a)
        cs = np.cumsum(logs)
        cs_excl = cs - logs
        heads = np.zeros(len(flat), dtype=bool)
        heads[0] = True
        heads[1:] = flat[1:] != flat[:-1]
        head_idx = np.nonzero(heads)[0]
        seg_len = np.diff(np.append(head_idx, len(flat)))
        base = np.repeat(cs_excl[head_idx], seg_len)
        wgt = a * np.exp(cs_excl - base)

        cols = batch.color[ids[src]]
        for ch in range(3):
            rgb[:, ch] = np.bincount(flat, weights=wgt * cols[:, ch],
                                     minlength=npx)
        alpha = np.bincount(flat, weights=wgt, minlength=npx)
        zsum = np.bincount(flat, weights=wgt * z[src], minlength=npx)
        isum = np.bincount(flat, weights=wgt / z[src], minlength=npx)

        # median depth: front-to-back contribution crossing half the total
        cw = np.cumsum(wgt)
        cw_seg = cw - np.repeat(cw[head_idx] - wgt[head_idx], seg_len)
        totals = np.add.reduceat(wgt, head_idx)
        crossed = cw_seg >= 0.5 * np.repeat(totals, seg_len)
        pos = np.where(crossed, np.arange(len(wgt)), len(wgt))
        first = np.minimum.reduceat(pos, head_idx)
        med[flat[head_idx]] = z[src[np.minimum(first, len(wgt) - 1)]]
        if capture:
            cap = Capture(pixel=flat, surfel=ids[src], weight=wgt)

    covered = alpha > 0
    denom = np.where(covered, alpha, 1.0)
    depth = np.where(covered, zsum / denom, 0.0).reshape(h, w)
    inv_depth = np.where(covered, isum / denom, 0.0).reshape(h, w)
    alpha = alpha.reshape(h, w)
    rgb = rgb.reshape(h, w, 3) + (1.0 - alpha)[..., None] * bg
    out = RenderOutput(rgb=rgb, alpha=alpha, depth=depth,
                       inv_depth=inv_depth, median_depth=med.reshape(h, w))
    return (out, cap) if capture else out


def low_alpha_mask(out: RenderOutput, threshold: float = LOW_ALPHA_THRESHOLD
                   ) -> np.ndarray:
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    return out.alpha < threshold


def depth_discontinuity(maps: ControlMaps, window: int = 7) -> np.ndarray:
    """Pixels whose local mesh-depth window jumps or touches sky.

    Rendered depth legitimately mixes surfaces across such edges (splat
    tails reach a few pixels), so the silhouette depth test exempts them.
    """
    from scipy.ndimage import maximum_filter, minimum_filter

    d = maps.depth
    dmax = maximum_filter(np.where(maps.valid, d, -np.inf), size=window)
    dmin = minimum_filter(np.where(maps.valid, d, np.inf), size=window)
    jump = np.maximum(0.5, 0.1 * d)
    return ~np.isfinite(dmax) | ~np.isfinite(dmin) | (dmax - dmin > jump)


def silhouette_mask(out: RenderOutput, maps: ControlMaps,
                    alpha_threshold: float = SILHOUETTE_ALPHA) -> np.ndarray:
    """Holes and ghost geometry to repair at a novel view.

    A pixel is masked when coverage is thin, or when the rendered depth
    disagrees with the mesh at a geometry pixel.  The depth comparison
    requires both the median depth (robust against residual transmittance
    reaching far content) and the expected inverse depth (robust against
    grazing-surface quantization) to disagree, so neither far-field
    leakage nor slanted surfaces alone raise false repairs.
    """
    if out.alpha.shape != maps.shape:
        raise ValueError("render/maps shape mismatch")
    mask = out.alpha < alpha_threshold
    check = maps.valid & ~depth_discontinuity(maps) & (out.alpha > 0)
    d = np.where(maps.valid, maps.depth, 1.0)
    tol = np.maximum(0.05, 0.01 * d)
    med_bad = np.abs(out.median_depth - d) > tol
    inv_bad = np.abs(out.inv_depth - 1.0 / d) > tol / (d * d)
    return mask | (check & med_bad & inv_bad)
