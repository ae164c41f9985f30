"""Verification metrics for synthesized fields.

All metrics compare against the deterministic oracle backend, which makes
ground truth available at every view: per-view PSNR/SSIM on well-covered
pixels, silhouette fractions, and a cross-view brightness-gap statistic
(mean luminance difference over co-visible pixel pairs of consecutive
views) that quantifies exposure seams.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

from .splatter import render, silhouette_mask
from .warp import backward_warp

PSNR_ALPHA = 0.99


def psnr(a: np.ndarray, b: np.ndarray, sel=None):
    """Peak signal-to-noise ratio in dB over selected pixels; None if empty."""
    if sel is not None:
        a = a[sel]
        b = b[sel]
    if a.size == 0:
        return None
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 7) -> float:
    """Mean structural similarity with uniform windows, per channel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    vals = []
    for ch in range(a.shape[-1] if a.ndim == 3 else 1):
        x = a[..., ch] if a.ndim == 3 else a
        y = b[..., ch] if b.ndim == 3 else b
        mx = uniform_filter(x, window)
        my = uniform_filter(y, window)
        mxx = uniform_filter(x * x, window)
        myy = uniform_filter(y * y, window)
        mxy = uniform_filter(x * y, window)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cov + c2)
             / ((mx * mx + my * my + c1) * (vx + vy + c2)))
        vals.append(s.mean())
    return float(np.mean(vals))


def _luminance(rgb: np.ndarray) -> np.ndarray:
    return rgb @ np.array([0.2126, 0.7152, 0.0722])


def covisible_brightness_gap(renders, maps_list, poses, intrinsics) -> float:
    """Mean |mean-luminance difference| over consecutive co-visible pairs.

    Pixels of view i+1 are paired with view i content through the mesh
    warp, so the statistic only reads surface points both cameras see.
    """
    gaps = []
    for i in range(len(renders) - 1):
        res = backward_warp(renders[i], maps_list[i], poses[i],
                            maps_list[i + 1], poses[i + 1], intrinsics)
        if not res.valid.any():
            continue
        lum_src = _luminance(res.image[res.valid])
        lum_dst = _luminance(renders[i + 1][res.valid])
        gaps.append(abs(float(lum_src.mean() - lum_dst.mean())))
    return float(np.mean(gaps)) if gaps else 0.0


def field_report(field, pipeline, views=None, oracle: bool = True) -> dict:
    """Machine-readable per-view quality report.

    ``pipeline`` supplies cached maps and oracle images.  Without the
    oracle flag only coverage and silhouette statistics are emitted.
    """
    path = pipeline.path
    views = list(range(len(path))) if views is None else list(views)
    out_views = []
    renders = []
    maps_list = []
    poses = []
    for i in views:
        out = render(field, path.poses[i], path.intrinsics,
                     background=pipeline.config.background)
        maps = pipeline.maps(i)
        sel = out.alpha >= PSNR_ALPHA
        entry = {
            "index": i,
            "alpha99_coverage": float(sel.mean()),
            "silhouette_fraction": float(silhouette_mask(out, maps).mean()),
            "psnr": None,
            "ssim": None,
        }
        if oracle:
            truth = pipeline.oracle_image(i)
            entry["psnr"] = psnr(out.rgb, truth, sel)
            entry["ssim"] = ssim(out.rgb, truth)
        out_views.append(entry)
        renders.append(out.rgb)
        maps_list.append(maps)
        poses.append(path.poses[i])
    return {
        "views": out_views,
        "brightness_gap": covisible_brightness_gap(renders, maps_list, poses,
                                                   path.intrinsics),
        "surfels": len(field),
    }
