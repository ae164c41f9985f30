"""Backward warping of generated images between views using mesh depth.

The warp runs destination-to-source: every valid destination pixel is
unprojected through the destination depth map, reprojected into the source
view, z-tested against the source depth, and sampled with nearest-neighbor
lookup.  Backward lookup avoids the hole-filling heuristics a forward
splatting warp would need, because destination depth is always available
from the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import ControlMaps
from .scene import CameraIntrinsics, CameraPose, project_points, unproject_depth


def occlusion_tolerance(depth: np.ndarray) -> np.ndarray:
    """Accept band for the source z-test: max(2 cm, 0.5% of depth)."""
    return np.maximum(0.02, 0.005 * depth)


def _bilinear_valid_depth(depth: np.ndarray, u: np.ndarray,
                          v: np.ndarray) -> np.ndarray:
    """Bilinear depth at continuous image coords, ignoring invalid pixels.

    Returns 0 where no valid neighbor carries weight.
    """
    h, w = depth.shape
    x = u - 0.5
    y = v - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    num = np.zeros_like(u)
    den = np.zeros_like(u)
    for dx, dy, wgt in ((0, 0, (1 - fx) * (1 - fy)),
                        (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy),
                        (1, 1, fx * fy)):
        xi = np.clip(x0 + dx, 0, w - 1)
        yi = np.clip(y0 + dy, 0, h - 1)
        d = depth[yi, xi]
        wv = np.where(d > 0, wgt, 0.0)
        num += wv * d
        den += wv
    with np.errstate(invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return out


@dataclass
class WarpResult:
    image: np.ndarray      # (H, W, 3), defined only where valid
    valid: np.ndarray      # (H, W) bool
    source_px: np.ndarray  # (H, W, 2) continuous (u, v) in the source view


def backward_warp(src_image: np.ndarray, src_maps: ControlMaps,
                  src_pose: CameraPose, dst_maps: ControlMaps,
                  dst_pose: CameraPose,
                  intrinsics: CameraIntrinsics) -> WarpResult:
    if src_maps.shape != dst_maps.shape or src_image.shape[:2] != dst_maps.shape:
        raise ValueError("warp inputs must share one resolution")
    h, w = dst_maps.shape

    points = unproject_depth(dst_maps.depth, dst_pose, intrinsics)
    u, v, z = project_points(points.reshape(-1, 3), src_pose, intrinsics)
    u = u.reshape(h, w)
    v = v.reshape(h, w)
    z = z.reshape(h, w)
    # pixels without destination geometry project to 0/0; park them
    # outside the frame so the integer casts below stay clean
    bad = ~(np.isfinite(u) & np.isfinite(v))
    u = np.where(bad, -1.0, u)
    v = np.where(bad, -1.0, v)

    in_front = (z > 0) & ~bad
    ix = np.floor(u).astype(np.int64)
    iy = np.floor(v).astype(np.int64)
    in_frustum = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h) & in_front
    ix_c = np.clip(ix, 0, w - 1)
    iy_c = np.clip(iy, 0, h - 1)

    # z-test against bilinearly interpolated source depth (valid neighbors
    # only).  Nearest-pixel comparison would reject grazing surfaces whose
    # depth changes by more than the tolerance across one pixel.
    z_src = _bilinear_valid_depth(src_maps.depth, u, v)
    nearest_valid = src_maps.depth[iy_c, ix_c] > 0
    unoccluded = (z_src > 0) & nearest_valid & (
        np.abs(z - z_src) < occlusion_tolerance(np.maximum(z, 0)))
    valid = dst_maps.valid & in_frustum & unoccluded

    image = np.zeros((h, w) + src_image.shape[2:], dtype=src_image.dtype)
    image[valid] = src_image[iy_c[valid], ix_c[valid]]
    source_px = np.stack([u, v], axis=-1)
    return WarpResult(image=image, valid=valid, source_px=source_px)


def outpaint_mask(warp: WarpResult, dst_maps: ControlMaps) -> np.ndarray:
    """Pixels the generator must synthesize.

    True where destination geometry exists but no warped content survived,
    and at all sky pixels (the generator always paints sky).
    """
    if warp.valid.shape != dst_maps.shape:
        raise ValueError("warp/map shape mismatch")
    return (dst_maps.valid & ~warp.valid) | ~dst_maps.valid


def incompleteness_fraction(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask)) / mask.size
