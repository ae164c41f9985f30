"""Surface-aligned flattened Gaussian surfels.

A surfel is an oriented, nearly flat 3D Gaussian sitting on the mesh
surface: position p, orientation quaternion q (frame columns Qx, Qy, Qz
with Qz along the surface normal), scales s = [sx, sy, eps] with eps tiny,
opacity o and a view-invariant RGB color c (surfaces are treated as
Lambertian).  The kernel at a point x is

    G(x) = exp(-0.5 (x-p)^T Sigma^-1 (x-p)),
    Sigma = Q diag(sx^2, sy^2, eps^2) Q^T.

Pixels are lifted onto the mesh by unprojecting through the depth map; the
in-plane scales d/(sqrt(2) fx) and d/(sqrt(2) fy) make neighboring surfels
overlap, which keeps the rendered surface gap-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import ControlMaps
from .scene import CameraIntrinsics, CameraPose, UP, unproject_depth

LIFT_OPACITY = 0.9
_EPS_SCALE_REL = 1e-4
_EPS_SCALE_ABS = 1e-7


def frame_from_normal(n: np.ndarray) -> np.ndarray:
    """Orthonormal frame with the third column along n.

    Qx = (u x n)/|u x n| with the global up u = [0,1,0]; when n is
    parallel to u the fallback axis [0,0,1] takes u's place (the surfel is
    rotationally symmetric around n, so any fixed choice works).
    """
    n = np.asarray(n, dtype=np.float64)
    nn = np.linalg.norm(n)
    if nn == 0:
        raise ValueError("zero-length normal")
    n = n / nn
    u = UP if abs(n[1]) < 1.0 - 1e-9 else np.array([0.0, 0.0, 1.0])
    qx = np.cross(u, n)
    qx /= np.linalg.norm(qx)
    qy = np.cross(n, qx)
    qy /= np.linalg.norm(qy)
    return np.stack([qx, qy, n], axis=1)


def frames_from_normals(normals: np.ndarray) -> np.ndarray:
    """Vectorized frame_from_normal; normals (N, 3) -> (N, 3, 3)."""
    n = np.asarray(normals, dtype=np.float64)
    u = np.broadcast_to(UP, n.shape).copy()
    degen = np.abs(n[:, 1]) >= 1.0 - 1e-9
    u[degen] = [0.0, 0.0, 1.0]
    qx = np.cross(u, n)
    qx /= np.linalg.norm(qx, axis=1, keepdims=True)
    qy = np.cross(n, qx)
    qy /= np.linalg.norm(qy, axis=1, keepdims=True)
    return np.stack([qx, qy, n], axis=2)


def surfel_scales(d, intrinsics: CameraIntrinsics):
    """In-plane scales at depth d: (d/(sqrt(2) fx), d/(sqrt(2) fy))."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("depth must be positive")
    rt2 = np.sqrt(2.0)
    return d / (rt2 * intrinsics.fx), d / (rt2 * intrinsics.fy)


def flat_thickness(sx, sy):
    """Normal-direction scale: tiny but positive to keep Sigma invertible."""
    return np.maximum(_EPS_SCALE_REL * np.minimum(sx, sy), _EPS_SCALE_ABS)


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) batch from rotation matrices (..., 3, 3)."""
    R = np.asarray(R, dtype=np.float64)
    single = R.ndim == 2
    if single:
        R = R[None]
    m00, m11, m22 = R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]
    q = np.empty((len(R), 4))
    trace = m00 + m11 + m22
    # Shepperd's method: pick the numerically largest pivot per matrix.
    choice = np.argmax(np.stack([trace, m00, m11, m22], axis=1), axis=1)
    for c in range(4):
        sel = choice == c
        if not sel.any():
            continue
        r = R[sel]
        if c == 0:
            s = np.sqrt(1.0 + trace[sel]) * 2
            q[sel, 0] = 0.25 * s
            q[sel, 1] = (r[:, 2, 1] - r[:, 1, 2]) / s
            q[sel, 2] = (r[:, 0, 2] - r[:, 2, 0]) / s
            q[sel, 3] = (r[:, 1, 0] - r[:, 0, 1]) / s
        elif c == 1:
            s = np.sqrt(1.0 + r[:, 0, 0] - r[:, 1, 1] - r[:, 2, 2]) * 2
            q[sel, 0] = (r[:, 2, 1] - r[:, 1, 2]) / s
            q[sel, 1] = 0.25 * s
            q[sel, 2] = (r[:, 0, 1] + r[:, 1, 0]) / s
            q[sel, 3] = (r[:, 0, 2] + r[:, 2, 0]) / s
        elif c == 2:
            s = np.sqrt(1.0 - r[:, 0, 0] + r[:, 1, 1] - r[:, 2, 2]) * 2
            q[sel, 0] = (r[:, 0, 2] - r[:, 2, 0]) / s
            q[sel, 1] = (r[:, 0, 1] + r[:, 1, 0]) / s
            q[sel, 2] = 0.25 * s
            q[sel, 3] = (r[:, 1, 2] + r[:, 2, 1]) / s
        else:
            s = np.sqrt(1.0 - r[:, 0, 0] - r[:, 1, 1] + r[:, 2, 2]) * 2
            q[sel, 0] = (r[:, 1, 0] - r[:, 0, 1]) / s
            q[sel, 1] = (r[:, 0, 2] + r[:, 2, 0]) / s
            q[sel, 2] = (r[:, 1, 2] + r[:, 2, 1]) / s
            q[sel, 3] = 0.25 * s
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    # canonical sign: non-negative w
    q[q[:, 0] < 0] *= -1.0
    return q[0] if single else q


def matrix_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from (w, x, y, z) quaternions."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None]
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


@dataclass
class GaussianSurfel:
    p: np.ndarray  # (3,) position, meters
    q: np.ndarray  # (4,) unit quaternion (w, x, y, z)
    s: np.ndarray  # (3,) scales [sx, sy, eps]
    o: float       # opacity
    c: np.ndarray  # (3,) RGB in [0, 1]

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-9:
            raise ValueError("quaternion must be unit length")
        sx, sy, eps = self.s
        if sx <= 0 or sy <= 0 or not (0 < eps <= min(sx, sy)):
            raise ValueError("scales must satisfy sx, sy > 0 < eps <= min(sx, sy)")
        if not (0.0 <= self.o <= 1.0):
            raise ValueError("opacity must lie in [0, 1]")

    @property
    def rotation(self) -> np.ndarray:
        return matrix_from_quat(self.q)

    def covariance(self) -> np.ndarray:
        Q = self.rotation
        return Q @ np.diag(self.s ** 2) @ Q.T


def evaluate_kernel(surfel: GaussianSurfel, x: np.ndarray) -> float:
    """Gaussian falloff of one surfel at a world point; in (0, 1]."""
    d = np.asarray(x, dtype=np.float64) - surfel.p
    # Mahalanobis distance in the surfel frame avoids forming Sigma^-1.
    local = surfel.rotation.T @ d
    m = np.sum((local / surfel.s) ** 2)
    return float(np.exp(-0.5 * m))


class SurfelBatch:
    """Column-packed surfel arrays; the unit all field operations use.

    Geometry columns are treated as immutable after construction (colors
    may be rewritten in place), so derived world covariances are cached.
    """

    __slots__ = ("position", "quat", "scale", "opacity", "color", "_cov")

    def __init__(self, position, quat, scale, opacity, color):
        self.position = np.asarray(position, dtype=np.float64).reshape(-1, 3)
        self.quat = np.asarray(quat, dtype=np.float64).reshape(-1, 4)
        self.scale = np.asarray(scale, dtype=np.float64).reshape(-1, 3)
        self.opacity = np.asarray(opacity, dtype=np.float64).reshape(-1)
        self.color = np.asarray(color, dtype=np.float64).reshape(-1, 3)
        self._cov = None
        n = len(self.position)
        if not (len(self.quat) == len(self.scale) == len(self.opacity)
                == len(self.color) == n):
            raise ValueError("surfel arrays disagree on length")

    def world_covariances(self) -> np.ndarray:
        """(N, 3, 3) kernel covariances Q diag(s^2) Q^T, cached."""
        if self._cov is None:
            rot = matrix_from_quat(self.quat)
            self._cov = np.einsum("nij,nj,nkj->nik", rot, self.scale ** 2,
                                  rot)
        return self._cov

    def __len__(self) -> int:
        return len(self.position)

    def __getitem__(self, i: int) -> GaussianSurfel:
        return GaussianSurfel(p=self.position[i], q=self.quat[i],
                              s=self.scale[i], o=float(self.opacity[i]),
                              c=self.color[i])

    @staticmethod
    def empty() -> "SurfelBatch":
        return SurfelBatch(np.zeros((0, 3)), np.zeros((0, 4)),
                           np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))

    @staticmethod
    def concat(batches) -> "SurfelBatch":
        return SurfelBatch(
            np.concatenate([b.position for b in batches]),
            np.concatenate([b.quat for b in batches]),
            np.concatenate([b.scale for b in batches]),
            np.concatenate([b.opacity for b in batches]),
            np.concatenate([b.color for b in batches]))


def lift_pixels(image: np.ndarray, maps: ControlMaps, pose: CameraPose,
                intrinsics: CameraIntrinsics, mask: np.ndarray) -> SurfelBatch:
    """One surfel per masked pixel, positioned on the mesh surface.

    Color comes from the image pixel, orientation from the per-pixel
    normal, scales from the pixel footprint at the pixel's depth, opacity
    is the lift constant 0.9.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != maps.shape:
        raise ValueError("mask/maps shape mismatch")
    if np.any(mask & ~maps.valid):
        raise ValueError("mask selects pixels without geometry")
    points = unproject_depth(maps.depth, pose, intrinsics)[mask]
    depths = maps.depth[mask]
    normals = maps.normal[mask]
    colors = np.asarray(image, dtype=np.float64)[mask]

    frames = frames_from_normals(normals)
    quats = quat_from_matrix(frames)
    sx, sy = surfel_scales(depths, intrinsics)
    eps = flat_thickness(sx, sy)
    scales = np.stack([sx, sy, eps], axis=1)
    opac = np.full(len(depths), LIFT_OPACITY)
    return SurfelBatch(points, quats, scales, opac, colors)


class GaussianField:
    """Append-only surfel collection with per-surfel source-view indices.

    The packed arrays double as the culling index: renderers test them
    directly against the view frustum.  Appends re-pack, reads in between
    are safe to share.
    """

    def __init__(self):
        self.surfels = SurfelBatch.empty()
        self.provenance = np.zeros(0, dtype=np.int32)

    def __len__(self) -> int:
        return len(self.surfels)

    def append(self, batch: SurfelBatch, view_index: int) -> None:
        if len(batch) == 0:
            return
        self.surfels = SurfelBatch.concat([self.surfels, batch])
        self.provenance = np.concatenate(
            [self.provenance, np.full(len(batch), view_index, dtype=np.int32)])
