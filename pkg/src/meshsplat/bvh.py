"""Bounding-volume hierarchy for closest-hit ray queries on triangle meshes.

Queries are vectorized over rays: the tree is traversed with packets of
active ray indices so that slab tests and triangle intersections run as
numpy batch operations.  Results are identical to brute-force intersection
over all faces, including the tie-break (smaller face id wins at equal
distance), so the brute-force path below doubles as the test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import LabeledMesh

_LEAF_SIZE = 16
_EPS_T = 1e-9       # minimum hit distance, rejects self-hits at the origin
_EPS_DET = 1e-12    # parallel-ray rejection in Moller-Trumbore


@dataclass
class RayHits:
    """Closest-hit results for a batch of rays; face == -1 marks a miss."""
    face: np.ndarray  # (R,) int64
    t: np.ndarray     # (R,) float64, ray parameter (Z depth for z=1 dirs)
    bary: np.ndarray  # (R, 2) float64, (u, v) with P = (1-u-v)a + u*b + v*c


def _intersect_tris(origins, dirs, v0, e1, e2, face_ids, best_t, best_face, best_bary,
                    cull_backfaces: bool):
    """Moller-Trumbore for one triangle set against a ray batch, in place.

    Triangles are visited in ascending face id so the equal-distance
    tie-break is storage-order independent.
    """
    order = np.argsort(face_ids, kind="stable")
    for k in order:
        h = np.cross(dirs, e2[k])
        a = h @ e1[k]
        if cull_backfaces:
            ok = a > _EPS_DET
        else:
            ok = np.abs(a) > _EPS_DET
        if not ok.any():
            continue
        inv_a = np.where(ok, 1.0 / np.where(ok, a, 1.0), 0.0)
        s = origins - v0[k]
        u = np.einsum("ij,ij->i", s, h) * inv_a
        q = np.cross(s, e1[k])
        v = np.einsum("ij,ij->i", dirs, q) * inv_a
        t = (q @ e2[k]) * inv_a
        inside = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > _EPS_T)
        better = inside & ((t < best_t)
                           | ((t == best_t) & (face_ids[k] < best_face)))
        if better.any():
            best_t[better] = t[better]
            best_face[better] = face_ids[k]
            best_bary[better, 0] = u[better]
            best_bary[better, 1] = v[better]


def brute_force_ray_cast(mesh: LabeledMesh, origins, dirs,
                         cull_backfaces: bool = True) -> RayHits:
    """Reference closest-hit: test every ray against every face."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_face = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    best_bary = np.zeros((n, 2))
    v = mesh.vertices
    tri = mesh.triangles
    v0 = v[tri[:, 0]]
    e1 = v[tri[:, 1]] - v0
    e2 = v[tri[:, 2]] - v0
    _intersect_tris(origins, dirs, v0, e1, e2,
                    np.arange(mesh.num_faces, dtype=np.int64),
                    best_t, best_face, best_bary, cull_backfaces)
    miss = ~np.isfinite(best_t)
    best_face[miss] = -1
    best_t[miss] = 0.0
    return RayHits(face=best_face, t=best_t, bary=best_bary)


class SpatialIndex:
    """Median-split BVH over mesh triangles; read-only and reentrant."""

    def __init__(self, mesh: LabeledMesh):
        if mesh.num_faces == 0:
            raise ValueError("cannot build a spatial index over an empty mesh")
        self.mesh = mesh
        v = mesh.vertices
        tri = mesh.triangles
        self._v0 = v[tri[:, 0]]
        self._e1 = v[tri[:, 1]] - self._v0
        self._e2 = v[tri[:, 2]] - self._v0

        pts = v[tri]                      # (F, 3, 3)
        tri_min = pts.min(axis=1)
        tri_max = pts.max(axis=1)
        centroids = pts.mean(axis=1)

        node_min, node_max = [], []
        node_left, node_right = [], []    # -1 marks a leaf
        leaf_start, leaf_count = [], []
        perm: list[int] = []

        def build(ids: np.ndarray) -> int:
            node = len(node_min)
            node_min.append(tri_min[ids].min(axis=0))
            node_max.append(tri_max[ids].max(axis=0))
            node_left.append(-1)
            node_right.append(-1)
            leaf_start.append(-1)
            leaf_count.append(0)
            if len(ids) <= _LEAF_SIZE:
                leaf_start[node] = len(perm)
                leaf_count[node] = len(ids)
                perm.extend(ids.tolist())
                return node
            c = centroids[ids]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            order = np.argsort(c[:, axis], kind="stable")
            half = len(ids) // 2
            node_left[node] = build(ids[order[:half]])
            node_right[node] = build(ids[order[half:]])
            return node

        import sys
        old_limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old_limit, 10000))
        try:
            build(np.arange(mesh.num_faces))
        finally:
            sys.setrecursionlimit(old_limit)

        self._node_min = np.array(node_min)
        self._node_max = np.array(node_max)
        self._node_left = np.array(node_left, dtype=np.int64)
        self._node_right = np.array(node_right, dtype=np.int64)
        self._leaf_start = np.array(leaf_start, dtype=np.int64)
        self._leaf_count = np.array(leaf_count, dtype=np.int64)
        self._perm = np.array(perm, dtype=np.int64)

    def _slab(self, node: int, ids, inv_dirs, oinv, best_t):
        """Slab test for one node over a ray subset; returns hits and entry."""
        t0 = self._node_min[node] * inv_dirs[ids] - oinv[ids]
        t1 = self._node_max[node] * inv_dirs[ids] - oinv[ids]
        tnear = np.minimum(t0, t1).max(axis=1)
        tfar = np.maximum(t0, t1).min(axis=1)
        hit = (tnear <= tfar) & (tfar > _EPS_T) & (tnear < best_t[ids])
        return hit, tnear

    def ray_cast(self, origins, dirs, cull_backfaces: bool = True) -> RayHits:
        """Closest hit per ray.  ``t`` is in units of the ray direction."""
        origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=np.float64)
        n = len(origins)
        safe = np.where(dirs == 0.0, 1e-300, dirs)
        inv_dirs = 1.0 / safe
        oinv = origins * inv_dirs
        best_t = np.full(n, np.inf)
        best_face = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        best_bary = np.zeros((n, 2))

        all_ids = np.arange(n)
        hit, tnear = self._slab(0, all_ids, inv_dirs, oinv, best_t)
        stack = [(0, all_ids[hit], tnear[hit])]
        while stack:
            node, ids, entry = stack.pop()
            # prune rays whose best hit moved in front of this subtree
            live = entry < best_t[ids]
            if not live.all():
                ids = ids[live]
            if ids.size == 0:
                continue
            if self._node_left[node] < 0:
                s = self._leaf_start[node]
                c = self._leaf_count[node]
                faces = self._perm[s:s + c]
                bt = best_t[ids]
                bf = best_face[ids]
                bb = best_bary[ids]
                _intersect_tris(origins[ids], dirs[ids],
                                self._v0[faces], self._e1[faces], self._e2[faces],
                                faces, bt, bf, bb, cull_backfaces)
                best_t[ids] = bt
                best_face[ids] = bf
                best_bary[ids] = bb
            else:
                left = int(self._node_left[node])
                right = int(self._node_right[node])
                hit_l, tn_l = self._slab(left, ids, inv_dirs, oinv, best_t)
                hit_r, tn_r = self._slab(right, ids, inv_dirs, oinv, best_t)
                entry_l = (left, ids[hit_l], tn_l[hit_l])
                entry_r = (right, ids[hit_r], tn_r[hit_r])
                # Visit the on-average nearer child first for better pruning.
                near_first = tn_l.sum() <= tn_r.sum()
                stack.append(entry_r if near_first else entry_l)
                stack.append(entry_l if near_first else entry_r)

        miss = ~np.isfinite(best_t)
        best_face[miss] = -1
        best_t[miss] = 0.0
        return RayHits(face=best_face, t=best_t, bary=best_bary)


def build_bvh(mesh: LabeledMesh) -> SpatialIndex:
    return SpatialIndex(mesh)
