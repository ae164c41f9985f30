"""Procedural test scenes.

The street-canyon corridor is the standard verification scene: a road
between two tall segmented walls, closed by an end wall, with optional
box obstacles that create disocclusions.  Proportions are chosen so that
warp incompleteness grows slowly and threshold-based key-view selection
lands near 20 m of camera travel.
"""

from __future__ import annotations

import numpy as np

from .scene import CameraIntrinsics, CameraPath, LabeledMesh, make_straight_path


class MeshBuilder:
    def __init__(self):
        self.verts: list = []
        self.tris: list = []
        self.sem: list = []
        self.inst: list = []

    def grid_quad(self, origin, du, dv, nu, nv, semantic, instance):
        """Tessellated quad: origin + i*du + j*dv, normal along du x dv."""
        origin = np.asarray(origin, dtype=float)
        du = np.asarray(du, dtype=float)
        dv = np.asarray(dv, dtype=float)
        base = len(self.verts)
        for j in range(nv + 1):
            for i in range(nu + 1):
                self.verts.append(origin + i * du + j * dv)
        for j in range(nv):
            for i in range(nu):
                a = base + j * (nu + 1) + i
                b = a + 1
                c = a + nu + 2
                d = a + nu + 1
                self.tris.append([a, b, c])
                self.tris.append([a, c, d])
                self.sem.extend([semantic, semantic])
                self.inst.extend([instance, instance])

    def build(self) -> LabeledMesh:
        return LabeledMesh(vertices=np.array(self.verts),
                           triangles=np.array(self.tris),
                           face_semantic=np.array(self.sem),
                           face_instance=np.array(self.inst))


def corridor_mesh(length=80.0, width=16.0, wall_height=10.0, cell=1.0,
                  z0=-5.0, boxes=()) -> LabeledMesh:
    """Street canyon along +z.  Semantics: road 1, left wall 2, right
    wall 3, end wall 4, boxes 5; wall instances change every 10 m.

    Normals face the corridor interior; cameras travel at x = 0.
    """
    b = MeshBuilder()
    hw = width / 2.0
    n_len = int(round(length / cell))
    n_wid = int(round(width / cell))
    n_hgt = int(round(wall_height / cell))
    seg = max(1, int(round(10.0 / cell)))

    # road at y=0, normal +y = cross(+z, +x)
    b.grid_quad([-hw, 0.0, z0], [0, 0, cell], [cell, 0, 0], n_len, n_wid,
                semantic=1, instance=1)
    for k in range(0, n_len, seg):
        nz = min(seg, n_len - k)
        zs = z0 + k * cell
        # left wall normal +x = cross(+y, +z); right wall -x = cross(+z, +y)
        b.grid_quad([-hw, 0.0, zs], [0, cell, 0], [0, 0, cell], n_hgt, nz,
                    semantic=2, instance=10 + k // seg)
        b.grid_quad([hw, 0.0, zs], [0, 0, cell], [0, cell, 0], nz, n_hgt,
                    semantic=3, instance=40 + k // seg)
    # end wall, normal -z = cross(+y, +x), toward the cameras
    b.grid_quad([-hw, 0.0, z0 + length], [0, cell, 0], [cell, 0, 0],
                n_hgt, n_wid, semantic=4, instance=70)
    # box obstacles: (x, z, size_x, size_y, size_z), resting on the road
    for bi, (bx, bz, sx, sy, sz) in enumerate(boxes):
        nu = max(1, int(round(sx / cell)))
        nv = max(1, int(round(sy / cell)))
        nw = max(1, int(round(sz / cell)))
        x0, x1 = bx - sx / 2, bx + sx / 2
        zb0, zb1 = bz - sz / 2, bz + sz / 2
        inst = 80 + bi
        cx, cy, cz = sx / nu, sy / nv, sz / nw
        b.grid_quad([x0, 0, zb0], [0, cy, 0], [cx, 0, 0], nv, nu, 5, inst)
        b.grid_quad([x0, 0, zb1], [cx, 0, 0], [0, cy, 0], nu, nv, 5, inst)
        b.grid_quad([x0, 0, zb0], [0, 0, cz], [0, cy, 0], nw, nv, 5, inst)
        b.grid_quad([x1, 0, zb0], [0, cy, 0], [0, 0, cz], nv, nw, 5, inst)
        b.grid_quad([x0, sy, zb0], [0, 0, cz], [cx, 0, 0], nw, nu, 5, inst)
    return b.build()


DEFAULT_BOXES = ((-14.0, 38.0, 8.0, 44.0, 8.0),
                 (16.0, 90.0, 10.0, 50.0, 10.0))


def canyon_scene(views=60, width=256, height=144, cell=7.0, length=420.0,
                 z0=-120.0, boxes=DEFAULT_BOXES, camera_height=36.0,
                 spacing=1.0) -> tuple[LabeledMesh, CameraPath]:
    """Verification corridor plus a straight camera path inside it.

    The canyon extends well behind the path start so every view sits
    deep inside; wall tops clear the frame, keeping the sky fraction low
    and the incompleteness growth gradual.
    """
    mesh = corridor_mesh(length=length, width=96.0, wall_height=96.0,
                         cell=cell, z0=z0, boxes=boxes)
    intr = CameraIntrinsics.from_fov(width, height, 45.0)
    path = make_straight_path((0.0, camera_height, 0.0), (0.0, 0.0, 1.0),
                              views, spacing, intr)
    return mesh, path
