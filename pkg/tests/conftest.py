import hypothesis
import numpy as np
import pytest

from meshsplat.scene import CameraIntrinsics, LabeledMesh, make_straight_path

hypothesis.settings.register_profile(
    "default", max_examples=50, deadline=None)
hypothesis.settings.load_profile("default")


def make_quad(p0, p1, p2, p3, semantic, instance, base_vertex=0):
    """Two triangles for the quad p0-p1-p2-p3 (counter-clockwise front)."""
    tris = [[base_vertex, base_vertex + 1, base_vertex + 2],
            [base_vertex, base_vertex + 2, base_vertex + 3]]
    return [p0, p1, p2, p3], tris, [semantic, semantic], [instance, instance]


def quad_mesh(p0, p1, p2, p3, semantic=1, instance=1) -> LabeledMesh:
    verts, tris, sem, inst = make_quad(p0, p1, p2, p3, semantic, instance)
    return LabeledMesh(vertices=np.array(verts, dtype=float),
                       triangles=np.array(tris),
                       face_semantic=np.array(sem),
                       face_instance=np.array(inst))


def wall_mesh(z=10.0, half_w=20.0, y0=-20.0, y1=20.0,
              semantic=2, instance=5) -> LabeledMesh:
    """A single wall at constant z facing the -z direction (toward origin)."""
    return quad_mesh([half_w, y0, z], [-half_w, y0, z],
                     [-half_w, y1, z], [half_w, y1, z],
                     semantic=semantic, instance=instance)


def grid_wall_mesh(z=10.0, x0=-8.0, x1=8.0, y0=-4.0, y1=6.0, cell=1.0,
                   semantic=2, instance=5, flip=False) -> LabeledMesh:
    """A tessellated wall at constant z, front toward -z (or +z if flip)."""
    xs = np.arange(x0, x1 + 1e-9, cell)
    ys = np.arange(y0, y1 + 1e-9, cell)
    verts = []
    tris = []
    for y in ys:
        for x in xs:
            verts.append([x, y, z])
    nx = len(xs)
    for j in range(len(ys) - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = j * nx + i + 1
            c = (j + 1) * nx + i + 1
            d = (j + 1) * nx + i
            if flip:
                tris.append([a, b, c])
                tris.append([a, c, d])
            else:
                tris.append([a, c, b])
                tris.append([a, d, c])
    nf = len(tris)
    return LabeledMesh(vertices=np.array(verts, dtype=float),
                       triangles=np.array(tris),
                       face_semantic=np.full(nf, semantic),
                       face_instance=np.full(nf, instance))


def cube_mesh(center=(0.0, 0.0, 0.0), size=2.0,
              semantic=1, instance=1) -> LabeledMesh:
    c = np.asarray(center, dtype=float)
    h = size / 2.0
    corners = np.array([[sx, sy, sz] for sx in (-h, h)
                        for sy in (-h, h) for sz in (-h, h)]) + c
    # Faces wound so normals point outward.
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for a, b, cc, d in quads:
        tris.append([a, b, cc])
        tris.append([a, cc, d])
    nf = len(tris)
    return LabeledMesh(vertices=corners,
                       triangles=np.array(tris),
                       face_semantic=np.full(nf, semantic),
                       face_instance=np.full(nf, instance))


def random_mesh(rng, n_faces=200, extent=10.0) -> LabeledMesh:
    centers = rng.uniform(-extent, extent, size=(n_faces, 3))
    offsets = rng.normal(scale=1.0, size=(n_faces, 2, 3))
    verts = np.concatenate([centers[:, None, :],
                            centers[:, None, :] + offsets], axis=1)
    verts = verts.reshape(-1, 3)
    tris = np.arange(3 * n_faces).reshape(n_faces, 3)
    return LabeledMesh(vertices=verts, triangles=tris,
                       face_semantic=rng.integers(0, 5, n_faces),
                       face_instance=rng.integers(0, 50, n_faces))


# The canyon/corridor builders live with the package; tests lean on the
# same scenes the demo scripts use.
from meshsplat.scenes import canyon_scene, corridor_mesh  # noqa: F401


@pytest.fixture
def small_intrinsics():
    return CameraIntrinsics.from_fov(64, 48, 45.0)


@pytest.fixture
def mid_intrinsics():
    return CameraIntrinsics.from_fov(256, 144, 45.0)


@pytest.fixture
def forward_path(small_intrinsics):
    return make_straight_path((0.0, 1.5, 0.0), (0.0, 0.0, 1.0), 5, 1.0,
                              small_intrinsics)
