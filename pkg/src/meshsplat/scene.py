"""Labeled meshes, camera conventions, and camera paths.

Coordinate conventions used throughout the package
--------------------------------------------------
World space is right-handed with the up direction u = [0, 1, 0].  A camera
looks along its local +Z axis; image x grows to the right and image y grows
downward.  ``CameraPose.rotation`` is the camera-to-world rotation, so a
world point X maps to camera coordinates via ``R.T @ (X - position)`` and
projects with the standard pinhole model ``u = fx * Xc/Zc + cx``.  Rays are
cast through pixel centers, i.e. through continuous image coordinates
``(ix + 0.5, iy + 0.5)``.  Depth is camera-frame Z, not ray length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UP = np.array([0.0, 1.0, 0.0])


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""


class MeshSchemaError(ValueError):
    """Raised when a parsed mesh violates the labeled-mesh schema."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the raster")

    @staticmethod
    def from_fov(width: int, height: int, fov_x_deg: float) -> "CameraIntrinsics":
        """Square-pixel intrinsics from a horizontal field of view."""
        fx = (width / 2.0) / np.tan(np.radians(fov_x_deg) / 2.0)
        return CameraIntrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                                width=width, height=height)


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray  # 3x3 camera-to-world
    position: np.ndarray  # 3,

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.position, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and a 3-vector position")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be proper (det +1)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", t)


@dataclass(frozen=True)
class CameraPath:
    poses: list[CameraPose]
    intrinsics: CameraIntrinsics
    spacing: float = 1.0

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ValueError("a camera path needs at least two poses")

    def __len__(self) -> int:
        return len(self.poses)


def make_straight_path(start, direction, count: int, spacing: float,
                       intrinsics: CameraIntrinsics) -> CameraPath:
    """Uniformly spaced forward-facing poses along a horizontal direction.

    All poses share one rotation: camera +Z equals ``direction``, image y
    points world-down.  Mimics a vehicle-mounted front camera.
    """
    start = np.asarray(start, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if count < 2:
        raise ValueError("path must contain at least 2 poses")
    if direction[1] != 0.0:
        raise ValueError("path direction must be horizontal (zero y component)")
    norm = np.linalg.norm(direction)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("path direction must be a unit vector")

    z_cam = direction / norm
    y_cam = -UP  # image y is down
    x_cam = np.cross(y_cam, z_cam)
    R = np.stack([x_cam, y_cam, z_cam], axis=1)
    poses = [CameraPose(rotation=R, position=start + i * spacing * z_cam)
             for i in range(count)]
    return CameraPath(poses=poses, intrinsics=intrinsics, spacing=spacing)


# ---------------------------------------------------------------------------
# Projection helpers shared by the raster / warp / surfel modules.

def pixel_ray_dirs(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions through all pixel centers, z = 1.

    Shape (H, W, 3).  With unit z the ray parameter of an intersection
    equals the camera-frame Z depth of the hit point.
    """
    ix = np.arange(intrinsics.width, dtype=np.float64) + 0.5
    iy = np.arange(intrinsics.height, dtype=np.float64) + 0.5
    x = (ix - intrinsics.cx) / intrinsics.fx
    y = (iy - intrinsics.cy) / intrinsics.fy
    dirs = np.empty((intrinsics.height, intrinsics.width, 3))
    dirs[..., 0] = x[None, :]
    dirs[..., 1] = y[:, None]
    dirs[..., 2] = 1.0
    return dirs


def unproject_depth(depth: np.ndarray, pose: CameraPose,
                    intrinsics: CameraIntrinsics) -> np.ndarray:
    """World points for every pixel given a Z-depth raster; (H, W, 3)."""
    dirs = pixel_ray_dirs(intrinsics)
    pts_cam = dirs * depth[..., None]
    return pts_cam @ pose.rotation.T + pose.position


def project_points(points: np.ndarray, pose: CameraPose,
                   intrinsics: CameraIntrinsics):
    """Project world points; returns continuous (u, v) and camera Z depth."""
    pts = np.asarray(points, dtype=np.float64)
    pc = (pts - pose.position) @ pose.rotation
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * pc[..., 0] / z + intrinsics.cx
        v = intrinsics.fy * pc[..., 1] / z + intrinsics.cy
    return u, v, z


# ---------------------------------------------------------------------------
# Labeled mesh.

@dataclass
class LabeledMesh:
    """Triangle mesh with per-face semantic and instance labels.

    ``face_normal`` is derived from the winding order (counter-clockwise
    seen from the front) and has unit length.
    """
    vertices: np.ndarray       # (V, 3) float64
    triangles: np.ndarray      # (F, 3) int32
    face_semantic: np.ndarray  # (F,) uint16
    face_instance: np.ndarray  # (F,) uint32
    face_normal: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32)
        self.face_semantic = np.ascontiguousarray(self.face_semantic, dtype=np.uint16)
        self.face_instance = np.ascontiguousarray(self.face_instance, dtype=np.uint32)
        nf = len(self.triangles)
        if self.face_semantic.shape != (nf,) or self.face_instance.shape != (nf,):
            raise MeshSchemaError("label arrays must have one entry per face")
        if nf and (self.triangles.min() < 0
                   or self.triangles.max() >= len(self.vertices)):
            raise MeshSchemaError("triangle index out of range")
        self.face_normal = self._compute_normals()

    def _compute_normals(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        lengths = np.linalg.norm(n, axis=1)
        if np.any(lengths <= 0):
            raise MeshSchemaError("degenerate triangle (zero area)")
        return n / lengths[:, None]

    @property
    def num_faces(self) -> int:
        return len(self.triangles)


def load_mesh(path) -> LabeledMesh:
    """Read the labeled-mesh PLY dialect (ASCII, per-face labels)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError(f"{path}: not a PLY file")

    n_vertex = n_face = None
    elements = []  # (name, count) in declaration order
    vertex_props: list[str] = []
    face_props: list[str] = []
    cur = None
    header_end = None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise MeshFormatError(f"line {i + 1}: only ascii PLY is supported")
        elif tok[0] == "element":
            cur = tok[1]
            elements.append((tok[1], int(tok[2])))
            if tok[1] == "vertex":
                n_vertex = int(tok[2])
            elif tok[1] == "face":
                n_face = int(tok[2])
        elif tok[0] == "property":
            if cur == "vertex":
                vertex_props.append(tok[-1])
            elif cur == "face":
                face_props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = i
            break
    if header_end is None:
        raise MeshFormatError(f"{path}: missing end_header")
    if n_vertex is None or n_face is None:
        raise MeshFormatError(f"{path}: missing vertex or face element")
    if vertex_props[:3] != ["x", "y", "z"]:
        raise MeshSchemaError(f"{path}: vertex element must start with x y z")
    for prop in ("vertex_indices", "semantic", "instance"):
        if prop not in face_props:
            raise MeshSchemaError(f"{path}: face element lacks '{prop}' property")

    body = lines[header_end + 1:]
    if len(body) < n_vertex + n_face:
        raise MeshFormatError(f"{path}: truncated body, "
                              f"expected {n_vertex + n_face} data lines")
    try:
        vertices = np.array([[float(x) for x in body[i].split()[:3]]
                             for i in range(n_vertex)])
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad vertex line: {exc}") from exc

    tris, sem, inst = [], [], []
    for k in range(n_face):
        tok = body[n_vertex + k].split()
        try:
            cnt = int(tok[0])
            if cnt != 3:
                raise MeshFormatError(
                    f"{path}: face {k} has {cnt} vertices, only triangles supported")
            idx = [int(x) for x in tok[1:1 + cnt]]
            tris.append(idx)
            sem.append(int(tok[1 + cnt]))
            inst.append(int(tok[2 + cnt]))
        except (ValueError, IndexError) as exc:
            raise MeshFormatError(f"{path}: bad face line {k}: {exc}") from exc

    return LabeledMesh(vertices=vertices,
                       triangles=np.array(tris, dtype=np.int64),
                       face_semantic=np.array(sem),
                       face_instance=np.array(inst))


def save_mesh(mesh: LabeledMesh, path) -> None:
    """Write the labeled-mesh PLY dialect; floats round-trip bitwise."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(mesh.vertices)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {mesh.num_faces}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("property ushort semantic\nproperty uint instance\n")
        fh.write("end_header\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t, s, i in zip(mesh.triangles, mesh.face_semantic, mesh.face_instance):
            fh.write(f"3 {t[0]} {t[1]} {t[2]} {s} {i}\n")


# ---------------------------------------------------------------------------
# Camera path file: `intrinsics` block then one `frame` line per pose with
# the 12 row-major entries of the camera-to-world [R|t] matrix.

def save_path(path_obj: CameraPath, path) -> None:
    intr = path_obj.intrinsics
    with open(path, "w", encoding="ascii") as fh:
        fh.write("intrinsics\n")
        fh.write(f"fx {float(intr.fx)!r}\nfy {float(intr.fy)!r}\n")
        fh.write(f"cx {float(intr.cx)!r}\ncy {float(intr.cy)!r}\n")
        fh.write(f"width {intr.width}\nheight {intr.height}\n")
        for pose in path_obj.poses:
            rt = np.hstack([pose.rotation, pose.position[:, None]])
            fh.write("frame " + " ".join(repr(float(x)) for x in rt.ravel())
                     + "\n")


def load_path(path) -> CameraPath:
    fields: dict[str, float] = {}
    frames = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            tok = line.split()
            if not tok or tok[0] == "intrinsics":
                continue
            if tok[0] == "frame":
                vals = np.array([float(x) for x in tok[1:]])
                if vals.size != 12:
                    raise ValueError(f"{path}: frame line needs 12 numbers")
                rt = vals.reshape(3, 4)
                frames.append(CameraPose(rotation=rt[:, :3], position=rt[:, 3]))
            else:
                fields[tok[0]] = float(tok[1])
    required = ("fx", "fy", "cx", "cy", "width", "height")
    missing = [k for k in required if k not in fields]
    if missing:
        raise ValueError(f"{path}: missing intrinsics fields {missing}")
    intr = CameraIntrinsics(fx=fields["fx"], fy=fields["fy"],
                            cx=fields["cx"], cy=fields["cy"],
                            width=int(fields["width"]), height=int(fields["height"]))
    spacing = 1.0
    if len(frames) >= 2:
        spacing = float(np.linalg.norm(frames[1].position - frames[0].position))
    return CameraPath(poses=frames, intrinsics=intr, spacing=spacing)
