"""Per-view control maps rendered from the mesh, plus the depth colormap.

Control maps are the conditioning signal handed to generator backends:
metric depth, world-space normals, semantic and instance ids, and a
validity raster.  Depth is camera-frame Z.  Back-facing triangles are
culled during ray casting so interior surfaces never leak into the maps.

Depth is additionally encoded as an inverse-depth colormap image so that
depth variation survives quantization both near the camera and far away.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .bvh import SpatialIndex
from .scene import CameraIntrinsics, CameraPose, pixel_ray_dirs


@dataclass
class ControlMaps:
    depth: np.ndarray     # (H, W) float64, meters; 0 where no geometry
    normal: np.ndarray    # (H, W, 3) float64, world space, unit at valid px
    semantic: np.ndarray  # (H, W) uint16
    instance: np.ndarray  # (H, W) uint32
    valid: np.ndarray = field(init=False)  # (H, W) bool, == depth > 0
    face: np.ndarray | None = None         # (H, W) int64 hit face id, -1 miss

    def __post_init__(self):
        self.valid = self.depth > 0

    @property
    def shape(self):
        return self.depth.shape


def render_control_maps(mesh, index: SpatialIndex, pose: CameraPose,
                        intrinsics: CameraIntrinsics) -> ControlMaps:
    """Closest-hit ray cast through every pixel center."""
    h, w = intrinsics.height, intrinsics.width
    dirs_cam = pixel_ray_dirs(intrinsics).reshape(-1, 3)
    dirs_world = dirs_cam @ pose.rotation.T
    origins = np.broadcast_to(pose.position, dirs_world.shape)
    hits = index.ray_cast(origins, dirs_world, cull_backfaces=True)

    ok = hits.face >= 0
    depth = np.where(ok, hits.t, 0.0).reshape(h, w)
    normal = np.zeros((h * w, 3))
    semantic = np.zeros(h * w, dtype=np.uint16)
    instance = np.zeros(h * w, dtype=np.uint32)
    faces = hits.face[ok]
    normal[ok] = mesh.face_normal[faces]
    semantic[ok] = mesh.face_semantic[faces]
    instance[ok] = mesh.face_instance[faces]
    return ControlMaps(depth=depth,
                       normal=normal.reshape(h, w, 3),
                       semantic=semantic.reshape(h, w),
                       instance=instance.reshape(h, w),
                       face=hits.face.reshape(h, w))


# ---------------------------------------------------------------------------
# Depth colormap codec: inverse depth, 256 bins, turbo-style LUT.

def _turbo_lut() -> np.ndarray:
    """256 distinct RGB triples along a turbo-like polynomial ramp.

    A deterministic fix-up bumps the blue channel on the rare quantization
    collision so the encoding stays injective; entry (0,0,0) is reserved
    for invalid pixels.
    """
    x = np.linspace(0.0, 1.0, 256)
    r = np.polyval([59.28637943, -152.94239396, 132.13108234,
                    -42.66032258, 4.61539260, 0.13572138], x)
    g = np.polyval([2.82956604, 4.27729857, -14.18503333,
                    4.84296658, 2.19418839, 0.09140261], x)
    b = np.polyval([27.34824973, -89.90310912, 110.36276771,
                    -60.58204836, 12.64194608, 0.10667330], x)
    lut = np.clip(np.stack([r, g, b], axis=1), 0.0, 1.0)
    lut = np.round(lut * 255).astype(np.uint8)
    seen = {(0, 0, 0)}
    for i in range(256):
        key = tuple(int(v) for v in lut[i])
        while key in seen:
            lut[i, 2] = (int(lut[i, 2]) + 1) % 256
            key = tuple(int(v) for v in lut[i])
        seen.add(key)
    return lut


@dataclass(frozen=True)
class DepthColormapCodec:
    near: float
    far: float
    lut: np.ndarray = field(default_factory=_turbo_lut)

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError("codec needs 0 < near < far")
        if len({tuple(int(v) for v in row) for row in self.lut}) != 256:
            raise ValueError("colormap entries must be distinct")

    def _inv_range(self):
        inv_near = 1.0 / self.near
        inv_far = 1.0 / self.far
        return inv_far, inv_near - inv_far

    def bin_of(self, depth: np.ndarray) -> np.ndarray:
        """Quantized inverse-depth bin; 255 at `near`, 0 at `far`."""
        d = np.clip(depth, self.near, self.far)
        inv_far, span = self._inv_range()
        norm = (1.0 / d - inv_far) / span
        return np.round(norm * 255).astype(np.int64)

    def depth_of_bin(self, bins: np.ndarray) -> np.ndarray:
        inv_far, span = self._inv_range()
        inv = inv_far + (np.asarray(bins, dtype=np.float64) / 255.0) * span
        return 1.0 / inv


def encode_depth_colormap(depth: np.ndarray, codec: DepthColormapCodec) -> np.ndarray:
    """RGB (H, W, 3) uint8 image; invalid (depth <= 0) pixels are black."""
    out = np.zeros(depth.shape + (3,), dtype=np.uint8)
    valid = depth > 0
    bins = codec.bin_of(depth[valid])
    out[valid] = codec.lut[bins]
    return out


class DepthDecodeError(ValueError):
    pass


def decode_depth_colormap(image: np.ndarray, codec: DepthColormapCodec) -> np.ndarray:
    """Invert the colormap to bin-center depth; black decodes to 0 (invalid)."""
    table = {tuple(int(v) for v in codec.lut[i]): i for i in range(256)}
    flat = image.reshape(-1, 3)
    depth = np.zeros(len(flat))
    bin_depth = codec.depth_of_bin(np.arange(256))
    for i, px in enumerate(flat):
        key = (int(px[0]), int(px[1]), int(px[2]))
        if key == (0, 0, 0):
            continue
        if key not in table:
            raise DepthDecodeError(f"pixel {key} is not a colormap entry")
        depth[i] = bin_depth[table[key]]
    return depth.reshape(image.shape[:2])


# ---------------------------------------------------------------------------
# Binary raster serialization: 16-byte header (magic, width, height, pad).

_MAGIC = {"f32": b"MSF0", "u16": b"MSU2", "u32": b"MSU4"}
_DTYPE = {"f32": np.float32, "u16": np.uint16, "u32": np.uint32}


def save_raster(array: np.ndarray, path, kind: str) -> None:
    data = np.ascontiguousarray(array, dtype=_DTYPE[kind])
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _MAGIC[kind], w, h, 0))
        fh.write(data.tobytes())


def load_raster(path):
    with open(path, "rb") as fh:
        magic, w, h, _ = struct.unpack("<4sIII", fh.read(16))
        kinds = {v: k for k, v in _MAGIC.items()}
        if magic not in kinds:
            raise ValueError(f"{path}: unknown raster magic {magic!r}")
        kind = kinds[magic]
        data = np.frombuffer(fh.read(), dtype=_DTYPE[kind]).reshape(h, w)
    return data, kind


def save_png(image: np.ndarray, path) -> None:
    """PNG writer: float [0,1] or uint8 images; bool masks become 1-bit."""
    from PIL import Image

    arr = np.asarray(image)
    if arr.dtype == np.bool_:
        img = Image.fromarray(arr.astype(np.uint8) * 255).convert("1")
        img.save(path)
        return
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png(path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path))
