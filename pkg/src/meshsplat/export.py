"""Field serialization: native npz state and viewer-convention splat PLY.

The PLY layout follows the de-facto splat-viewer convention: positions,
normals (the surfel's flat axis), DC spherical-harmonics colors
(c - 0.5) / 0.282095, logit opacity, log scales, and a (w, x, y, z)
quaternion, all float32 little-endian.
"""

from __future__ import annotations

import numpy as np

from .surfel import GaussianField, SurfelBatch, matrix_from_quat

_SH_C0 = 0.282095

_PLY_PROPS = ["x", "y", "z", "nx", "ny", "nz",
              "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
              "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]


def save_field(field: GaussianField, path) -> None:
    s = field.surfels
    np.savez(path, position=s.position, quat=s.quat, scale=s.scale,
             opacity=s.opacity, color=s.color, provenance=field.provenance)


def load_field(path) -> GaussianField:
    data = np.load(path)
    field = GaussianField()
    batch = SurfelBatch(data["position"], data["quat"], data["scale"],
                        data["opacity"], data["color"])
    field.surfels = batch
    field.provenance = np.asarray(data["provenance"], dtype=np.int32)
    return field


def export_splat_ply(field: GaussianField, path) -> None:
    if len(field) == 0:
        raise ValueError("refusing to export an empty field")
    s = field.surfels
    n = len(field)
    normals = matrix_from_quat(s.quat)[:, :, 2]
    o = np.clip(s.opacity, 1e-6, 1.0 - 1e-6)

    rec = np.empty((n, len(_PLY_PROPS)), dtype=np.float32)
    rec[:, 0:3] = s.position
    rec[:, 3:6] = normals
    rec[:, 6:9] = (s.color - 0.5) / _SH_C0
    rec[:, 9] = np.log(o / (1.0 - o))
    rec[:, 10:13] = np.log(s.scale)
    rec[:, 13:17] = s.quat

    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {p}" for p in _PLY_PROPS]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.astype("<f4").tobytes())


def import_splat_ply(path) -> SurfelBatch:
    with open(path, "rb") as fh:
        props = []
        n = None
        while True:
            line = fh.readline().decode("ascii").strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("property float"):
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        if n is None or props != _PLY_PROPS:
            raise ValueError(f"{path}: not a splat PLY in the expected layout")
        rec = np.frombuffer(fh.read(4 * n * len(props)),
                            dtype="<f4").reshape(n, len(props))
    rec = rec.astype(np.float64)
    color = rec[:, 6:9] * _SH_C0 + 0.5
    opacity = 1.0 / (1.0 + np.exp(-rec[:, 9]))
    scale = np.exp(rec[:, 10:13])
    quat = rec[:, 13:17]
    quat = quat / np.linalg.norm(quat, axis=1, keepdims=True)
    return SurfelBatch(rec[:, 0:3], quat, scale, opacity, color)
