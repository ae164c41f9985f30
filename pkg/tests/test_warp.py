import numpy as np
import pytest

from meshsplat.bvh import build_bvh
from meshsplat.raster import render_control_maps
from meshsplat.scene import (CameraIntrinsics, CameraPose, make_straight_path,
                             unproject_depth)
from meshsplat.warp import backward_warp, incompleteness_fraction, outpaint_mask

from conftest import corridor_mesh, grid_wall_mesh, quad_mesh


def _pose_at(z, x=0.0, y=0.0):
    return CameraPose(rotation=np.eye(3), position=np.array([x, y, z]))


def _cell_texture(points, cell=2.0):
    """Piecewise-constant pseudo-random color per world cell."""
    cells = np.floor(points / cell).astype(np.int64)
    h = (cells[..., 0] * 73856093) ^ (cells[..., 1] * 19349663) \
        ^ (cells[..., 2] * 83492791)
    h = np.abs(h)
    return np.stack([(h % 251) / 251.0,
                     ((h // 251) % 241) / 241.0,
                     ((h // 65521) % 239) / 239.0], axis=-1)


def _textured_render(mesh, index, pose, intr, cell=2.0):
    maps = render_control_maps(mesh, index, pose, intr)
    pts = unproject_depth(maps.depth, pose, intr)
    img = np.where(maps.valid[..., None], _cell_texture(pts, cell), 0.0)
    return img, maps


def test_contraction_of_projected_offsets():
    # A point 1 m off-axis at depth 10 projects 50 px from center with
    # fx = 500; from 10 m further back it projects at 25 px.
    intr = CameraIntrinsics(fx=500.0, fy=500.0, cx=128.0, cy=72.0,
                            width=256, height=144)
    src = _pose_at(0.0)
    dst = _pose_at(-10.0)
    from meshsplat.scene import project_points
    u_src, _, z_src = project_points(np.array([[1.0, 0.0, 10.0]]), src, intr)
    u_dst, _, z_dst = project_points(np.array([[1.0, 0.0, 10.0]]), dst, intr)
    assert u_src[0] - intr.cx == pytest.approx(50.0)
    assert u_dst[0] - intr.cx == pytest.approx(25.0)

    mesh = grid_wall_mesh(z=10.0, x0=-10, x1=10, y0=-6, y1=6, cell=2.0)
    index = build_bvh(mesh)
    src_maps = render_control_maps(mesh, index, src, intr)
    dst_maps = render_control_maps(mesh, index, dst, intr)
    img = np.zeros(dst_maps.shape + (3,))
    res = backward_warp(img, src_maps, src, dst_maps, dst, intr)
    # every valid pixel looks up a source location twice as far from center
    iy, ix = np.nonzero(res.valid)
    dst_off = (ix + 0.5) - intr.cx
    src_off = res.source_px[iy, ix, 0] - intr.cx
    np.testing.assert_allclose(src_off, 2.0 * dst_off, atol=1e-6)


def test_identity_warp_is_exact():
    intr = CameraIntrinsics.from_fov(96, 64, 50.0)
    mesh = corridor_mesh(length=50, cell=2.0)
    index = build_bvh(mesh)
    pose = _pose_at(0.0, y=1.5)
    img, maps = _textured_render(mesh, index, pose, intr)
    res = backward_warp(img, maps, pose, maps, pose, intr)
    assert np.array_equal(res.valid, maps.valid)
    assert np.array_equal(res.image[res.valid], img[res.valid])


def test_warp_against_direct_render():
    intr = CameraIntrinsics(fx=500.0, fy=500.0, cx=64.0, cy=48.0,
                            width=128, height=96)
    mesh = grid_wall_mesh(z=10.0, x0=-8, x1=8, y0=-6, y1=6, cell=2.0)
    index = build_bvh(mesh)
    src = _pose_at(0.0)
    dst = _pose_at(-5.0)
    src_img, src_maps = _textured_render(mesh, index, src, intr, cell=2.0)
    dst_img, dst_maps = _textured_render(mesh, index, dst, intr, cell=2.0)
    res = backward_warp(src_img, src_maps, src, dst_maps, dst, intr)
    assert res.valid.sum() > 1000
    equal = np.all(res.image[res.valid] == dst_img[res.valid], axis=-1)
    assert equal.mean() >= 0.99


def test_occlusion_no_bleed_two_planes():
    # near occluder (semantic 8, red) in front of a far wall (semantic 2).
    intr = CameraIntrinsics.from_fov(128, 96, 60.0)
    near = quad_mesh([2.5, -2.5, 5.0], [-2.5, -2.5, 5.0],
                     [-2.5, 2.5, 5.0], [2.5, 2.5, 5.0],
                     semantic=8, instance=99)
    far = grid_wall_mesh(z=12.0, x0=-14, x1=14, y0=-10, y1=10, cell=2.0)
    verts = np.vstack([near.vertices, far.vertices])
    tris = np.vstack([near.triangles, far.triangles + len(near.vertices)])
    from meshsplat.scene import LabeledMesh
    mesh = LabeledMesh(vertices=verts, triangles=tris,
                       face_semantic=np.concatenate([near.face_semantic,
                                                     far.face_semantic]),
                       face_instance=np.concatenate([near.face_instance,
                                                     far.face_instance]))
    index = build_bvh(mesh)
    src = _pose_at(0.0)
    dst = _pose_at(0.0, x=3.0)
    src_maps = render_control_maps(mesh, index, src, intr)
    dst_maps = render_control_maps(mesh, index, dst, intr)
    red = np.array([1.0, 0.0, 0.0])
    green = np.array([0.0, 1.0, 0.0])
    src_img = np.where((src_maps.semantic == 8)[..., None], red, green)
    src_img = np.where(src_maps.valid[..., None], src_img, 0.0)
    res = backward_warp(src_img, src_maps, src, dst_maps, dst, intr)
    far_px = res.valid & (dst_maps.semantic == 2)
    assert far_px.sum() > 500
    sampled_red = np.all(res.image[far_px] == red, axis=-1)
    assert sampled_red.sum() == 0


def test_contraction_invariant_backward_motion():
    intr = CameraIntrinsics.from_fov(96, 72, 50.0)
    mesh = corridor_mesh(length=60, cell=2.0)
    index = build_bvh(mesh)
    pp = np.array([intr.cx, intr.cy])
    for back in (5.0, 10.0, 20.0):
        src = _pose_at(20.0, y=1.5)
        dst = _pose_at(20.0 - back, y=1.5)
        src_maps = render_control_maps(mesh, index, src, intr)
        dst_maps = render_control_maps(mesh, index, dst, intr)
        img = np.zeros(dst_maps.shape + (3,))
        res = backward_warp(img, src_maps, src, dst_maps, dst, intr)
        iy, ix = np.nonzero(res.valid)
        r_dst = np.hypot(ix + 0.5 - pp[0], iy + 0.5 - pp[1])
        r_src = np.hypot(res.source_px[iy, ix, 0] - pp[0],
                         res.source_px[iy, ix, 1] - pp[1])
        assert np.all(r_src >= r_dst - 1e-9)


def test_outpaint_mask_identity():
    intr = CameraIntrinsics.from_fov(96, 64, 50.0)
    mesh = corridor_mesh(length=50, cell=2.0)
    index = build_bvh(mesh)
    pose = _pose_at(0.0, y=1.5)
    img, maps = _textured_render(mesh, index, pose, intr)
    res = backward_warp(img, maps, pose, maps, pose, intr)
    mask = outpaint_mask(res, maps)
    assert np.array_equal(mask, ~maps.valid)


def test_outpaint_mask_fully_occluded():
    intr = CameraIntrinsics.from_fov(64, 48, 50.0)
    blocker = grid_wall_mesh(z=10.0, x0=-20, x1=20, y0=-15, y1=15, cell=5.0)
    far = grid_wall_mesh(z=40.0, x0=-40, x1=40, y0=-30, y1=30, cell=5.0)
    from meshsplat.scene import LabeledMesh
    mesh = LabeledMesh(
        vertices=np.vstack([blocker.vertices, far.vertices]),
        triangles=np.vstack([blocker.triangles,
                             far.triangles + len(blocker.vertices)]),
        face_semantic=np.concatenate([blocker.face_semantic,
                                      far.face_semantic]),
        face_instance=np.concatenate([blocker.face_instance,
                                      far.face_instance]))
    index = build_bvh(mesh)
    src = _pose_at(0.0)          # sees only the blocker
    dst = _pose_at(20.0)         # past the blocker, sees only the far wall
    src_maps = render_control_maps(mesh, index, src, intr)
    dst_maps = render_control_maps(mesh, index, dst, intr)
    img = np.ones(src_maps.shape + (3,))
    res = backward_warp(img, src_maps, src, dst_maps, dst, intr)
    mask = outpaint_mask(res, dst_maps)
    assert dst_maps.valid.all()
    assert mask.all()


def test_outpaint_mask_periphery_concentration():
    intr = CameraIntrinsics.from_fov(128, 72, 45.0)
    mesh = corridor_mesh(length=90, cell=2.0)
    index = build_bvh(mesh)
    src = _pose_at(20.0, y=1.5)
    dst = _pose_at(0.0, y=1.5)
    src_maps = render_control_maps(mesh, index, src, intr)
    dst_maps = render_control_maps(mesh, index, dst, intr)
    img = np.zeros(src_maps.shape + (3,))
    res = backward_warp(img, src_maps, src, dst_maps, dst, intr)
    mask = outpaint_mask(res, dst_maps)
    iy, ix = np.mgrid[0:intr.height, 0:intr.width]
    r = np.hypot(ix + 0.5 - intr.cx, iy + 0.5 - intr.cy)
    r_max = r.max()
    periphery = r > 0.75 * r_max
    center = r < 0.25 * r_max
    assert mask[periphery].mean() > mask[center].mean()


def test_incompleteness_fraction_basics():
    assert incompleteness_fraction(np.zeros((4, 4), dtype=bool)) == 0.0
    half = np.zeros((4, 4), dtype=bool)
    half[:2] = True
    assert incompleteness_fraction(half) == 0.5


def test_incompleteness_monotone_with_distance():
    intr = CameraIntrinsics.from_fov(128, 72, 45.0)
    mesh = corridor_mesh(length=90, cell=2.0)
    index = build_bvh(mesh)
    key = _pose_at(30.0, y=1.5)
    key_maps = render_control_maps(mesh, index, key, intr)
    img = np.zeros(key_maps.shape + (3,))
    fractions = []
    for z in range(29, 14, -1):
        dst = _pose_at(float(z), y=1.5)
        dst_maps = render_control_maps(mesh, index, dst, intr)
        res = backward_warp(img, key_maps, key, dst_maps, dst, intr)
        fractions.append(incompleteness_fraction(outpaint_mask(res, dst_maps)))
    diffs = np.diff(fractions)
    assert np.all(diffs >= -0.01)
    assert fractions[-1] > fractions[0]


def test_resolution_mismatch_rejected():
    intr = CameraIntrinsics.from_fov(64, 48, 50.0)
    intr2 = CameraIntrinsics.from_fov(32, 24, 50.0)
    mesh = corridor_mesh(length=40, cell=4.0)
    index = build_bvh(mesh)
    pose = _pose_at(0.0, y=1.5)
    maps_a = render_control_maps(mesh, index, pose, intr)
    maps_b = render_control_maps(mesh, index, pose, intr2)
    img = np.zeros(maps_a.shape + (3,))
    with pytest.raises(ValueError):
        backward_warp(img, maps_a, pose, maps_b, pose, intr)
