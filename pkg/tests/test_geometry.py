"""Unprojection and visibility against a single-ray occlusion oracle.

The oracle projects the query point into the source with its own direct math
(no Camera methods), builds the ray through the nearest pixel center, finds
the nearest surface along it with the brute-force caster from test_raycast,
and applies the same relative depth test. This is the pixel-quantized ray the
depth buffer represents, so exact agreement is well-posed.
"""

from __future__ import annotations

import numpy as np
import pytest

from viewsynth.camera import Camera, look_at_camera
from viewsynth.geometry import (SurfacePointSet, unproject, visibility_masks,
                                visible_sources)
from viewsynth.mesh import TriangleMesh
from viewsynth.raycast import Bvh, DepthMap, render_depth

from test_raycast import oracle_cast_ray, random_scene, ring_camera

# ---------------------------------------------------------------- oracle


def oracle_visible(x, camera, mesh, tau=0.01):
    """Single-ray occlusion test from the source center toward x.

    Projects x with raw matrix math, quantizes to the pixel center the depth
    buffer would consult, casts that one ray against all triangles, and checks
    |z(x) - z_hit| <= tau * z(x).
    """
    x = np.asarray(x, dtype=float)
    cam_pt = camera.R @ x + camera.t
    z = cam_pt[2]
    if z <= 0:
        return False
    u = camera.K[0, 0] * cam_pt[0] / z + camera.K[0, 1] * cam_pt[1] / z + camera.K[0, 2]
    v = camera.K[1, 1] * cam_pt[1] / z + camera.K[1, 2]
    jj, ii = np.floor(u), np.floor(v)
    if not (0 <= jj < camera.width and 0 <= ii < camera.height):
        return False
    # ray through that pixel center, scaled to unit camera-space z
    y_cam = (ii + 0.5 - camera.K[1, 2]) / camera.K[1, 1]
    x_cam = ((jj + 0.5 - camera.K[0, 2]) - camera.K[0, 1] * y_cam) / camera.K[0, 0]
    direction = camera.R.T @ np.array([x_cam, y_cam, 1.0])
    center = -camera.R.T @ camera.t
    t_hit, _ = oracle_cast_ray(center, direction, mesh)
    return bool(abs(z - t_hit) <= tau * z)


def sample_on_mesh(rng, mesh, n):
    tri = rng.integers(0, mesh.n_triangles, size=n)
    a, b, c = mesh.triangle_corners()
    r1 = np.sqrt(rng.uniform(size=(n, 1)))
    r2 = rng.uniform(size=(n, 1))
    return (1 - r1) * a[tri] + r1 * (1 - r2) * b[tri] + r1 * r2 * c[tri]


# ---------------------------------------------------------------- unproject


class TestUnproject:
    def test_round_trip_through_random_scene(self):
        rng = np.random.default_rng(2)
        mesh = random_scene(rng, max_tris=30)
        cam = ring_camera(rng, size=24)
        dm = render_depth(mesh, cam)
        sp = unproject(dm, cam)
        assert sp.valid.shape == dm.values.shape
        np.testing.assert_array_equal(sp.valid, np.isfinite(dm.values))
        if sp.valid.any():
            i, j = np.nonzero(sp.valid)
            pix, z = cam.project_points(sp.points[i, j])
            np.testing.assert_allclose(pix[:, 0], j + 0.5, atol=1e-4)
            np.testing.assert_allclose(pix[:, 1], i + 0.5, atol=1e-4)
            np.testing.assert_allclose(z, dm.values[i, j], rtol=1e-6)

    def test_all_infinite_depth_gives_empty_mask(self):
        cam = ring_camera(np.random.default_rng(0))
        dm = DepthMap(values=np.full((cam.height, cam.width), np.inf), camera=cam)
        sp = unproject(dm, cam)
        assert not sp.valid.any()
        assert np.isnan(sp.points).all()


# ---------------------------------------------------------------- visibility


def _plane_scene():
    verts = np.array([[-2, -2, 0], [2, -2, 0], [2, 2, 0], [-2, 2, 0]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    return TriangleMesh(verts, tris)


def _sources_around(mesh, positions, size=32):
    cams = [look_at_camera(p, (0, 0, 0), (0, 1, 0), 60.0, size, size) for p in positions]
    depths = [render_depth(mesh, c) for c in cams]
    return cams, depths


class TestVisibleSources:
    def test_unoccluded_plane_seen_by_all_three(self):
        mesh = _plane_scene()
        cams, depths = _sources_around(mesh, [(0, 0.3, 3), (1, 0.5, 3), (-1, -0.4, 3)])
        rays = visible_sources((0.2, 0.1, 0.0), cams, depths)
        assert rays.source_indices.tolist() == [0, 1, 2]
        np.testing.assert_allclose(np.linalg.norm(rays.directions, axis=1), 1.0, atol=1e-6)

    def test_occluding_wall_excludes_one_source(self):
        # plane at z=0 plus a small wall in front of source 2's line of sight
        plane = _plane_scene()
        wall = np.array([[0.6, -0.5, 1.5], [1.4, -0.5, 1.5], [1.4, 0.8, 1.5], [0.6, 0.8, 1.5]])
        verts = np.vstack([plane.vertices, wall])
        tris = np.vstack([plane.triangles, np.array([[4, 5, 6], [4, 6, 7]])])
        mesh = TriangleMesh(verts, tris)
        x = (0.0, 0.0, 0.0)
        # source 2 at (2,0,3): the segment to x passes near (1, 0, 1.5), inside the wall
        cams, depths = _sources_around(mesh, [(0, 0.3, 3), (-1.5, 0.5, 3), (2.0, 0.0, 3)])
        assert oracle_visible(x, cams[2], mesh) is False  # confirm blockage independently
        rays = visible_sources(x, cams, depths)
        assert 2 not in rays.source_indices.tolist()
        assert 0 in rays.source_indices.tolist()

    def test_point_outside_every_frustum(self):
        mesh = _plane_scene()
        cams, depths = _sources_around(mesh, [(0, 0.3, 3), (1, 0.5, 3)])
        rays = visible_sources((50.0, 0.0, 0.0), cams, depths)
        assert rays.K == 0

    def test_direction_points_from_source_to_point(self):
        mesh = _plane_scene()
        cams, depths = _sources_around(mesh, [(0, 0, 3)])
        rays = visible_sources((0.0, 0.0, 0.0), cams, depths)
        assert rays.K == 1
        np.testing.assert_allclose(rays.directions[0], [0, 0, -1], atol=1e-9)

    def test_agreement_with_occlusion_oracle_on_random_scenes(self):
        rng = np.random.default_rng(21)
        checked = 0
        for _ in range(6):
            mesh = random_scene(rng, max_tris=25)
            cams = [ring_camera(rng, size=16) for _ in range(3)]
            depths = [render_depth(mesh, c) for c in cams]
            pts = sample_on_mesh(rng, mesh, 60)
            vis, _, _ = visibility_masks(pts, cams, depths)
            for p_i in range(len(pts)):
                for k in range(3):
                    expect = oracle_visible(pts[p_i], cams[k], mesh)
                    assert vis[p_i, k] == expect, (p_i, k)
                    checked += 1
        assert checked >= 1000


class TestVisibilityMasksShape:
    def test_batch_matches_single_point_calls(self):
        rng = np.random.default_rng(4)
        mesh = random_scene(rng, max_tris=20)
        cams = [ring_camera(rng) for _ in range(4)]
        depths = [render_depth(mesh, c) for c in cams]
        pts = sample_on_mesh(rng, mesh, 20)
        vis, _, _ = visibility_masks(pts, cams, depths)
        for i, p in enumerate(pts):
            rays = visible_sources(p, cams, depths)
            assert rays.source_indices.tolist() == np.nonzero(vis[i])[0].tolist()
