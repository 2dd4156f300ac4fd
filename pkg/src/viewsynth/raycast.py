"""Ray casting against triangle meshes: Moller-Trumbore plus a median-split BVH.

Rays from one camera share an origin and use directions scaled so the ray
parameter equals camera-z depth (see Camera.pixel_rays). Back-facing triangles
are valid hits; hits with depth < NEAR_CLIP are discarded. Ties in depth
between two triangles are broken toward the lower triangle index so traversal
order can never change the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .mesh import TriangleMesh

MT_EPS = 1e-9  # Moller-Trumbore determinant cutoff
NEAR_CLIP = 1e-6
LEAF_SIZE = 4

INF = np.inf


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray  # (H,W) float64; +inf where the pixel ray missed
    camera: Camera

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)


def intersect_batch(origin: np.ndarray, dirs: np.ndarray,
                    a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Moller-Trumbore for every (ray, triangle) pair.

    origin (3,), dirs (N,3), triangle corners a/b/c (T,3).
    Returns t values (N,T) with +inf where there is no valid hit.
    """
    e1 = b - a  # (T,3)
    e2 = c - a
    p = np.cross(dirs[:, None, :], e2[None, :, :])  # (N,T,3)
    det = np.einsum("tj,ntj->nt", e1, p)
    s = origin[None, :] - a  # (T,3) shared origin, so s is per-triangle only
    q = np.cross(s, e1)  # (T,3)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        u = np.einsum("tj,ntj->nt", s, p) * inv
        v = (dirs @ q.T) * inv
        t = np.einsum("tj,tj->t", e2, q)[None, :] * inv
    ok = (np.abs(det) > MT_EPS) & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= NEAR_CLIP)
    return np.where(ok, t, INF)


def _intersect_leaf(origin, dirs, a, b, c):
    # same math as intersect_batch, written for a small triangle subset
    return intersect_batch(origin, dirs, a, b, c)


class Bvh:
    """Median-split axis-aligned BVH over triangle centroids."""

    __slots__ = ("mesh", "box_min", "box_max", "left", "right",
                 "start", "count", "order", "_a", "_b", "_c")

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        n = mesh.n_triangles
        self._a, self._b, self._c = mesh.triangle_corners()
        self.order = np.arange(n, dtype=np.int64)
        if n == 0:
            self.box_min = np.zeros((1, 3)); self.box_max = np.zeros((1, 3))
            self.left = np.array([-1]); self.right = np.array([-1])
            self.start = np.array([0]); self.count = np.array([0])
            return
        tri_min = np.minimum(np.minimum(self._a, self._b), self._c)
        tri_max = np.maximum(np.maximum(self._a, self._b), self._c)
        centroids = (tri_min + tri_max) * 0.5

        box_min, box_max, left, right, start, count = [], [], [], [], [], []

        def build(ids: np.ndarray) -> int:
            node = len(box_min)
            box_min.append(tri_min[ids].min(axis=0))
            box_max.append(tri_max[ids].max(axis=0))
            left.append(-1); right.append(-1); start.append(0); count.append(0)
            if len(ids) <= LEAF_SIZE:
                start[node] = len(leaf_order)
                count[node] = len(ids)
                leaf_order.extend(ids.tolist())
                return node
            cen = centroids[ids]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            mid = len(ids) // 2
            # argsort (stable) rather than median-of-values: robust to duplicates
            perm = np.argsort(cen[:, axis], kind="stable")
            l = build(ids[perm[:mid]])
            r = build(ids[perm[mid:]])
            left[node] = l; right[node] = r
            return node

        leaf_order: list[int] = []
        import sys
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 10000))
        try:
            build(np.arange(n, dtype=np.int64))
        finally:
            sys.setrecursionlimit(old)
        self.order = np.asarray(leaf_order, dtype=np.int64)
        self.box_min = np.asarray(box_min)
        self.box_max = np.asarray(box_max)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)

    def cast(self, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest hit for each ray. Returns (t (N,), tri_index (N,), -1 on miss)."""
        n_rays = len(dirs)
        best_t = np.full(n_rays, INF)
        best_id = np.full(n_rays, -1, dtype=np.int64)
        if self.mesh.n_triangles == 0:
            return best_t, best_id
        origin = np.asarray(origin, dtype=np.float64).reshape(3)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_dir = 1.0 / dirs

        def visit(node: int, ids: np.ndarray):
            # slab test against this node's box, pruned by current best;
            # fmin/fmax drop the NaN an on-boundary parallel ray produces (0 * inf)
            with np.errstate(invalid="ignore"):
                t0 = (self.box_min[node][None, :] - origin[None, :]) * inv_dir[ids]
                t1 = (self.box_max[node][None, :] - origin[None, :]) * inv_dir[ids]
            lo = np.fmax.reduce(np.fmin(t0, t1), axis=1)
            hi = np.fmin.reduce(np.fmax(t0, t1), axis=1)
            alive = (hi >= np.maximum(lo, 0.0)) & (lo <= best_t[ids])
            ids = ids[alive]
            if len(ids) == 0:
                return
            if self.count[node] > 0:
                tri = self.order[self.start[node]: self.start[node] + self.count[node]]
                t = _intersect_leaf(origin, dirs[ids], self._a[tri], self._b[tri], self._c[tri])
                for col in range(t.shape[1]):
                    tc = t[:, col]
                    tid = tri[col]
                    better = (tc < best_t[ids]) | ((tc == best_t[ids]) & (tid < best_id[ids]))
                    upd = ids[better]
                    best_t[upd] = tc[better]
                    best_id[upd] = tid
            else:
                visit(self.left[node], ids)
                visit(self.right[node], ids)

        import sys
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 10000))
        try:
            visit(0, np.arange(n_rays, dtype=np.int64))
        finally:
            sys.setrecursionlimit(old)
        return best_t, best_id


def cast_camera_rays(bvh: Bvh, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Cast all pixel-center rays of a camera. Returns (depth (H,W), tri (H,W))."""
    dirs = camera.pixel_rays()
    t, tid = bvh.cast(camera.center, dirs)
    return (t.reshape(camera.height, camera.width),
            tid.reshape(camera.height, camera.width))


def render_depth(mesh: TriangleMesh, camera: Camera, bvh: Bvh | None = None) -> DepthMap:
    """Depth of the nearest surface along each pixel-center ray; +inf on miss."""
    if bvh is None:
        bvh = Bvh(mesh)
    depth, _ = cast_camera_rays(bvh, camera)
    return DepthMap(values=depth, camera=camera)
