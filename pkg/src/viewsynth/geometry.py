"""Surface points, source-visibility queries, and per-point ray sets.

Visibility of a world point x in source k is a depth-buffer test: project x
into source k; require depth > 0, the projection inside the image, and
|z_k(x) - D_k(pixel)| <= tau_vis * z_k(x) where D_k is the source depth buffer
sampled at the nearest pixel (floor of the continuous coordinates). A +inf
buffer value can never pass the test, so points the source ray missed are
excluded for free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .raycast import DepthMap

TAU_VIS = 0.01


@dataclass(frozen=True)
class SurfacePointSet:
    points: np.ndarray  # (H,W,3) float64; NaN rows where invalid
    valid: np.ndarray   # (H,W) bool

    @property
    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]


@dataclass
class RayFeatureSet:
    """Inputs to aggregation at one surface point.

    directions point from each source camera center toward the point; u points
    from the target camera center toward the point. features is None in the
    skeleton produced by visibility and is filled by the pipeline.
    """

    source_indices: np.ndarray  # (K,) int64
    directions: np.ndarray      # (K,3) float64, unit
    u: np.ndarray               # (3,) float64, unit
    features: object = None     # Tensor (K, C) once filled

    @property
    def K(self) -> int:
        return len(self.source_indices)


def unproject(depth: DepthMap, camera: Camera) -> SurfacePointSet:
    """Lift every finite-depth pixel center to a world point."""
    h, w = depth.values.shape
    valid = np.isfinite(depth.values)
    points = np.full((h, w, 3), np.nan)
    if valid.any():
        i, j = np.nonzero(valid)
        pix = np.stack([j + 0.5, i + 0.5], axis=1)
        points[i, j] = camera.unproject_pixels(pix, depth.values[valid])
    return SurfacePointSet(points=points, valid=valid)


def visibility_masks(points: np.ndarray, cameras: list[Camera],
                     depths: list[DepthMap], tau: float = TAU_VIS
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Depth-buffer visibility of (P,3) points in every source.

    Returns (visible (P,N) bool, pixels (P,N,2) float64, z (P,N) float64).
    Pixel coordinates are meaningful only where visible.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n_pts, n_src = len(pts), len(cameras)
    vis = np.zeros((n_pts, n_src), dtype=bool)
    pix_all = np.zeros((n_pts, n_src, 2))
    z_all = np.zeros((n_pts, n_src))
    for k, (cam, dm) in enumerate(zip(cameras, depths)):
        pix, z = cam.project_points(pts)
        front = z > 0.0
        with np.errstate(invalid="ignore"):
            jj = np.where(front, np.floor(pix[:, 0]), -1).astype(np.int64)
            ii = np.where(front, np.floor(pix[:, 1]), -1).astype(np.int64)
        inside = front & (jj >= 0) & (jj < cam.width) & (ii >= 0) & (ii < cam.height)
        ok = inside.copy()
        if ok.any():
            d = dm.values[ii[inside], jj[inside]]
            ok[inside] = np.abs(z[inside] - d) <= tau * z[inside]
        vis[:, k] = ok
        pix_all[:, k] = np.where(front[:, None], pix, 0.0)
        z_all[:, k] = z
    return vis, pix_all, z_all


def visible_sources(x, cameras: list[Camera], depths: list[DepthMap],
                    u: np.ndarray | None = None, tau: float = TAU_VIS) -> RayFeatureSet:
    """RayFeatureSet skeleton for one point: indices + directions, no features."""
    pt = np.asarray(x, dtype=np.float64).reshape(1, 3)
    vis, _, _ = visibility_masks(pt, cameras, depths, tau)
    idx = np.nonzero(vis[0])[0].astype(np.int64)
    dirs = np.zeros((len(idx), 3))
    for row, k in enumerate(idx):
        d = pt[0] - cameras[k].center
        dirs[row] = d / np.linalg.norm(d)
    if u is None:
        u = np.zeros(3)
    return RayFeatureSet(source_indices=idx, directions=dirs,
                         u=np.asarray(u, dtype=np.float64).reshape(3))
