"""Pinhole cameras and the projection conventions used everywhere else.

Conventions (COLMAP-compatible):
  - world-to-camera map: x_cam = R @ x + t; camera center C = -R.T @ t
  - projection: u = fx * x/z + cx, v = fy * y/z + cy, image y points down
  - pixel (0.5, 0.5) is the center of the top-left pixel, so the center of
    pixel (row i, column j) is (j + 0.5, i + 0.5)

All geometry runs in float64; only the neural side of the pipeline is float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, SceneFormatError


@dataclass(frozen=True)
class Camera:
    K: np.ndarray  # (3,3) upper-triangular intrinsics, pixel units
    R: np.ndarray  # (3,3) world-to-camera rotation
    t: np.ndarray  # (3,) world-to-camera translation
    width: int
    height: int

    def __post_init__(self):
        K = np.ascontiguousarray(np.asarray(self.K, dtype=np.float64))
        R = np.ascontiguousarray(np.asarray(self.R, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.t, dtype=np.float64)).reshape(3)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if K.shape != (3, 3) or R.shape != (3, 3):
            raise GeometryError("camera K and R must be 3x3")
        if abs(K[2, 2] - 1.0) > 1e-9 or np.any(np.abs(K[[1, 2, 2], [0, 0, 1]]) > 1e-9):
            raise GeometryError("K must be upper-triangular with K[2,2] = 1")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise GeometryError("focal lengths must be positive")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise GeometryError("R is not orthonormal within 1e-6")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise GeometryError("det(R) must be 1 within 1e-6")
        if self.width < 1 or self.height < 1:
            raise GeometryError("image size must be positive")

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    # -- projection ---------------------------------------------------------

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project (N,3) world points. Returns (pixels (N,2), depths (N,)).

        Points at or behind the camera plane get non-finite pixels; callers
        mask on depth > 0.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cam = pts @ self.R.T + self.t
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.K[0, 0] * cam[:, 0] / z + self.K[0, 1] * cam[:, 1] / z + self.K[0, 2]
            v = self.K[1, 1] * cam[:, 1] / z + self.K[1, 2]
        pix = np.stack([u, v], axis=1)
        pix[z <= 0.0] = np.nan
        return pix, z

    def project_point(self, x) -> tuple[np.ndarray, float, bool]:
        """Project one world point. Returns (pixel, depth, in_front).

        in_front is False when depth <= 0 (the behind-camera flag); the pixel
        is NaN in that case.
        """
        pix, z = self.project_points(np.asarray(x, dtype=np.float64).reshape(1, 3))
        depth = float(z[0])
        return pix[0], depth, depth > 0.0

    def unproject_pixels(self, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
        """Invert projection: (N,2) pixel coords + (N,) camera-z depths -> (N,3) world."""
        pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        z = np.asarray(depths, dtype=np.float64).reshape(-1)
        fx, fy = self.K[0, 0], self.K[1, 1]
        cx, cy = self.K[0, 2], self.K[1, 2]
        skew = self.K[0, 1]
        y_cam = (pix[:, 1] - cy) / fy * z
        x_cam = ((pix[:, 0] - cx) * z - skew * y_cam) / fx
        cam = np.stack([x_cam, y_cam, z], axis=1)
        return (cam - self.t) @ self.R

    def pixel_rays(self) -> np.ndarray:
        """World-frame direction for every pixel-center ray, shape (H*W, 3).

        Directions are scaled so the camera-frame z component is 1: the ray
        parameter of x = center + t * dir is then the camera-z depth directly.
        """
        j, i = np.meshgrid(np.arange(self.width), np.arange(self.height))
        u = j.reshape(-1) + 0.5
        v = i.reshape(-1) + 0.5
        fx, fy = self.K[0, 0], self.K[1, 1]
        cx, cy = self.K[0, 2], self.K[1, 2]
        skew = self.K[0, 1]
        y = (v - cy) / fy
        x = ((u - cx) - skew * y) / fx
        dirs_cam = np.stack([x, y, np.ones_like(x)], axis=1)
        return dirs_cam @ self.R  # == R.T @ d per row


def view_direction(camera: Camera, x) -> np.ndarray:
    """Unit vector from the camera center toward the world point x."""
    d = np.asarray(x, dtype=np.float64).reshape(3) - camera.center
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise GeometryError("view_direction: point coincides with camera center")
    return d / n


def look_at_camera(position, target, up, vfov_deg: float, width: int, height: int) -> Camera:
    """Build a Camera from position/look-at/up and a vertical field of view.

    The camera frame is (x right, y down, z forward), right-handed. With the
    world up hint u: z = normalize(target - position), x = normalize(z x u),
    y = z x x. Degenerate when the view direction is parallel to up.
    """
    pos = np.asarray(position, dtype=np.float64).reshape(3)
    tgt = np.asarray(target, dtype=np.float64).reshape(3)
    u = np.asarray(up, dtype=np.float64).reshape(3)
    fwd = tgt - pos
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise GeometryError("look_at_camera: position equals target")
    fwd = fwd / n
    right = np.cross(fwd, u)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise GeometryError("look_at_camera: view direction parallel to up hint")
    right = right / rn
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=0)
    t = -R @ pos
    if not (1.0 < vfov_deg < 179.0):
        raise GeometryError("look_at_camera: vfov must be in (1, 179) degrees")
    fy = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
    K = np.array([[fy, 0.0, width / 2.0], [0.0, fy, height / 2.0], [0.0, 0.0, 1.0]])
    return Camera(K=K, R=R, t=t, width=width, height=height)


# -- camera text codec -------------------------------------------------------
# One camera per line: id W H fx fy cx cy r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3


def format_camera_line(cam_id: int, cam: Camera) -> str:
    vals = [
        cam.K[0, 0], cam.K[1, 1], cam.K[0, 2], cam.K[1, 2],
        *cam.R.reshape(-1), *cam.t,
    ]
    return " ".join([str(cam_id), str(cam.width), str(cam.height)] + [repr(float(v)) for v in vals])


def parse_camera_line(line: str, path="<string>", lineno: int | None = None) -> tuple[int, Camera]:
    parts = line.split()
    if len(parts) != 19:
        raise SceneFormatError(path, lineno, f"camera line needs 19 fields, got {len(parts)}")
    try:
        cam_id = int(parts[0])
        w, h = int(parts[1]), int(parts[2])
        nums = [float(p) for p in parts[3:]]
    except ValueError as e:
        raise SceneFormatError(path, lineno, f"bad number in camera line: {e}") from e
    fx, fy, cx, cy = nums[0:4]
    R = np.array(nums[4:13], dtype=np.float64).reshape(3, 3)
    t = np.array(nums[13:16], dtype=np.float64)
    K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    try:
        return cam_id, Camera(K=K, R=R, t=t, width=w, height=h)
    except GeometryError as e:
        raise SceneFormatError(path, lineno, str(e)) from e


def read_camera_file(path) -> list[tuple[int, Camera]]:
    cams = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cams.append(parse_camera_line(line, path=path, lineno=lineno))
    return cams


def write_camera_file(path, cameras: list[Camera]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, cam in enumerate(cameras):
            f.write(format_camera_line(i, cam) + "\n")
