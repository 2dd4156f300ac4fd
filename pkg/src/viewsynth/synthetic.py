"""Procedural desk-scale fixture scenes: textured primitives on a ground
plane, photographed by a camera ring, shaded by the same ray caster the rest
of the package uses.

The shader is view-independent (texture albedo x diffuse light) unless a
specular lobe is requested, so a generated scene is exactly reconstructible
from its geometry plus textures: ideal ground truth for overfitting tests.
Everything is a pure function of the SyntheticSceneSpec (including its
seed), so the same scene description always writes byte-identical
directories.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .camera import Camera, look_at_camera
from .errors import ConfigError
from .mesh import TriangleMesh
from .raycast import Bvh
from .sceneio import save_scene

SKY = np.array([0.72, 0.78, 0.86])
LIGHT_DIR = np.array([0.35, 0.25, 0.9]) / np.linalg.norm([0.35, 0.25, 0.9])
AMBIENT = 0.4


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """What to build and where the cameras sit.

    primitives: tuple of (kind, texture) pairs, kind in {plane, box, sphere},
    texture in {checker, noise}.  Source cameras form a ring of n_sources
    around the scene centroid; held-out cameras interleave the ring at a
    different height.  specular > 0 adds a view-dependent highlight lobe.
    """

    name: str = "fixture"
    primitives: tuple = (("plane", "checker"), ("box", "checker"), ("sphere", "noise"))
    n_sources: int = 8
    n_heldout: int = 2
    ring_radius: float = 2.3
    ring_height: float = 1.5
    width: int = 96
    height: int = 96
    vfov_deg: float = 45.0
    seed: int = 0
    specular: float = 0.0

    def __post_init__(self):
        if self.n_sources < 2:
            raise ConfigError("a scene needs at least 2 source cameras")
        if self.n_heldout < 0 or self.width < 8 or self.height < 8:
            raise ConfigError("invalid synthetic scene extents")
        kinds = {"plane", "box", "sphere"}
        texes = {"checker", "noise"}
        for kind, tex in self.primitives:
            if kind not in kinds or tex not in texes:
                raise ConfigError(f"unknown primitive ({kind}, {tex})")


# -- geometry builders (vertices, triangles, per-vertex uv) ------------------


def _plane(side=2.6):
    h = side / 2.0
    v = np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])
    f = np.array([[0, 1, 2], [0, 2, 3]])
    uv = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return v, f, uv


def _box(center=(-0.38, -0.3, 0.3), side=0.6):
    cx, cy, cz = center
    h = side / 2.0
    # per-face vertices so each face gets its own uv square
    faces = []
    axes = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    verts, tris, uvs = [], [], []
    for ax, u_ax, v_ax in axes:
        for sign in (-1.0, 1.0):
            base = len(verts)
            for du, dv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = np.zeros(3)
                p[ax] = sign * h
                p[u_ax] = du * h
                p[v_ax] = dv * h
                verts.append(p + np.array([cx, cy, cz]))
                uvs.append([(du + 1) / 2.0, (dv + 1) / 2.0])
            if sign > 0:
                tris += [[base, base + 1, base + 2], [base, base + 2, base + 3]]
            else:
                tris += [[base, base + 2, base + 1], [base, base + 3, base + 2]]
    _ = faces
    return np.array(verts), np.array(tris), np.array(uvs)


def _sphere(center=(0.45, 0.32, 0.36), radius=0.36, n_lat=12, n_lon=18):
    cx, cy, cz = center
    verts, uvs = [], []
    for i in range(n_lat + 1):
        theta = np.pi * i / n_lat
        for j in range(n_lon + 1):
            phi = 2.0 * np.pi * j / n_lon
            verts.append([cx + radius * np.sin(theta) * np.cos(phi),
                          cy + radius * np.sin(theta) * np.sin(phi),
                          cz + radius * np.cos(theta)])
            uvs.append([j / n_lon, i / n_lat])
    tris = []
    stride = n_lon + 1
    for i in range(n_lat):
        for j in range(n_lon):
            a = i * stride + j
            b = a + 1
            c = a + stride
            d = c + 1
            if i > 0:
                tris.append([a, b, c])
            if i < n_lat - 1:
                tris.append([b, d, c])
    return np.array(verts), np.array(tris), np.array(uvs)


def _checker_texture(res=64, tiles=8, c0=(0.92, 0.35, 0.18), c1=(0.95, 0.91, 0.82)):
    i, j = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    cells = ((i * tiles // res) + (j * tiles // res)) % 2
    tex = np.where(cells[:, :, None] == 0, np.array(c0)[None, None], np.array(c1)[None, None])
    return tex


def _noise_texture(rng, res=24):
    tex = rng.uniform(0.15, 0.95, size=(res, res, 3))
    # one box-blur pass with wrap keeps detail but removes single-texel spikes
    acc = np.zeros_like(tex)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            acc += np.roll(np.roll(tex, di, axis=0), dj, axis=1)
    return acc / 9.0


_CHECKER_PALETTES = [
    ((0.92, 0.35, 0.18), (0.95, 0.91, 0.82)),
    ((0.20, 0.45, 0.80), (0.88, 0.88, 0.30)),
    ((0.25, 0.65, 0.35), (0.93, 0.93, 0.93)),
]


def build_scene_geometry(spec: SyntheticSceneSpec):
    """Assemble the primitive set into one mesh plus shading tables.

    Returns (mesh, face_uv (T,3,2), face_tex (T,) int, textures list).
    """
    builders = {"plane": _plane, "box": _box, "sphere": _sphere}
    rng = np.random.default_rng(spec.seed)
    verts, tris, uvs, face_tex, textures = [], [], [], [], []
    offset = 0
    checker_i = 0
    for kind, tex_kind in spec.primitives:
        v, f, uv = builders[kind]()
        verts.append(v)
        tris.append(f + offset)
        uvs.append(uv)
        if tex_kind == "checker":
            c0, c1 = _CHECKER_PALETTES[checker_i % len(_CHECKER_PALETTES)]
            checker_i += 1
            textures.append(_checker_texture(c0=c0, c1=c1))
        else:
            textures.append(_noise_texture(rng))
        face_tex.append(np.full(len(f), len(textures) - 1, dtype=np.int64))
        offset += len(v)
    vertices = np.concatenate(verts)
    triangles = np.concatenate(tris)
    uv = np.concatenate(uvs)
    mesh = TriangleMesh(vertices, triangles)
    face_uv = uv[triangles]  # (T,3,2)
    return mesh, face_uv, np.concatenate(face_tex), textures


def _sample_texture(tex: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear lookup of (M,2) uv in [0,1] into a (R,R,3) texture."""
    r = tex.shape[0]
    x = np.clip(uv[:, 0], 0.0, 1.0) * (r - 1)
    y = np.clip(uv[:, 1], 0.0, 1.0) * (r - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, r - 1)
    y1 = np.minimum(y0 + 1, r - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = tex[y0, x0] * (1 - fx) + tex[y0, x1] * fx
    bot = tex[y1, x0] * (1 - fx) + tex[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def shade_view(mesh: TriangleMesh, face_uv, face_tex, textures,
               camera: Camera, bvh: Bvh | None = None,
               specular: float = 0.0) -> np.ndarray:
    """Ray-cast one camera and shade hits: albedo x (ambient + diffuse),
    optionally plus a specular lobe; misses get the sky color."""
    if bvh is None:
        bvh = Bvh(mesh)
    dirs = camera.pixel_rays()
    t, tid = bvh.cast(camera.center, dirs)
    img = np.tile(SKY, (camera.height * camera.width, 1))
    hit = np.isfinite(t)
    if hit.any():
        hidx = np.nonzero(hit)[0]
        tri = tid[hidx]
        p = camera.center + t[hidx, None] * dirs[hidx]
        a = mesh.vertices[mesh.triangles[tri, 0]]
        b = mesh.vertices[mesh.triangles[tri, 1]]
        c = mesh.vertices[mesh.triangles[tri, 2]]
        v0, v1, v2 = b - a, c - a, p - a
        d00 = (v0 * v0).sum(1)
        d01 = (v0 * v1).sum(1)
        d11 = (v1 * v1).sum(1)
        d20 = (v2 * v0).sum(1)
        d21 = (v2 * v1).sum(1)
        denom = np.maximum(d00 * d11 - d01 * d01, 1e-18)
        w1 = (d11 * d20 - d01 * d21) / denom
        w2 = (d00 * d21 - d01 * d20) / denom
        w0 = 1.0 - w1 - w2
        uv = (w0[:, None] * face_uv[tri, 0] + w1[:, None] * face_uv[tri, 1]
              + w2[:, None] * face_uv[tri, 2])
        albedo = np.zeros((len(hidx), 3))
        for k, tex in enumerate(textures):
            sel = face_tex[tri] == k
            if sel.any():
                albedo[sel] = _sample_texture(tex, uv[sel])
        n = np.cross(v0, v1)
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-18)
        view = dirs[hidx] / np.linalg.norm(dirs[hidx], axis=1, keepdims=True)
        # two-sided shading: orient each normal against the viewing ray
        flip = (n * view).sum(1) > 0
        n[flip] = -n[flip]
        diffuse = np.maximum(0.0, n @ LIGHT_DIR)
        color = albedo * (AMBIENT + (1.0 - AMBIENT) * diffuse)[:, None]
        if specular > 0.0:
            refl = LIGHT_DIR - 2.0 * (n @ LIGHT_DIR)[:, None] * n
            gloss = np.maximum(0.0, (refl * view).sum(1)) ** 16
            color = color + specular * gloss[:, None]
        img[hidx] = color
    return np.clip(img.reshape(camera.height, camera.width, 3), 0.0, 1.0)


def ring_cameras(spec: SyntheticSceneSpec) -> tuple[list[Camera], list[Camera]]:
    """Source ring plus interleaved held-out cameras, all viewing the centroid."""
    target = np.array([0.0, 0.0, 0.28])
    up = np.array([0.0, 0.0, 1.0])
    sources = []
    for i in range(spec.n_sources):
        ang = 2.0 * np.pi * i / spec.n_sources
        pos = np.array([spec.ring_radius * np.cos(ang),
                        spec.ring_radius * np.sin(ang), spec.ring_height])
        sources.append(look_at_camera(pos, target, up, spec.vfov_deg, spec.width, spec.height))
    heldout = []
    for i in range(spec.n_heldout):
        ang = 2.0 * np.pi * (i + 0.5) / max(spec.n_heldout, 1)
        pos = np.array([spec.ring_radius * 1.02 * np.cos(ang),
                        spec.ring_radius * 1.02 * np.sin(ang), spec.ring_height * 1.15])
        heldout.append(look_at_camera(pos, target, up, spec.vfov_deg, spec.width, spec.height))
    return sources, heldout


def generate_synthetic_scene(spec: SyntheticSceneSpec, out_dir) -> None:
    """Build geometry, shade every camera, and write the scene directory."""
    mesh, face_uv, face_tex, textures = build_scene_geometry(spec)
    source_cams, heldout_cams = ring_cameras(spec)
    bvh = Bvh(mesh)
    images = [shade_view(mesh, face_uv, face_tex, textures, cam, bvh, spec.specular)
              for cam in source_cams]
    heldout = [shade_view(mesh, face_uv, face_tex, textures, cam, bvh, spec.specular)
               for cam in heldout_cams]
    os.makedirs(out_dir, exist_ok=True)
    save_scene(out_dir, spec.name, images, source_cams, mesh,
               heldout_images=heldout, heldout_cameras=heldout_cams)
