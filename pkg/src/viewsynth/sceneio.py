"""Scene directories: manifest, cameras, mesh, and posed images.

Layout under one directory:

    manifest.txt            key=value: name, mesh, cameras, images, resolution,
                            optionally heldout_cameras + heldout_images
    cameras.txt             one camera per line (camera text codec)
    mesh.ply                triangle scaffold
    images/0000.png ...     one 8-bit PNG per camera, same order as cameras.txt
    heldout_cameras.txt     optional evaluation cameras
    heldout/0000.png ...    optional evaluation images

All paths in the manifest are relative to the manifest's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .camera import Camera, read_camera_file, write_camera_file
from .errors import SceneFormatError
from .imageio import read_image, write_image
from .mesh import TriangleMesh, filter_degenerate, load_mesh, save_ply


@dataclass(frozen=True)
class SceneManifest:
    name: str
    mesh_path: str
    camera_path: str
    image_dir: str
    width: int
    height: int
    heldout_camera_path: str | None = None
    heldout_image_dir: str | None = None


@dataclass(frozen=True)
class LoadedScene:
    name: str
    images: list  # list of (H,W,3) float32 in [0,1]
    cameras: list  # list[Camera]
    mesh: TriangleMesh
    heldout_images: list
    heldout_cameras: list


def _parse_manifest(path) -> SceneManifest:
    fields = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SceneFormatError(str(path), lineno, "expected key=value")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    for key in ("name", "mesh", "cameras", "images", "resolution"):
        if key not in fields:
            raise SceneFormatError(str(path), None, f"manifest missing key {key!r}")
    res = fields["resolution"].split("x")
    if len(res) != 2:
        raise SceneFormatError(str(path), None, "resolution must be WIDTHxHEIGHT")
    try:
        width, height = int(res[0]), int(res[1])
    except ValueError:
        raise SceneFormatError(str(path), None, "resolution must be WIDTHxHEIGHT") from None
    held_cam = fields.get("heldout_cameras")
    held_img = fields.get("heldout_images")
    if (held_cam is None) != (held_img is None):
        raise SceneFormatError(str(path), None,
                               "heldout_cameras and heldout_images must appear together")
    return SceneManifest(name=fields["name"], mesh_path=fields["mesh"],
                         camera_path=fields["cameras"], image_dir=fields["images"],
                         width=width, height=height,
                         heldout_camera_path=held_cam, heldout_image_dir=held_img)


def _load_posed_images(root, camera_path, image_dir, width, height):
    cam_file = os.path.join(root, camera_path)
    if not os.path.exists(cam_file):
        raise SceneFormatError(cam_file, None, "referenced camera file does not exist")
    cameras = [cam for _, cam in read_camera_file(cam_file)]
    img_root = os.path.join(root, image_dir)
    if not os.path.isdir(img_root):
        raise SceneFormatError(img_root, None, "referenced image directory does not exist")
    names = sorted(n for n in os.listdir(img_root) if n.endswith(".png"))
    if len(names) != len(cameras):
        raise SceneFormatError(img_root, None,
                               f"{len(names)} images vs {len(cameras)} cameras")
    images = []
    for name, cam in zip(names, cameras):
        img = read_image(os.path.join(img_root, name))
        if img.shape[:2] != (cam.height, cam.width) or img.shape[:2] != (height, width):
            raise SceneFormatError(os.path.join(img_root, name), None,
                                   f"image shape {img.shape[:2]} disagrees with camera/"
                                   f"manifest resolution {(height, width)}")
        images.append(img)
    return images, cameras


def load_scene(scene_dir) -> LoadedScene:
    """Load a scene directory (decodes images, parses cameras, filters mesh)."""
    manifest_path = os.path.join(scene_dir, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise SceneFormatError(manifest_path, None, "scene directory has no manifest.txt")
    man = _parse_manifest(manifest_path)
    mesh_file = os.path.join(scene_dir, man.mesh_path)
    if not os.path.exists(mesh_file):
        raise SceneFormatError(mesh_file, None, "referenced mesh file does not exist")
    mesh = filter_degenerate(load_mesh(mesh_file))
    images, cameras = _load_posed_images(scene_dir, man.camera_path, man.image_dir,
                                         man.width, man.height)
    heldout_images, heldout_cameras = [], []
    if man.heldout_camera_path is not None:
        heldout_images, heldout_cameras = _load_posed_images(
            scene_dir, man.heldout_camera_path, man.heldout_image_dir, man.width, man.height)
    return LoadedScene(name=man.name, images=images, cameras=cameras, mesh=mesh,
                       heldout_images=heldout_images, heldout_cameras=heldout_cameras)


def save_scene(scene_dir, name: str, images, cameras, mesh: TriangleMesh,
               heldout_images=(), heldout_cameras=()) -> None:
    """Write a complete scene directory (overwrites files in place)."""
    if len(images) != len(cameras):
        raise SceneFormatError(str(scene_dir), None,
                               f"{len(images)} images vs {len(cameras)} cameras")
    if len(heldout_images) != len(heldout_cameras):
        raise SceneFormatError(str(scene_dir), None, "held-out image/camera count mismatch")
    if not cameras:
        raise SceneFormatError(str(scene_dir), None, "a scene needs at least one camera")
    w, h = cameras[0].width, cameras[0].height
    os.makedirs(scene_dir, exist_ok=True)
    os.makedirs(os.path.join(scene_dir, "images"), exist_ok=True)
    save_ply(os.path.join(scene_dir, "mesh.ply"), mesh)
    write_camera_file(os.path.join(scene_dir, "cameras.txt"), list(cameras))
    for i, img in enumerate(images):
        write_image(os.path.join(scene_dir, "images", f"{i:04d}.png"), img)
    lines = [f"name={name}", "mesh=mesh.ply", "cameras=cameras.txt", "images=images",
             f"resolution={w}x{h}"]
    if heldout_cameras:
        os.makedirs(os.path.join(scene_dir, "heldout"), exist_ok=True)
        write_camera_file(os.path.join(scene_dir, "heldout_cameras.txt"), list(heldout_cameras))
        for i, img in enumerate(heldout_images):
            write_image(os.path.join(scene_dir, "heldout", f"{i:04d}.png"), img)
        lines += ["heldout_cameras=heldout_cameras.txt", "heldout_images=heldout"]
    with open(os.path.join(scene_dir, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
