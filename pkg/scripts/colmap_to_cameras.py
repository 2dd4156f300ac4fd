#!/usr/bin/env python3
"""Convert a COLMAP sparse text model into the camera file used here.

COLMAP and this package share the world-to-camera convention
x_cam = R x + t, so conversion is an intrinsics lookup plus a
quaternion-to-matrix expansion; no geometry changes.

Input (the text export of a sparse model, `colmap model_converter
--output_type TXT` or the files COLMAP writes directly):

    cameras.txt   CAMERA_ID MODEL W H params...
                  supported models: PINHOLE (fx fy cx cy) and
                  SIMPLE_PINHOLE (f cx cy, fx = fy = f)
    images.txt    IMAGE_ID qw qx qy qz tx ty tz CAMERA_ID NAME
                  followed by one 2D-observation line per image (ignored)

Models with distortion parameters are rejected: run COLMAP's
image_undistorter first and convert the undistorted model, since the
camera line format below has no distortion slots.

Output: one camera per line, ordered by image NAME so that line order
matches the scene directory's sorted images/*.png,

    id W H fx fy cx cy r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3

with ids renumbered 0..n-1 in that order.
"""

import argparse
import os
import sys

import numpy as np

SUPPORTED = {"PINHOLE", "SIMPLE_PINHOLE"}


def read_colmap_cameras(path):
    """CAMERA_ID -> (W, H, fx, fy, cx, cy)."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            cam_id, model = parts[0], parts[1]
            w, h = int(parts[2]), int(parts[3])
            params = [float(p) for p in parts[4:]]
            if model not in SUPPORTED:
                raise SystemExit(
                    f"camera {cam_id}: model {model} has distortion or unknown "
                    f"parameters; undistort first (supported: {sorted(SUPPORTED)})")
            if model == "PINHOLE":
                fx, fy, cx, cy = params
            else:  # SIMPLE_PINHOLE
                fx, cx, cy = params
                fy = fx
            out[cam_id] = (w, h, fx, fy, cx, cy)
    return out


def read_colmap_images(path):
    """Yield (name, camera_id, qw qx qy qz, tx ty tz)."""
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        expect_points = False
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if expect_points:
                expect_points = False  # observation line, skip
                continue
            parts = line.split()
            if len(parts) < 10:
                raise SystemExit(f"images.txt: malformed image line: {line[:60]}")
            q = np.array([float(v) for v in parts[1:5]])
            t = np.array([float(v) for v in parts[5:8]])
            entries.append((parts[9], parts[8], q, t))
            expect_points = True
    return entries


def quat_to_matrix(q):
    """Rotation matrix for a (qw, qx, qy, qz) Hamilton quaternion."""
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("model_dir", help="directory holding cameras.txt and images.txt")
    ap.add_argument("out", help="camera file to write")
    args = ap.parse_args(argv)

    cams = read_colmap_cameras(os.path.join(args.model_dir, "cameras.txt"))
    images = read_colmap_images(os.path.join(args.model_dir, "images.txt"))
    images.sort(key=lambda e: e[0])

    lines = []
    for new_id, (name, cam_id, q, t) in enumerate(images):
        if cam_id not in cams:
            raise SystemExit(f"image {name}: unknown CAMERA_ID {cam_id}")
        w, h, fx, fy, cx, cy = cams[cam_id]
        R = quat_to_matrix(q)
        vals = [fx, fy, cx, cy, *R.reshape(-1), *t]
        lines.append(" ".join([str(new_id), str(w), str(h)]
                              + [repr(float(v)) for v in vals]))

    with open(args.out, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} cameras to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
