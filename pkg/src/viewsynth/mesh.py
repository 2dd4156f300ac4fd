"""Triangle meshes and PLY/OBJ file IO (triangular faces only)."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import SceneFormatError


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V,3) float64, world units
    triangles: np.ndarray  # (T,3) int64 vertex indices
    colors: np.ndarray | None = None  # optional (V,3) float64 in [0,1]

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64)).reshape(-1, 3)
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64)).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise SceneFormatError("<mesh>", None, "triangle index out of range")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            z = np.zeros(3)
            return z, z
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def empty_mesh() -> TriangleMesh:
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def filter_degenerate(mesh: TriangleMesh) -> TriangleMesh:
    """Drop triangles whose area is exactly zero (repeated or collinear corners)."""
    if mesh.n_triangles == 0:
        return mesh
    a, b, c = mesh.triangle_corners()
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    keep = area2 > 0.0
    return TriangleMesh(mesh.vertices, mesh.triangles[keep], mesh.colors)


# -- PLY ----------------------------------------------------------------------

_PLY_SCALARS = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


def load_ply(path) -> TriangleMesh:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"ply"):
        raise SceneFormatError(path, 1, "not a PLY file")
    header_end = data.find(b"end_header")
    if header_end < 0:
        raise SceneFormatError(path, None, "PLY header has no end_header")
    nl = data.find(b"\n", header_end)
    header = data[:nl].decode("ascii", errors="replace").splitlines()
    body = data[nl + 1:]

    fmt = None
    elements = []  # (name, count, [(prop_name, type, list_count_type|None)])
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise SceneFormatError(path, lineno, "property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], parts[3], parts[2]))
            else:
                elements[-1][2].append((parts[2], parts[1], None))
    if fmt not in ("ascii", "binary_little_endian"):
        raise SceneFormatError(path, None, f"unsupported PLY format {fmt!r}")

    vertices, faces, colors = None, None, None
    if fmt == "ascii":
        tokens = body.decode("ascii", errors="replace").split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for pname, ptype, ltype in props:
                    if ltype is None:
                        row[pname] = float(tokens[pos]); pos += 1
                    else:
                        n = int(tokens[pos]); pos += 1
                        row[pname] = [float(tokens[pos + i]) for i in range(n)]
                        pos += n
                rows.append(row)
            vertices, faces, colors = _ply_collect(name, rows, vertices, faces, colors, path)
    else:
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for pname, ptype, ltype in props:
                    if ltype is None:
                        code, size = _PLY_SCALARS[ptype]
                        row[pname] = struct.unpack_from("<" + code, body, pos)[0]
                        pos += size
                    else:
                        ccode, csize = _PLY_SCALARS[ltype]
                        n = struct.unpack_from("<" + ccode, body, pos)[0]
                        pos += csize
                        icode, isize = _PLY_SCALARS[ptype]
                        row[pname] = list(struct.unpack_from("<" + str(n) + icode, body, pos))
                        pos += n * isize
                rows.append(row)
            vertices, faces, colors = _ply_collect(name, rows, vertices, faces, colors, path)

    if vertices is None:
        raise SceneFormatError(path, None, "PLY has no vertex element")
    tris = np.asarray(faces if faces is not None else [], dtype=np.int64).reshape(-1, 3)
    return filter_degenerate(TriangleMesh(vertices, tris, colors))


def _ply_collect(name, rows, vertices, faces, colors, path):
    if name == "vertex":
        vertices = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64)
        if rows and all(k in rows[0] for k in ("red", "green", "blue")):
            colors = np.array([[r["red"], r["green"], r["blue"]] for r in rows]) / 255.0
    elif name == "face":
        key = "vertex_indices" if (rows and "vertex_indices" in rows[0]) else "vertex_index"
        faces = []
        for r in rows:
            idx = [int(i) for i in r[key]]
            if len(idx) != 3:
                raise SceneFormatError(path, None, f"non-triangular face with {len(idx)} vertices")
            faces.append(idx)
    return vertices, faces, colors


def save_ply(path, mesh: TriangleMesh) -> None:
    """ASCII PLY writer; float formatting via repr for byte-stable output."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(mesh.vertices)}\n")
        f.write("property double x\nproperty double y\nproperty double z\n")
        f.write(f"element face {mesh.n_triangles}\n")
        f.write("property list uchar int vertex_indices\n")
        f.write("end_header\n")
        for v in mesh.vertices:
            f.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            f.write(f"3 {int(t[0])} {int(t[1])} {int(t[2])}\n")


# -- OBJ ----------------------------------------------------------------------


def load_obj(path) -> TriangleMesh:
    vertices, faces = [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise SceneFormatError(path, lineno, "vertex line needs 3 coordinates")
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                idx = []
                for p in parts[1:]:
                    idx.append(int(p.split("/")[0]))
                if len(idx) != 3:
                    raise SceneFormatError(path, lineno, f"non-triangular face with {len(idx)} vertices")
                # OBJ indices are 1-based; negatives count from the end
                faces.append([i - 1 if i > 0 else len(vertices) + i for i in idx])
    return filter_degenerate(
        TriangleMesh(np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
                     np.asarray(faces, dtype=np.int64).reshape(-1, 3)))


def load_mesh(path) -> TriangleMesh:
    p = str(path)
    if p.lower().endswith(".obj"):
        return load_obj(path)
    return load_ply(path)
