"""HTTP render service: pose queries in, PNG frames out.

Endpoints:
  GET  /health      -> 200 {"status": "ok"|"loading"}
  GET  /scene-info  -> scene metadata JSON (503 while the bundle loads)
  POST /render      -> body is a pose query JSON object, response image/png
  GET  /<asset>     -> static viewer assets when an asset directory is set

Pose query JSON schema (all lengths in world units, angles in degrees):
  {
    "position": [x, y, z],      camera center; must differ from target
    "target":   [x, y, z],      look-at point
    "up":       [x, y, z],      world up hint (optional, default +z)
    "fov_deg":  float,          vertical field of view, in (1, 179)
    "width":    int,            output width in pixels (optional)
    "height":   int             output height in pixels (optional)
  }
The camera frame is right-handed with x right, y down, z forward.

Scene-info JSON schema:
  {
    "name": str, "n_sources": int, "resolution": [width, height],
    "bounds": {"min": [x,y,z], "max": [x,y,z]},
    "orbit": {"center": [x,y,z], "radius": float, "elevation_deg": float},
    "fov_deg": float, "divisor": int
  }
Requested render sizes must be multiples of "divisor".

The bundle is immutable; renders are pure functions of the query, so
concurrent requests are answered bit-identically to serial execution.  A
semaphore bounds how many renders run at once.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .camera import look_at_camera
from .errors import ConfigError
from .imageio import encode_png
from .pipeline import SceneBundle, synthesize_view

MAX_RENDER_SIDE = 1024
RENDER_WORKERS = 4


@dataclass(frozen=True)
class PoseQuery:
    """A requested target view (position/look-at/up plus intrinsics)."""

    position: tuple
    target: tuple
    up: tuple = (0.0, 0.0, 1.0)
    fov_deg: float = 45.0
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        t = np.asarray(self.target, dtype=np.float64)
        u = np.asarray(self.up, dtype=np.float64)
        if p.shape != (3,) or t.shape != (3,) or u.shape != (3,):
            raise ConfigError("position, target, and up must be 3-vectors")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t)) and np.all(np.isfinite(u))):
            raise ConfigError("pose contains non-finite values")
        if float(np.linalg.norm(p - t)) < 1e-9:
            raise ConfigError("camera position must differ from the look-at target")
        if not (1.0 < float(self.fov_deg) < 179.0):
            raise ConfigError(f"fov_deg must lie in (1, 179), got {self.fov_deg}")
        for side, name in ((self.width, "width"), (self.height, "height")):
            if side is None:
                continue
            if not isinstance(side, int) or isinstance(side, bool) \
                    or not (0 < side <= MAX_RENDER_SIDE):
                raise ConfigError(f"{name} must be an integer in (0, {MAX_RENDER_SIDE}]")

    @staticmethod
    def from_json(obj) -> "PoseQuery":
        if not isinstance(obj, dict):
            raise ConfigError("pose query must be a JSON object")
        known = {"position", "target", "up", "fov_deg", "width", "height"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown pose fields {sorted(unknown)}")
        missing = {"position", "target"} - set(obj)
        if missing:
            raise ConfigError(f"pose query missing fields {sorted(missing)}")
        kwargs = {"position": tuple(obj["position"]), "target": tuple(obj["target"])}
        if "up" in obj:
            kwargs["up"] = tuple(obj["up"])
        if "fov_deg" in obj:
            kwargs["fov_deg"] = float(obj["fov_deg"])
        for side in ("width", "height"):
            if obj.get(side) is not None:
                if not isinstance(obj[side], int) or isinstance(obj[side], bool):
                    raise ConfigError(f"{side} must be an integer")
                kwargs[side] = obj[side]
        return PoseQuery(**kwargs)


def scene_info(bundle: SceneBundle) -> dict:
    cam0 = bundle.cameras[0]
    verts = bundle.mesh.vertices
    lo = verts.min(axis=0) if len(verts) else np.zeros(3)
    hi = verts.max(axis=0) if len(verts) else np.zeros(3)
    center = 0.5 * (lo + hi)
    centers = np.stack([c.center for c in bundle.cameras])
    offsets = centers - center
    radius = float(np.median(np.linalg.norm(offsets, axis=1)))
    elevation = float(np.degrees(np.median(
        np.arcsin(np.clip(offsets[:, 2] / np.maximum(
            np.linalg.norm(offsets, axis=1), 1e-12), -1.0, 1.0)))))
    fov = 2.0 * math.degrees(math.atan(cam0.height / (2.0 * cam0.K[1, 1])))
    return {
        "name": bundle.name,
        "n_sources": bundle.n_sources,
        "resolution": [cam0.width, cam0.height],
        "bounds": {"min": [float(v) for v in lo], "max": [float(v) for v in hi]},
        "orbit": {"center": [float(v) for v in center], "radius": radius,
                  "elevation_deg": elevation},
        "fov_deg": fov,
        "divisor": bundle.config.divisor,
    }


class RenderService:
    """Holds the (eventually loaded) bundle and answers queries."""

    def __init__(self, bundle: SceneBundle | None = None):
        self._bundle = bundle
        self._sem = threading.Semaphore(RENDER_WORKERS)

    @property
    def ready(self) -> bool:
        return self._bundle is not None

    def set_bundle(self, bundle: SceneBundle):
        self._bundle = bundle

    def scene_info(self) -> dict:
        return scene_info(self._bundle)

    def render_png(self, pose: PoseQuery) -> bytes:
        bundle = self._bundle
        cam0 = bundle.cameras[0]
        width = pose.width if pose.width is not None else cam0.width
        height = pose.height if pose.height is not None else cam0.height
        d = bundle.config.divisor
        if width % d or height % d:
            raise ConfigError(f"render size {width}x{height} must be a "
                              f"multiple of {d}")
        camera = look_at_camera(pose.position, pose.target, pose.up,
                                pose.fov_deg, width, height)
        with self._sem:
            result = synthesize_view(bundle, camera)
        return encode_png(result.image)


_ASSET_TYPES = {".html": "text/html; charset=utf-8",
                ".js": "text/javascript; charset=utf-8",
                ".css": "text/css; charset=utf-8",
                ".map": "application/json",
                ".png": "image/png", ".ico": "image/x-icon",
                ".svg": "image/svg+xml"}


def make_handler(service: RenderService, assets_dir=None):
    assets = Path(assets_dir).resolve() if assets_dir is not None else None

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _send(self, code: int, body: bytes, ctype: str):
            self.send_response(code)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_json(self, code: int, obj: dict):
            self._send(code, json.dumps(obj).encode("utf-8"), "application/json")

        def _asset(self, path: str):
            if assets is None:
                self._send_json(404, {"error": "no static assets configured"})
                return
            rel = path.lstrip("/") or "index.html"
            target = (assets / rel).resolve()
            if not target.is_relative_to(assets) or not target.is_file():
                self._send_json(404, {"error": f"no such asset {path!r}"})
                return
            ctype = _ASSET_TYPES.get(target.suffix, "application/octet-stream")
            self._send(200, target.read_bytes(), ctype)

        def do_GET(self):
            path = self.path.split("?", 1)[0]
            if path == "/health":
                status = "ok" if service.ready else "loading"
                self._send_json(200, {"status": status})
            elif path == "/scene-info":
                if not service.ready:
                    self._send_json(503, {"error": "scene still loading"})
                else:
                    self._send_json(200, service.scene_info())
            else:
                self._asset(path)

        def do_POST(self):
            if self.path.split("?", 1)[0] != "/render":
                self._send_json(404, {"error": "unknown endpoint"})
                return
            if not service.ready:
                self._send_json(503, {"error": "scene still loading"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                pose = PoseQuery.from_json(json.loads(raw.decode("utf-8")))
                png = service.render_png(pose)
            except ValueError as exc:
                # JSON decode errors, ConfigError, GeometryError all subclass it
                self._send_json(400, {"error": str(exc)})
                return
            self._send(200, png, "image/png")

    return Handler


def start_server(service: RenderService, port: int = 0, assets_dir=None
                 ) -> ThreadingHTTPServer:
    """Bind and return the server (port 0 picks a free one); caller runs it."""
    handler = make_handler(service, assets_dir=assets_dir)
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    return server


def serve_forever_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread
