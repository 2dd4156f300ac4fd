"""HTTP render service: endpoint contracts, pose validation, static assets,
and render determinism under concurrency."""

import json
import threading
import urllib.error
import urllib.request
from io import BytesIO

import numpy as np
import pytest

from viewsynth.cli import build_bundle, main
from viewsynth.errors import ConfigError
from viewsynth.service import (PoseQuery, RenderService, scene_info,
                               serve_forever_in_thread, start_server)

GOOD_POSE = {"position": [2.3, 0.0, 1.5], "target": [0.0, 0.0, 0.35],
             "up": [0.0, 0.0, 1.0], "fov_deg": 45.0, "width": 64, "height": 64}


def http_get(url):
    try:
        with urllib.request.urlopen(url, timeout=30) as resp:
            return resp.status, resp.headers.get("Content-Type"), resp.read()
    except urllib.error.HTTPError as err:
        return err.code, err.headers.get("Content-Type"), err.read()


def http_post(url, body: bytes):
    req = urllib.request.Request(url, data=body, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=60) as resp:
            return resp.status, resp.headers.get("Content-Type"), resp.read()
    except urllib.error.HTTPError as err:
        return err.code, err.headers.get("Content-Type"), err.read()


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    p = tmp_path_factory.mktemp("svc") / "scene"
    assert main(["make-scene", str(p), "--sources", "4", "--heldout", "1",
                 "--seed", "7"]) == 0
    return p


@pytest.fixture(scope="module")
def bundle(scene_dir):
    b, _, _, _ = build_bundle(scene_dir, log=lambda m: None)
    return b


@pytest.fixture(scope="module")
def server_url(bundle, tmp_path_factory):
    assets = tmp_path_factory.mktemp("assets")
    (assets / "index.html").write_text("<html><body>viewer</body></html>")
    (assets / "app.js").write_text("console.log('viewer');")
    service = RenderService(bundle)
    server = start_server(service, port=0, assets_dir=assets)
    serve_forever_in_thread(server)
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestPoseQuery:
    def test_degenerate_position_rejected(self):
        with pytest.raises(ConfigError, match="differ"):
            PoseQuery(position=(1, 2, 3), target=(1, 2, 3))

    def test_fov_bounds(self):
        for fov in (0.0, 1.0, 179.0, 180.0, -5.0):
            with pytest.raises(ConfigError, match="fov"):
                PoseQuery(position=(0, 0, 0), target=(1, 0, 0), fov_deg=fov)

    def test_nonfinite_pose_rejected(self):
        with pytest.raises(ConfigError, match="finite"):
            PoseQuery(position=(np.nan, 0, 0), target=(1, 0, 0))

    def test_side_bounds(self):
        with pytest.raises(ConfigError, match="width"):
            PoseQuery(position=(0, 0, 0), target=(1, 0, 0), width=0)
        with pytest.raises(ConfigError, match="height"):
            PoseQuery(position=(0, 0, 0), target=(1, 0, 0), height=4096)

    def test_from_json_unknown_field(self):
        obj = dict(GOOD_POSE, roll=30.0)
        with pytest.raises(ConfigError, match="roll"):
            PoseQuery.from_json(obj)

    def test_from_json_missing_fields(self):
        with pytest.raises(ConfigError, match="target"):
            PoseQuery.from_json({"position": [0, 0, 0]})

    def test_from_json_rejects_non_object(self):
        with pytest.raises(ConfigError, match="object"):
            PoseQuery.from_json([1, 2, 3])

    def test_from_json_rejects_bool_sides(self):
        obj = dict(GOOD_POSE, width=True)
        with pytest.raises(ConfigError, match="integer"):
            PoseQuery.from_json(obj)

    def test_from_json_roundtrip(self):
        q = PoseQuery.from_json(dict(GOOD_POSE))
        assert q.position == (2.3, 0.0, 1.5)
        assert q.fov_deg == 45.0
        assert q.width == 64


class TestSceneInfo:
    def test_schema(self, bundle):
        info = scene_info(bundle)
        assert set(info) == {"name", "n_sources", "resolution", "bounds",
                             "orbit", "fov_deg", "divisor"}
        assert info["n_sources"] == 4
        assert info["resolution"] == [64, 64]
        lo, hi = info["bounds"]["min"], info["bounds"]["max"]
        assert all(a <= b for a, b in zip(lo, hi))
        assert info["orbit"]["radius"] > 0
        assert -89.0 < info["orbit"]["elevation_deg"] < 89.0
        assert info["divisor"] == bundle.config.divisor
        json.dumps(info)


class TestEndpoints:
    def test_health_ok(self, server_url):
        code, ctype, body = http_get(server_url + "/health")
        assert code == 200
        assert ctype.startswith("application/json")
        assert json.loads(body) == {"status": "ok"}

    def test_scene_info_served(self, server_url):
        code, _, body = http_get(server_url + "/scene-info")
        assert code == 200
        info = json.loads(body)
        assert info["n_sources"] == 4
        assert info["divisor"] == 8

    def test_render_returns_png(self, server_url):
        code, ctype, body = http_post(server_url + "/render",
                                      json.dumps(GOOD_POSE).encode())
        assert code == 200
        assert ctype == "image/png"
        assert body[:8] == b"\x89PNG\r\n\x1a\n"
        from PIL import Image
        with Image.open(BytesIO(body)) as im:
            assert im.size == (64, 64)

    def test_identical_bodies_identical_bytes(self, server_url):
        raw = json.dumps(GOOD_POSE).encode()
        bodies = [http_post(server_url + "/render", raw)[2] for _ in range(3)]
        assert bodies[0] == bodies[1] == bodies[2]

    def test_render_defaults_to_source_resolution(self, server_url):
        pose = {k: v for k, v in GOOD_POSE.items()
                if k not in ("width", "height")}
        code, _, body = http_post(server_url + "/render",
                                  json.dumps(pose).encode())
        assert code == 200
        from PIL import Image
        with Image.open(BytesIO(body)) as im:
            assert im.size == (64, 64)

    def test_unknown_get_path_404(self, server_url):
        code, _, _ = http_get(server_url + "/nope")
        assert code == 404

    def test_unknown_post_path_404(self, server_url):
        code, _, _ = http_post(server_url + "/health", b"{}")
        assert code == 404


class TestRenderValidation:
    def bad(self, server_url, obj) -> str:
        body = obj if isinstance(obj, bytes) else json.dumps(obj).encode()
        code, _, raw = http_post(server_url + "/render", body)
        assert code == 400
        return json.loads(raw)["error"]

    def test_zero_fov(self, server_url):
        assert "fov" in self.bad(server_url, dict(GOOD_POSE, fov_deg=0))

    def test_position_equals_target(self, server_url):
        assert "differ" in self.bad(
            server_url, dict(GOOD_POSE, target=GOOD_POSE["position"]))

    def test_malformed_json(self, server_url):
        self.bad(server_url, b"{not json")

    def test_unknown_field(self, server_url):
        assert "roll" in self.bad(server_url, dict(GOOD_POSE, roll=1))

    def test_indivisible_size(self, server_url):
        assert "multiple" in self.bad(server_url, dict(GOOD_POSE, width=60))

    def test_oversize_side(self, server_url):
        self.bad(server_url, dict(GOOD_POSE, width=2048))

    def test_bool_side(self, server_url):
        assert "integer" in self.bad(server_url, dict(GOOD_POSE, height=True))


class TestLoadingState:
    def test_503_until_bundle_set(self, bundle):
        service = RenderService()
        server = start_server(service, port=0)
        serve_forever_in_thread(server)
        url = f"http://127.0.0.1:{server.server_address[1]}"
        try:
            code, _, body = http_get(url + "/health")
            assert (code, json.loads(body)) == (200, {"status": "loading"})
            assert http_get(url + "/scene-info")[0] == 503
            assert http_post(url + "/render",
                             json.dumps(GOOD_POSE).encode())[0] == 503
            service.set_bundle(bundle)
            assert json.loads(http_get(url + "/health")[2]) == {"status": "ok"}
            assert http_get(url + "/scene-info")[0] == 200
        finally:
            server.shutdown()


class TestAssets:
    def test_index_served_at_root(self, server_url):
        code, ctype, body = http_get(server_url + "/")
        assert code == 200
        assert ctype.startswith("text/html")
        assert b"viewer" in body

    def test_js_content_type(self, server_url):
        code, ctype, _ = http_get(server_url + "/app.js")
        assert code == 200
        assert ctype.startswith("text/javascript")

    def test_missing_asset_404(self, server_url):
        assert http_get(server_url + "/missing.css")[0] == 404

    def test_traversal_blocked(self, server_url):
        import http.client
        host = server_url.split("//")[1]
        conn = http.client.HTTPConnection(host, timeout=30)
        try:
            # raw request line; urllib would collapse the dot segments
            conn.request("GET", "/../scene/manifest.txt")
            assert conn.getresponse().status == 404
        finally:
            conn.close()

    def test_no_assets_dir_404(self, bundle):
        service = RenderService(bundle)
        server = start_server(service, port=0)
        serve_forever_in_thread(server)
        try:
            assert http_get(
                f"http://127.0.0.1:{server.server_address[1]}/")[0] == 404
        finally:
            server.shutdown()


class TestConcurrency:
    def test_parallel_renders_match_serial(self, server_url):
        poses = []
        for k in range(3):
            a = 2 * np.pi * k / 3
            poses.append(json.dumps(dict(
                GOOD_POSE, position=[2.3 * np.cos(a), 2.3 * np.sin(a), 1.5]
            )).encode())
        serial = [http_post(server_url + "/render", p)[2] for p in poses]
        results = {}

        def worker(idx):
            got = []
            for rep in range(5):
                got.append(http_post(server_url + "/render",
                                     poses[(idx + rep) % 3])[2])
            results[idx] = got

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for idx, got in results.items():
            for rep, body in enumerate(got):
                assert body == serial[(idx + rep) % 3]
