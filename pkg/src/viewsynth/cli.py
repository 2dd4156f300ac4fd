"""Command-line entry points: setup, render, render-path, train, finetune,
eval, serve, and make-scene.

Exit codes: 0 success, 2 usage/argument error, 1 runtime error.

Poses on the command line are 6 or 9 comma-separated floats:
position x,y,z, look-at target x,y,z, and optionally an up hint x,y,z
(default 0,0,1).  The camera frame is right-handed, x right, y down,
z forward.

`setup` writes a feature cache under <scene_dir>/cache/<key>/ where the key
hashes the checkpoint bytes and model configuration; renders and the service
reuse it instead of re-encoding when it is fresh (source images unchanged
since the cache was written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import threading
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .pipeline import (ModelConfig, SceneBundle, apply_config_overrides,
                       config_fingerprint, images_from_store, init_params,
                       load_model, render_path, save_model, setup_scene,
                       synthesize_view)
from .sceneio import load_scene

DEFAULT_SEED = 0


def _parse_pose(text: str):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) not in (6, 9):
        raise ConfigError(f"pose needs 6 or 9 comma-separated floats, got {len(parts)}")
    vals = [float(p) for p in parts]
    position, target = vals[0:3], vals[3:6]
    up = vals[6:9] if len(vals) == 9 else [0.0, 0.0, 1.0]
    return position, target, up


def _load_params(ckpt, overrides=None):
    """Checkpoint -> (store, config); no checkpoint -> seeded fresh model."""
    if ckpt is not None:
        store, config = load_model(ckpt)
        if overrides:
            raise ConfigError("model overrides require training a new model, "
                              "not a loaded checkpoint")
        return store, config
    config = ModelConfig()
    if overrides:
        config = apply_config_overrides(config, overrides)
    return init_params(config, np.random.default_rng(DEFAULT_SEED)), config


def _cache_key(ckpt, config: ModelConfig) -> str:
    h = hashlib.sha256()
    if ckpt is not None:
        h.update(Path(ckpt).read_bytes())
    else:
        h.update(b"fresh-seed-%d" % DEFAULT_SEED)
    h.update(config_fingerprint(config).encode())
    return h.hexdigest()[:16]


def _scene_mtime(scene_dir: Path) -> int:
    stamps = [os.stat(p).st_mtime_ns for p in sorted(scene_dir.rglob("*"))
              if p.is_file() and "cache" not in p.parts]
    return max(stamps) if stamps else 0


def _write_cache(cache_dir: Path, bundle: SceneBundle, key: str, stamp: int):
    cache_dir.mkdir(parents=True, exist_ok=True)
    for i, feat in enumerate(bundle.features):
        np.save(cache_dir / f"features_{i:04d}.npy", feat.data, allow_pickle=False)
    for i, dm in enumerate(bundle.depths):
        np.save(cache_dir / f"depth_{i:04d}.npy", dm.values, allow_pickle=False)
    meta = {"key": key, "scene_mtime_ns": stamp, "n_sources": bundle.n_sources}
    (cache_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True))


def _try_load_cache(cache_dir: Path, key: str, stamp: int, n_sources: int):
    """(features, depth values) lists, or None when stale/absent."""
    meta_path = cache_dir / "meta.json"
    if not meta_path.is_file():
        return None
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError:
        return None
    if meta.get("key") != key or meta.get("scene_mtime_ns") != stamp \
            or meta.get("n_sources") != n_sources:
        return None
    feats, depths = [], []
    for i in range(n_sources):
        fp = cache_dir / f"features_{i:04d}.npy"
        dp = cache_dir / f"depth_{i:04d}.npy"
        if not fp.is_file() or not dp.is_file():
            return None
        feats.append(np.load(fp, allow_pickle=False))
        depths.append(np.load(dp, allow_pickle=False))
    return feats, depths


def build_bundle(scene_dir, ckpt=None, use_cache: bool = True,
                 write_cache: bool = False, log=print):
    """Load scene + params and set up the bundle, via the cache when fresh."""
    from . import autodiff as ad
    from .raycast import Bvh, DepthMap

    scene_dir = Path(scene_dir)
    loaded = load_scene(scene_dir)
    store, config = _load_params(ckpt)
    images = images_from_store(store, loaded.images)
    key = _cache_key(ckpt, config)
    cache_dir = scene_dir / "cache" / key
    stamp = _scene_mtime(scene_dir)

    cached = _try_load_cache(cache_dir, key, stamp, len(images)) if use_cache else None
    if cached is not None:
        feats_raw, depth_vals = cached
        mesh = loaded.mesh
        bvh = Bvh(mesh)
        depths = [DepthMap(values=v, camera=cam)
                  for v, cam in zip(depth_vals, loaded.cameras)]
        features = [ad.constant(f) for f in feats_raw]
        bundle = SceneBundle(mesh=mesh, cameras=list(loaded.cameras),
                             images=[np.asarray(im, np.float32) for im in images],
                             features=features, depths=depths, store=store,
                             config=config, bvh=bvh, name=loaded.name)
        log(f"cache reused: {cache_dir}")
        return bundle, loaded, cache_dir, False
    bundle = setup_scene(images, loaded.cameras, loaded.mesh, store, config,
                         name=loaded.name)
    if write_cache:
        _write_cache(cache_dir, bundle, key, stamp)
        log(f"cache written: {cache_dir}")
    return bundle, loaded, cache_dir, True


def cmd_setup(args, log) -> int:
    bundle, _, cache_dir, computed = build_bundle(
        args.scene_dir, ckpt=args.ckpt, use_cache=not args.force,
        write_cache=True, log=log)
    if not computed:
        # fresh cache already on disk; leave it untouched
        log(f"setup complete ({bundle.n_sources} sources, cache reused)")
    else:
        log(f"setup complete ({bundle.n_sources} sources)")
    log(str(cache_dir))
    return 0


def cmd_render(args, log) -> int:
    from .camera import look_at_camera
    from .imageio import write_image
    bundle, loaded, _, _ = build_bundle(args.scene_dir, ckpt=args.ckpt, log=log)
    position, target, up = _parse_pose(args.pose)
    cam0 = loaded.cameras[0]
    width = args.width if args.width else cam0.width
    height = args.height if args.height else cam0.height
    camera = look_at_camera(position, target, up, args.fov, width, height)
    result = synthesize_view(bundle, camera)
    write_image(args.out, result.image)
    log(f"wrote {args.out} ({width}x{height})")
    return 0


def cmd_render_path(args, log) -> int:
    from .camera import look_at_camera
    bundle, loaded, _, _ = build_bundle(args.scene_dir, ckpt=args.ckpt, log=log)
    cam0 = loaded.cameras[0]
    width = args.width if args.width else cam0.width
    height = args.height if args.height else cam0.height
    cameras = []
    with open(args.path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            position, target, up = _parse_pose(line)
            cameras.append(look_at_camera(position, target, up, args.fov,
                                          width, height))
    if not cameras:
        raise ConfigError(f"no poses found in {args.path}")
    os.makedirs(args.outdir, exist_ok=True)
    written = render_path(bundle, cameras, args.outdir)
    log(f"wrote {len(written)} frames to {args.outdir}")
    return 0


def _training_setup(config_path):
    from .training import parse_run_config, train_config_from_keys
    if config_path is None:
        return train_config_from_keys({}), {}
    train_kv, model_kv = parse_run_config(config_path)
    return train_config_from_keys(train_kv), model_kv


def cmd_train(args, log) -> int:
    from .training import prepare_training_scene, train_scene_agnostic
    train_cfg, model_kv = _training_setup(args.config)
    model_cfg = apply_config_overrides(ModelConfig(), model_kv)
    scenes = []
    for d in args.scenes:
        loaded = load_scene(d)
        scenes.append(prepare_training_scene(loaded.images, loaded.cameras,
                                             loaded.mesh, name=loaded.name))
    result = train_scene_agnostic(scenes, model_cfg, train_cfg,
                                  ckpt_dir=args.ckpt_dir, log=log)
    save_model(args.out, result.store, model_cfg)
    log(f"trained {train_cfg.iterations} iterations; "
        f"final loss {result.losses[-1]:.5f}; wrote {args.out}")
    return 0


def cmd_finetune(args, log) -> int:
    from .training import (default_network_ft_iterations, finetune_network,
                           finetune_scene, prepare_training_scene)
    train_cfg, model_kv = _training_setup(args.config)
    if model_kv:
        raise ConfigError("finetune keeps the checkpoint's model configuration; "
                          f"remove overrides {sorted(model_kv)}")
    store, model_cfg = load_model(args.ckpt)
    loaded = load_scene(args.scene)
    scene = prepare_training_scene(loaded.images, loaded.cameras, loaded.mesh,
                                   name=loaded.name)
    if args.iters is not None:
        iters = args.iters
    elif args.config is not None:
        iters = train_cfg.iterations
    else:
        iters = default_network_ft_iterations(scene.n_sources)
    regime = "network_ft" if args.regime == "network" else "scene_ft"
    from dataclasses import replace
    train_cfg = replace(train_cfg, iterations=iters, regime=regime)
    if regime == "network_ft":
        result = finetune_network(scene, store, model_cfg, train_cfg,
                                  ckpt_dir=args.ckpt_dir, log=log)
    else:
        result = finetune_scene(scene, store, model_cfg, train_cfg,
                                ckpt_dir=args.ckpt_dir, log=log)
        log(f"image pool: {len(result.pool.entries)} tuned source images")
    save_model(args.out, result.store, model_cfg)
    log(f"fine-tuned ({regime}) {iters} iterations; wrote {args.out}")
    return 0


def cmd_eval(args, log) -> int:
    from .metrics import evaluate_scene
    bundle, loaded, _, _ = build_bundle(args.scene, ckpt=args.ckpt, log=log)
    if not loaded.heldout_cameras:
        raise ConfigError(f"scene {loaded.name} has no held-out views to score")
    report = evaluate_scene(bundle, loaded.heldout_cameras, loaded.heldout_images)
    csv_text = report.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text)
        log(f"wrote {args.out}")
    else:
        sys.stdout.write(csv_text)
    log(report.summary())
    return 0


def cmd_serve(args, log) -> int:
    from .service import RenderService, serve_forever_in_thread, start_server
    service = RenderService()
    server = start_server(service, port=args.port, assets_dir=args.assets)
    host, port = server.server_address

    def load():
        bundle, _, _, _ = build_bundle(args.scene_dir, ckpt=args.ckpt, log=log)
        service.set_bundle(bundle)
        log(f"scene ready: {bundle.name} ({bundle.n_sources} sources)")

    loader = threading.Thread(target=load, daemon=True)
    loader.start()
    log(f"serving on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        log("shutting down")
    finally:
        server.shutdown()
    return 0


def cmd_make_scene(args, log) -> int:
    from .synthetic import SyntheticSceneSpec, generate_synthetic_scene
    spec = SyntheticSceneSpec(name=args.name, n_sources=args.sources,
                              n_heldout=args.heldout, width=args.width,
                              height=args.height, seed=args.seed)
    generate_synthetic_scene(spec, args.out)
    log(f"generated scene {args.name!r} in {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewsynth",
        description="Novel view synthesis from posed images and a mesh scaffold")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("setup", help="encode sources and cache features/depths")
    p.add_argument("scene_dir")
    p.add_argument("--ckpt", default=None, help="parameter checkpoint")
    p.add_argument("--force", action="store_true", help="recompute even if fresh")
    p.set_defaults(fn=cmd_setup)

    p = sub.add_parser("render", help="synthesize one novel view")
    p.add_argument("scene_dir")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--pose", required=True,
                   help="px,py,pz,tx,ty,tz[,ux,uy,uz] (up defaults to 0,0,1)")
    p.add_argument("--fov", type=float, default=45.0, help="vertical fov, degrees")
    p.add_argument("--width", type=int, default=0, help="default: source width")
    p.add_argument("--height", type=int, default=0, help="default: source height")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("render-path", help="synthesize a pose path to frames")
    p.add_argument("scene_dir")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--path", required=True, help="file with one pose per line")
    p.add_argument("--fov", type=float, default=45.0)
    p.add_argument("--width", type=int, default=0)
    p.add_argument("--height", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(fn=cmd_render_path)

    p = sub.add_parser("train", help="scene-agnostic training")
    p.add_argument("--scenes", nargs="+", required=True)
    p.add_argument("--config", default=None, help="key=value run config")
    p.add_argument("--out", default="model.bin")
    p.add_argument("--ckpt-dir", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune", help="per-scene fine-tuning")
    p.add_argument("--scene", required=True)
    p.add_argument("--regime", choices=("network", "scene"), required=True)
    p.add_argument("--ckpt", required=True, help="pretrained checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--iters", type=int, default=None,
                   help="default: 256 x number of sources")
    p.add_argument("--out", default="model_ft.bin")
    p.add_argument("--ckpt-dir", default=None)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="score held-out views")
    p.add_argument("--scene", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="HTTP render service")
    p.add_argument("scene_dir")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--assets", default=None, help="static viewer asset dir")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("make-scene", help="generate a synthetic fixture scene")
    p.add_argument("out")
    p.add_argument("--name", default="fixture")
    p.add_argument("--sources", type=int, default=8)
    p.add_argument("--heldout", type=int, default=2)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_scene)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    log = lambda msg: print(msg, file=sys.stderr)
    try:
        return args.fn(args, log)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
