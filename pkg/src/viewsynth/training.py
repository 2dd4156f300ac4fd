"""Training regimes: across-scene pretraining plus the two per-scene
fine-tuning modes, one optimizer step at a time.

Each step samples a target image I_n and M other sources, synthesizes I_n's
view from those M alone, and backpropagates the image loss end to end
(encoder, aggregator, render stack, and in the scene-tuning regime the
trainable source-image pool).  Geometry (depth buffers, surface points,
visibility tables) is a pure function of the scene, so it is computed once
per scene up front and sliced per step.

Regimes:
  scene_agnostic   fresh parameters, many scenes
  network_ft       continue training the networks on one scene
  scene_ft         additionally optimize a pool of trainable copies of the
                   source images; the originals stay frozen and remain the
                   loss targets
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .adam import Adam, AdamConfig
from .autodiff import Tape, Tensor
from .errors import ConfigError, ShapeError
from .geometry import visibility_masks, unproject
from .loss import DEFAULT_LAMBDAS, loss_image
from .mesh import TriangleMesh
from .params import ParameterStore
from .pipeline import (ModelConfig, encode_source, fuse_feature_grid,
                       render_from_features, save_model, view_geometry)
from .raycast import Bvh, render_depth

REGIMES = ("scene_agnostic", "network_ft", "scene_ft")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    sources_per_step: int = 3
    regime: str = "scene_agnostic"
    lambdas: tuple = DEFAULT_LAMBDAS
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    ckpt_every: int = 500

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.sources_per_step < 1:
            raise ConfigError("sources_per_step must be >= 1")
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; pick from {REGIMES}")
        if len(self.lambdas) != 3:
            raise ConfigError("lambdas must carry 3 scale weights")


def default_network_ft_iterations(n_sources: int) -> int:
    """Per-scene network fine-tuning budget: 256 iterations per source."""
    return 256 * n_sources


@dataclass
class TargetGeometry:
    """Per-target-view tables against the full source set."""

    valid: np.ndarray   # (H, W) bool
    pts: np.ndarray     # (P, 3)
    u: np.ndarray       # (P, 3) unit view directions
    vis: np.ndarray     # (P, N) bool
    pix: np.ndarray     # (P, N, 2)


@dataclass
class TrainScene:
    """A scene with all parameter-independent work done."""

    name: str
    images: list        # (H,W,3) float32 originals
    cameras: list
    mesh: TriangleMesh
    bvh: Bvh
    depths: list
    centers: np.ndarray  # (N, 3)
    targets: dict       # n -> TargetGeometry

    @property
    def n_sources(self) -> int:
        return len(self.images)


def prepare_training_scene(images, cameras, mesh: TriangleMesh,
                           name: str = "scene") -> TrainScene:
    """Render depth buffers and point/visibility tables for every view."""
    if len(images) != len(cameras) or not images:
        raise ShapeError("prepare_training_scene",
                         f"{len(images)} images vs {len(cameras)} cameras")
    bvh = Bvh(mesh)
    depths = [render_depth(mesh, cam, bvh) for cam in cameras]
    centers = np.stack([cam.center for cam in cameras])
    targets = {}
    for n, cam in enumerate(cameras):
        surf = unproject(depths[n], cam)
        pts = surf.points[surf.valid]
        if pts.shape[0]:
            vis, pix, _ = visibility_masks(pts, cameras, depths)
            u = view_geometry(cam, pts)
        else:
            vis = np.zeros((0, len(cameras)), dtype=bool)
            pix = np.zeros((0, len(cameras), 2))
            u = np.zeros((0, 3))
        targets[n] = TargetGeometry(valid=surf.valid, pts=pts, u=u, vis=vis, pix=pix)
    imgs = [np.asarray(im, dtype=np.float32) for im in images]
    return TrainScene(name=name, images=imgs, cameras=list(cameras), mesh=mesh,
                      bvh=bvh, depths=depths, centers=centers, targets=targets)


class MutableImagePool:
    """Trainable copies of a scene's source images; originals kept frozen.

    Entries are registered in the parameter store as imgs.%04d so the
    optimizer tracks them like any other parameter.
    """

    def __init__(self, store: ParameterStore, images):
        self.originals = [np.asarray(im, dtype=np.float32).copy() for im in images]
        for im in self.originals:
            im.setflags(write=False)
        self.entries = []
        for i, im in enumerate(self.originals):
            t = Tensor(im.copy(), requires_grad=True)
            store.adopt(f"imgs.{i:04d}", t)
            self.entries.append(t)

    def checksums(self) -> list:
        import hashlib
        return [hashlib.sha256(im.tobytes()).hexdigest() for im in self.originals]


def synthesize_step(model_cfg: ModelConfig, store: ParameterStore,
                    scene: TrainScene, target: int, sources, images=None):
    """Differentiable render of view `target` from the given source subset.

    images overrides the encoder inputs (the scene-tuning pool); defaults to
    the scene originals.  Returns the RGB tensor.
    """
    sel = list(sources)
    geom = scene.targets[target]
    imgs = images if images is not None else scene.images
    feats = [encode_source(store, model_cfg, imgs[k]) for k in sel]
    grid, _ = fuse_feature_grid(
        model_cfg, store, feats, scene.centers[sel], geom.pts, geom.u,
        geom.vis[:, sel], geom.pix[:, sel], geom.valid)
    return render_from_features(model_cfg, store, grid)


def gradient_liveness(store: ParameterStore, groups=("enc.", "aggr.", "render.")
                      ) -> dict:
    """Whether any parameter in each group carries a nonzero gradient."""
    alive = {}
    for g in groups:
        names = [n for n in store.names() if n.startswith(g)]
        if not names:
            continue
        alive[g] = any(store[n].grad is not None and np.any(store[n].grad) for n in names)
    return alive


@dataclass
class TrainResult:
    store: ParameterStore
    losses: list
    pool: MutableImagePool | None = None


def _sample_step(rng, scenes, m):
    scene = scenes[int(rng.integers(len(scenes)))]
    target = int(rng.integers(scene.n_sources))
    others = np.array([k for k in range(scene.n_sources) if k != target])
    sel = rng.choice(others, size=m, replace=False)
    return scene, target, np.sort(sel)


def _train_loop(scenes, store: ParameterStore, model_cfg: ModelConfig,
                cfg: TrainConfig, pool: MutableImagePool | None = None,
                ckpt_dir=None, log=None) -> TrainResult:
    usable = [s for s in scenes if s.n_sources >= cfg.sources_per_step + 1]
    for s in scenes:
        if s.n_sources < cfg.sources_per_step + 1:
            warnings.warn(f"scene {s.name} has {s.n_sources} sources; "
                          f"needs at least {cfg.sources_per_step + 1}, skipped")
    if not usable:
        raise ConfigError("no scene has enough source images for this step size")
    opt = Adam(store, cfg.adam)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    pool_images = pool.entries if pool is not None else None
    for it in range(1, cfg.iterations + 1):
        scene, target, sel = _sample_step(rng, usable, cfg.sources_per_step)
        images = None
        if pool_images is not None:
            images = pool_images
        with Tape() as tape:
            rgb = synthesize_step(model_cfg, store, scene, target, sel, images=images)
            # ground truth is always the frozen original
            loss = loss_image(rgb, scene.images[target], cfg.lambdas)
            tape.backward(loss)
        grads = {name: store.grad(name) for name in store.names()}
        opt.step(store, grads)
        store.zero_grad()
        losses.append(float(loss.data))
        if log is not None and (it % max(1, cfg.iterations // 20) == 0 or it == 1):
            log(f"iter {it:6d}/{cfg.iterations}  loss {losses[-1]:.5f}")
        if ckpt_dir is not None and (it % cfg.ckpt_every == 0 or it == cfg.iterations):
            os.makedirs(ckpt_dir, exist_ok=True)
            save_model(os.path.join(ckpt_dir, f"ckpt_{it:06d}.bin"), store, model_cfg)
    return TrainResult(store=store, losses=losses, pool=pool)


def train_scene_agnostic(scenes, model_cfg: ModelConfig, cfg: TrainConfig,
                         ckpt_dir=None, log=None) -> TrainResult:
    """Fresh parameters trained across scenes (regime scene_agnostic)."""
    from .pipeline import init_params
    store = init_params(model_cfg, np.random.default_rng(cfg.seed))
    return _train_loop(scenes, store, model_cfg, cfg, ckpt_dir=ckpt_dir, log=log)


def finetune_network(scene: TrainScene, store: ParameterStore,
                     model_cfg: ModelConfig, cfg: TrainConfig,
                     ckpt_dir=None, log=None) -> TrainResult:
    """Continue training the networks on one scene; no image pool."""
    return _train_loop([scene], store, model_cfg, cfg, ckpt_dir=ckpt_dir, log=log)


def finetune_scene(scene: TrainScene, store: ParameterStore,
                   model_cfg: ModelConfig, cfg: TrainConfig,
                   ckpt_dir=None, log=None) -> TrainResult:
    """Scene tuning: networks plus a trainable copy of each source image.

    The encoder reads the pool copies; the loss target of each step is the
    untouched original, and the target's own pool entry never participates
    in its step (the target is excluded from the source sample).
    """
    pool = MutableImagePool(store, scene.images)
    return _train_loop([scene], store, model_cfg, cfg, pool=pool,
                       ckpt_dir=ckpt_dir, log=log)


# -- run-config files ---------------------------------------------------------

_TRAIN_KEYS = {"regime", "iters", "M", "lr", "beta1", "beta2", "eps", "seed",
               "lambda_l", "ckpt_every"}


def parse_run_config(path) -> tuple[dict, dict]:
    """key=value run file -> (training keys, model-config keys).

    Training keys: regime, iters, M, lr, beta1, beta2, eps, seed, lambda_l
    (comma-separated), ckpt_every.  Everything else (feat_channels,
    encoder.*, render.*, aggregator.*) overrides the model configuration.
    """
    train_kv, model_kv = {}, {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                from .errors import SceneFormatError
                raise SceneFormatError(str(path), lineno, "expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            (train_kv if key in _TRAIN_KEYS else model_kv)[key] = value
    return train_kv, model_kv


def train_config_from_keys(kv: dict, **defaults) -> TrainConfig:
    lambdas = DEFAULT_LAMBDAS
    if "lambda_l" in kv:
        lambdas = tuple(float(x) for x in kv["lambda_l"].split(","))
    adam = AdamConfig(lr=float(kv.get("lr", 1e-4)), beta1=float(kv.get("beta1", 0.9)),
                      beta2=float(kv.get("beta2", 0.9999)), eps=float(kv.get("eps", 1e-8)))
    merged = dict(iterations=int(kv.get("iters", defaults.get("iterations", 200))),
                  sources_per_step=int(kv.get("M", 3)),
                  regime=kv.get("regime", defaults.get("regime", "scene_agnostic")),
                  lambdas=lambdas, seed=int(kv.get("seed", 0)), adam=adam,
                  ckpt_every=int(kv.get("ckpt_every", 500)))
    return TrainConfig(**merged)
