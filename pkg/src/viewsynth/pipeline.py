"""End-to-end novel-view synthesis: scene setup and per-view rendering.

Setup encodes every source image and renders every source depth buffer once.
Synthesis then walks the target view's pixels: render target depth, lift the
valid pixels to surface points, find the sources whose depth buffers agree
they see each point, bilinearly sample the per-source feature maps at the
projected locations, fuse each point's ray set with the configured
aggregator, scatter the fused vectors into a feature image, and run the
render stack.  Pixels whose target ray missed the scaffold carry zero
features and are left for the render network to inpaint.

All per-point work is batched through one flat ray table in row-major pixel
order with sources ascending inside each point; combined with fixed-order
reductions downstream this makes a rendered view a pure function of
(bundle, camera, config), bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .aggregate import AggregatorConfig, aggregate_rows, make_aggregator_config
from .autodiff import Tensor
from .blocks import (UNetConfig, encode_image_planes, init_render_stack,
                     init_unet, render_features)
from .camera import Camera
from .errors import ConfigError, ShapeError
from .geometry import unproject, visibility_masks
from .imageio import write_image
from .mesh import TriangleMesh
from .params import ParameterStore
from .raycast import Bvh, DepthMap, render_depth


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the three trainable parts plus the aggregation rule.

    encoder_kind/render_kind "identity" swap a network for a passthrough
    (features = RGB planes, output = feature image); both require
    feat_channels == 3 and exist for oracles and debugging.
    render_stages is the number L of chained refinement networks; each is a
    U-Net of depth render_depth and base width render_base.
    """

    feat_channels: int = 32
    encoder_kind: str = "unet"
    encoder_stages: int = 3
    encoder_base: int = 16
    render_kind: str = "unet"
    render_stages: int = 3
    render_depth: int = 2
    render_base: int = 12
    aggregator: AggregatorConfig = field(
        default_factory=lambda: make_aggregator_config("mlp", 32))

    def __post_init__(self):
        if self.encoder_kind not in ("unet", "identity"):
            raise ConfigError(f"unknown encoder kind {self.encoder_kind!r}")
        if self.render_kind not in ("unet", "identity"):
            raise ConfigError(f"unknown render kind {self.render_kind!r}")
        if self.encoder_kind == "identity" and self.feat_channels != 3:
            raise ConfigError("identity encoder produces RGB features: feat_channels must be 3")
        if self.render_kind == "identity" and self.feat_channels != 3:
            raise ConfigError("identity render consumes RGB features: feat_channels must be 3")
        if self.render_stages < 1:
            raise ConfigError("render_stages must be >= 1")
        if self.aggregator.feat_channels != self.feat_channels:
            raise ConfigError(
                f"aggregator fuses {self.aggregator.feat_channels} channels but the "
                f"model carries {self.feat_channels}")

    @property
    def encoder_unet(self) -> UNetConfig:
        return UNetConfig(in_channels=3, base_width=self.encoder_base,
                          stages=self.encoder_stages, out_channels=self.feat_channels)

    @property
    def divisor(self) -> int:
        d = 2 ** self.encoder_stages if self.encoder_kind == "unet" else 1
        if self.render_kind == "unet":
            d = max(d, 2 ** self.render_depth)
        return d

    def to_dict(self) -> dict:
        agg = self.aggregator
        out = {
            "feat_channels": self.feat_channels,
            "encoder.kind": self.encoder_kind,
            "encoder.stages": self.encoder_stages,
            "encoder.base": self.encoder_base,
            "render.kind": self.render_kind,
            "render.stages": self.render_stages,
            "render.depth": self.render_depth,
            "render.base": self.render_base,
            "aggregator.variant": agg.variant,
        }
        if agg.pooling is not None:
            out["aggregator.pool"] = agg.pooling
        if agg.mlp is not None:
            out["aggregator.hidden"] = ",".join(str(w) for w in agg.mlp.widths[1:-1])
        if agg.gat is not None:
            out["aggregator.heads"] = agg.gat.heads
            out["aggregator.layers"] = agg.gat.layers
        return out

    KNOWN_KEYS = frozenset({
        "feat_channels", "encoder.kind", "encoder.stages", "encoder.base",
        "render.kind", "render.stages", "render.depth", "render.base",
        "aggregator.variant", "aggregator.pool", "aggregator.hidden",
        "aggregator.heads", "aggregator.layers"})

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        c = int(d.get("feat_channels", 32))
        hidden = tuple(int(w) for w in str(d.get("aggregator.hidden", "64")).split(",") if w)
        agg = make_aggregator_config(
            str(d.get("aggregator.variant", "mlp")).replace("-", "_"), c,
            pooling=d.get("aggregator.pool"), hidden=hidden,
            heads=int(d.get("aggregator.heads", 2)),
            layers=int(d.get("aggregator.layers", 1)))
        return ModelConfig(
            feat_channels=c,
            encoder_kind=str(d.get("encoder.kind", "unet")),
            encoder_stages=int(d.get("encoder.stages", 3)),
            encoder_base=int(d.get("encoder.base", 16)),
            render_kind=str(d.get("render.kind", "unet")),
            render_stages=int(d.get("render.stages", 3)),
            render_depth=int(d.get("render.depth", 2)),
            render_base=int(d.get("render.base", 12)),
            aggregator=agg)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParameterStore:
    """Fresh parameter store with groups enc.*, aggr.*, render.*."""
    store = ParameterStore()
    if config.encoder_kind == "unet":
        init_unet(store, "enc", config.encoder_unet, rng)
    from .aggregate import init_aggregator
    init_aggregator(store, "aggr", config.aggregator, rng)
    if config.render_kind == "unet":
        init_render_stack(store, "render", config.feat_channels, config.render_base,
                          config.render_depth, config.render_stages, rng)
    return store


@dataclass(frozen=True)
class SceneBundle:
    """Everything synthesis needs, computed once per scene."""

    mesh: TriangleMesh
    cameras: list
    images: list            # (H,W,3) float32 in [0,1]
    features: list          # Tensor (C_feat, H, W) per source
    depths: list            # DepthMap per source
    store: ParameterStore
    config: ModelConfig
    bvh: Bvh
    name: str = "scene"

    @property
    def n_sources(self) -> int:
        return len(self.cameras)


def encode_source(store, config: ModelConfig, image: np.ndarray) -> Tensor:
    """One source image -> (C_feat, H, W) feature planes."""
    img_t = image if isinstance(image, Tensor) else ad.constant(np.asarray(image, np.float32))
    if config.encoder_kind == "identity":
        return ad.transpose(img_t, (2, 0, 1))
    return encode_image_planes(store, "enc", config.encoder_unet, img_t)


def setup_scene(images, cameras, mesh: TriangleMesh, store: ParameterStore,
                config: ModelConfig, name: str = "scene") -> SceneBundle:
    """Encode all sources and render all source depth buffers."""
    if len(images) == 0:
        raise ShapeError("setup_scene", "a scene needs at least one source image")
    if len(images) != len(cameras):
        raise ShapeError("setup_scene", f"{len(images)} images vs {len(cameras)} cameras")
    d = config.divisor
    for img, cam in zip(images, cameras):
        h, w = np.asarray(img if not isinstance(img, Tensor) else img.data).shape[:2]
        if (h, w) != (cam.height, cam.width):
            raise ShapeError("setup_scene", f"image {h}x{w} vs camera {cam.height}x{cam.width}")
        if h % d or w % d:
            raise ShapeError("setup_scene",
                             f"extents {h}x{w} not divisible by {d}; pad the scene images")
    bvh = Bvh(mesh)
    depths = [render_depth(mesh, cam, bvh) for cam in cameras]
    features = [encode_source(store, config, img) for img in images]
    frozen = [img.data if isinstance(img, Tensor) else np.asarray(img, np.float32)
              for img in images]
    return SceneBundle(mesh=mesh, cameras=list(cameras), images=frozen,
                       features=features, depths=depths, store=store,
                       config=config, bvh=bvh, name=name)


def sample_source_feature(bundle: SceneBundle, k: int, pixel) -> np.ndarray:
    """Bilinear feature of source k at a continuous pixel position.

    Pixel coordinates put integer+0.5 at texel centers, so the lookup into
    the feature planes shifts by half a texel.
    """
    pix = np.asarray(pixel, dtype=np.float64).reshape(2)
    coords = ad.constant(np.array([[pix[0] - 0.5, pix[1] - 0.5]], dtype=np.float32))
    return ad.bilinear_sample(bundle.features[k], coords).data[0].copy()


@dataclass(frozen=True)
class FeatureField:
    """Aggregated per-pixel features for one target view, pre-render-network."""

    grid: Tensor            # (H, W, C_feat)
    depth: DepthMap
    counts: np.ndarray      # (H, W) int64 rays per pixel
    valid: np.ndarray       # (H, W) bool: target ray hit the scaffold


def fuse_feature_grid(config: ModelConfig, store: ParameterStore, features,
                      centers: np.ndarray, pts: np.ndarray, u: np.ndarray,
                      vis: np.ndarray, pix: np.ndarray, valid: np.ndarray
                      ) -> tuple[Tensor, np.ndarray]:
    """Sample + aggregate precomputed point/visibility tables into a grid.

    features/centers describe the participating sources (columns of vis/pix);
    pts (P,3) are the valid pixels' surface points in row-major order, u
    their unit target-view directions, valid the (H,W) mask they came from.
    Returns the (H, W, C_feat) grid tensor and the (H, W) ray counts.
    """
    h, w = valid.shape
    n_pts = pts.shape[0]
    counts = np.zeros((h, w), dtype=np.int64)
    if n_pts == 0:
        grid = ad.constant(np.zeros((h, w, config.feat_channels), dtype=np.float32))
        return grid, counts

    point_id, src_id = np.nonzero(vis)           # point-major, sources ascending
    m = point_id.shape[0]
    counts[valid] = vis.sum(axis=1)

    if m == 0:
        g_rows = ad.constant(np.zeros((n_pts, config.feat_channels), dtype=np.float32))
    else:
        dirs = pts[point_id] - centers[src_id]
        dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-18)
        # sample each source's plane once, then permute rows back to table order
        chunks, perm_parts = [], []
        table_pos = np.arange(m, dtype=np.int64)
        for k in range(len(features)):
            rows_k = table_pos[src_id == k]
            if rows_k.size == 0:
                continue
            coords = np.ascontiguousarray(pix[point_id[rows_k], k] - 0.5, dtype=np.float32)
            chunks.append(ad.bilinear_sample(features[k], ad.constant(coords)))
            perm_parts.append(rows_k)
        stacked = chunks[0] if len(chunks) == 1 else ad.concat(chunks, axis=0)
        order = np.concatenate(perm_parts)       # table row of each stacked row
        inverse = np.empty(m, dtype=np.int64)
        inverse[order] = np.arange(m, dtype=np.int64)
        feats = ad.gather_rows(stacked, inverse)
        g_rows = aggregate_rows(config.aggregator, store, feats, dirs, u,
                                point_id, n_pts)

    # scatter fused rows into the image grid; invalid pixels read a zero row
    padded = ad.concat([ad.constant(np.zeros((1, config.feat_channels), np.float32)),
                        g_rows], axis=0)
    flat_idx = np.zeros(h * w, dtype=np.int64)
    flat_idx[valid.reshape(-1)] = 1 + np.arange(n_pts, dtype=np.int64)
    grid = ad.reshape(ad.gather_rows(padded, flat_idx), (h, w, config.feat_channels))
    return grid, counts


def view_geometry(camera: Camera, pts: np.ndarray) -> np.ndarray:
    """Unit directions from the camera center to each point."""
    u = pts - camera.center
    return u / np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-18)


def synthesize_features(bundle: SceneBundle, camera: Camera,
                        depth: DepthMap | None = None) -> FeatureField:
    """Depth -> surface points -> visibility -> sampling -> aggregation."""
    d = bundle.config.divisor
    if camera.width % d or camera.height % d:
        raise ShapeError("synthesize_features",
                         f"target size {camera.width}x{camera.height} not "
                         f"divisible by {d}")
    if depth is None:
        depth = render_depth(bundle.mesh, camera, bundle.bvh)
    surf = unproject(depth, camera)
    valid = surf.valid
    pts = surf.points[valid]                     # row-major pixel order
    if pts.shape[0]:
        vis, pix, _ = visibility_masks(pts, bundle.cameras, bundle.depths)
        u = view_geometry(camera, pts)
    else:
        vis = np.zeros((0, bundle.n_sources), dtype=bool)
        pix = np.zeros((0, bundle.n_sources, 2))
        u = np.zeros((0, 3))
    centers = np.stack([cam.center for cam in bundle.cameras])
    grid, counts = fuse_feature_grid(bundle.config, bundle.store, bundle.features,
                                     centers, pts, u, vis, pix, valid)
    return FeatureField(grid=grid, depth=depth, counts=counts, valid=valid)


def render_from_features(config: ModelConfig, store: ParameterStore,
                         grid: Tensor) -> Tensor:
    if config.render_kind == "identity":
        return grid
    return render_features(store, "render", config.feat_channels,
                           config.render_base, config.render_depth,
                           config.render_stages, grid)


@dataclass(frozen=True)
class SynthesisResult:
    image: np.ndarray       # (H, W, 3) float32 in (0,1)
    depth: DepthMap
    counts: np.ndarray      # (H, W) int64


def synthesize_view_tensor(bundle: SceneBundle, camera: Camera) -> tuple[Tensor, FeatureField]:
    """Differentiable synthesis: returns the rendered image tensor + field."""
    field_ = synthesize_features(bundle, camera)
    return render_from_features(bundle.config, bundle.store, field_.grid), field_


def synthesize_view(bundle: SceneBundle, camera: Camera) -> SynthesisResult:
    """Render a novel view; pure function of (bundle, camera)."""
    rgb, field_ = synthesize_view_tensor(bundle, camera)
    return SynthesisResult(image=rgb.data.astype(np.float32, copy=True),
                           depth=field_.depth, counts=field_.counts)


def render_path(bundle: SceneBundle, cameras, out_dir) -> list:
    """Render a camera path to out_dir/frame_%06d.png; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for i, cam in enumerate(cameras):
        res = synthesize_view(bundle, cam)
        path = os.path.join(out_dir, f"frame_{i:06d}.png")
        write_image(path, res.image)
        written.append(path)
    return written


def identity_model_config(variant: str = "weighted_mean") -> ModelConfig:
    """RGB-passthrough model: features are source colors, output is the fused
    feature image.  The workhorse of reprojection oracles."""
    return ModelConfig(feat_channels=3, encoder_kind="identity", render_kind="identity",
                       aggregator=make_aggregator_config(variant, 3, heads=1))


def save_model(path, store: ParameterStore, config: ModelConfig) -> None:
    from .params import save_checkpoint
    save_checkpoint(path, store, config.to_dict())


def load_model(path) -> tuple[ParameterStore, ModelConfig]:
    from .params import load_checkpoint
    store, cfg = load_checkpoint(path)
    return store, ModelConfig.from_dict(cfg)


def apply_config_overrides(config: ModelConfig, overrides: dict) -> ModelConfig:
    """New ModelConfig with dotted-key overrides; unknown keys are errors."""
    base = config.to_dict()
    for key, value in overrides.items():
        if key not in ModelConfig.KNOWN_KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        base[key] = value
    return ModelConfig.from_dict(base)


def images_from_store(store: ParameterStore, fallback) -> list:
    """Scene-tuned source images (imgs.%04d) if the checkpoint carries them,
    else the given originals."""
    names = sorted(n for n in store.names() if n.startswith("imgs."))
    if not names:
        return list(fallback)
    if len(names) != len(fallback):
        raise ShapeError("images_from_store",
                         f"checkpoint carries {len(names)} tuned images for "
                         f"{len(fallback)} sources")
    return [store[n].data for n in names]


def config_fingerprint(config: ModelConfig) -> str:
    """Stable short hash of a model configuration (cache keys, filenames)."""
    import hashlib
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
