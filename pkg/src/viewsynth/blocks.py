"""Network blocks: U-Net image encoder, rowwise MLP, graph attention,
and the residual U-Net rendering stack.

All blocks are pure functions over (ParameterStore, prefix, config,
inputs); parameters are registered once by the matching init_* routine
under deterministic names, so a checkpoint fully determines behavior.
Activations are leaky-relu(0.2) inside U-Nets; no normalization layers
anywhere (batch size is 1 and determinism matters more than curvature).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .params import ParameterStore

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class UNetConfig:
    """Shape contract of one U-Net: stem, `stages` stride-2 descents with
    channel doubling, mirrored nearest-upsample ascents with skip
    concatenation, and a linear 3x3 head."""

    in_channels: int
    base_width: int
    stages: int
    out_channels: int

    def __post_init__(self):
        if self.stages < 1:
            raise ConfigError(f"unet stages must be >= 1, got {self.stages}")
        if min(self.in_channels, self.base_width, self.out_channels) < 1:
            raise ConfigError("unet channel counts must be positive")

    @property
    def divisor(self) -> int:
        return 1 << self.stages

    def width(self, level: int) -> int:
        return self.base_width * (1 << level)


@dataclass(frozen=True)
class MlpConfig:
    """Affine stack; widths run [input, hidden..., output]."""

    widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError("mlp needs at least input and output widths")
        if min(self.widths) < 1:
            raise ConfigError("mlp widths must be positive")
        if self.activation not in ("relu", "leaky_relu", "tanh"):
            raise ConfigError(f"unknown mlp activation {self.activation!r}")


@dataclass(frozen=True)
class GatConfig:
    """Graph-attention layer stack.

    `width` is the per-layer output width (heads concatenate to it); the
    first layer reads `in_width`-wide nodes (defaults to `width`), later
    layers read the previous output.
    """

    width: int
    heads: int = 2
    slope: float = 0.2
    layers: int = 1
    in_width: int | None = None

    def __post_init__(self):
        if self.width < 1 or self.heads < 1 or self.layers < 1:
            raise ConfigError("gat width, heads and layers must be positive")
        if self.width % self.heads:
            raise ConfigError(f"gat heads {self.heads} must divide width {self.width}")
        if self.in_width is not None and self.in_width < 1:
            raise ConfigError("gat in_width must be positive")

    @property
    def head_width(self) -> int:
        return self.width // self.heads

    @property
    def input_width(self) -> int:
        return self.width if self.in_width is None else self.in_width


def _he_conv(rng: np.random.Generator, out_c: int, in_c: int, k: int) -> np.ndarray:
    std = float(np.sqrt(2.0 / (in_c * k * k)))
    return (rng.standard_normal((out_c, in_c, k, k)) * std).astype(np.float32)


def _he_linear(rng: np.random.Generator, in_w: int, out_w: int) -> np.ndarray:
    std = float(np.sqrt(2.0 / in_w))
    return (rng.standard_normal((in_w, out_w)) * std).astype(np.float32)


# ---------------------------------------------------------------------------
# U-Net


def init_unet(store: ParameterStore, prefix: str, cfg: UNetConfig,
              rng: np.random.Generator, zero_head: bool = False):
    """Register one U-Net's convolutions under `prefix`."""

    def conv(name, in_c, out_c, zero=False):
        w = np.zeros((out_c, in_c, 3, 3), np.float32) if zero else _he_conv(rng, out_c, in_c, 3)
        store.add(f"{prefix}.{name}.w", w)
        store.add(f"{prefix}.{name}.b", np.zeros(out_c, np.float32))

    conv("stem", cfg.in_channels, cfg.base_width)
    for level in range(1, cfg.stages + 1):
        conv(f"down{level}.a", cfg.width(level - 1), cfg.width(level))
        conv(f"down{level}.b", cfg.width(level), cfg.width(level))
    for level in range(cfg.stages, 0, -1):
        conv(f"up{level}", cfg.width(level) + cfg.width(level - 1), cfg.width(level - 1))
    conv("head", cfg.base_width, cfg.out_channels, zero=zero_head)


def unet_forward(store: ParameterStore, prefix: str, cfg: UNetConfig, x: Tensor) -> Tensor:
    """(N, in_channels, H, W) -> (N, out_channels, H, W); H, W must divide
    by 2^stages (the error names the padded size that would work)."""
    if x.data.ndim != 4 or x.data.shape[1] != cfg.in_channels:
        raise ShapeError("unet_forward", f"expected (N, {cfg.in_channels}, H, W), got {x.data.shape}")
    n, _, h, w = x.data.shape
    d = cfg.divisor
    if h % d or w % d:
        hp, wp = -(-h // d) * d, -(-w // d) * d
        raise ShapeError(
            "unet_forward",
            f"spatial extents {h}x{w} not divisible by {d}; pad the input to {hp}x{wp}",
        )

    def conv(name, t, stride=1):
        return ad.conv2d(t, store[f"{prefix}.{name}.w"], store[f"{prefix}.{name}.b"], stride=stride, pad=1)

    def act(t):
        return ad.leaky_relu(t, LEAKY_SLOPE)

    skips = []
    t = act(conv("stem", x))
    skips.append(t)
    for level in range(1, cfg.stages + 1):
        t = act(conv(f"down{level}.a", t, stride=2))
        t = act(conv(f"down{level}.b", t))
        if level < cfg.stages:
            skips.append(t)
    for level in range(cfg.stages, 0, -1):
        t = ad.upsample_nearest2(t)
        t = ad.concat([t, skips[level - 1]], axis=1)
        t = act(conv(f"up{level}", t))
    return conv("head", t)


def encode_image(store: ParameterStore, prefix: str, cfg: UNetConfig, image: Tensor) -> Tensor:
    """Encode an (H, W, 3) image in [0, 1] to an (H, W, C_feat) grid."""
    planes = encode_image_planes(store, prefix, cfg, image)
    return ad.transpose(planes, (1, 2, 0))


def encode_image_planes(store: ParameterStore, prefix: str, cfg: UNetConfig, image: Tensor) -> Tensor:
    """Same as encode_image but channel-major (C_feat, H, W), the layout
    bilinear_sample consumes."""
    if image.data.ndim != 3 or image.data.shape[2] != cfg.in_channels:
        raise ShapeError("encode_image", f"expected (H, W, {cfg.in_channels}), got {image.data.shape}")
    h, w, c = image.data.shape
    x = ad.reshape(ad.transpose(image, (2, 0, 1)), (1, c, h, w))
    y = unet_forward(store, prefix, cfg, x)
    return ad.reshape(y, (cfg.out_channels, h, w))


# ---------------------------------------------------------------------------
# rowwise MLP


def init_mlp(store: ParameterStore, prefix: str, cfg: MlpConfig, rng: np.random.Generator):
    for i in range(len(cfg.widths) - 1):
        store.add(f"{prefix}.fc{i}.w", _he_linear(rng, cfg.widths[i], cfg.widths[i + 1]))
        store.add(f"{prefix}.fc{i}.b", np.zeros(cfg.widths[i + 1], np.float32))


def mlp_forward(store: ParameterStore, prefix: str, cfg: MlpConfig, rows: Tensor) -> Tensor:
    """(K, widths[0]) -> (K, widths[-1]); activation between affine maps,
    final layer linear.  Rows are independent."""
    if rows.data.ndim != 2 or rows.data.shape[1] != cfg.widths[0]:
        raise ShapeError("mlp_forward", f"expected (K, {cfg.widths[0]}), got {rows.data.shape}")
    acts = {
        "relu": ad.relu,
        "leaky_relu": lambda t: ad.leaky_relu(t, LEAKY_SLOPE),
        "tanh": ad.tanh,
    }
    act = acts[cfg.activation]
    t = rows
    last = len(cfg.widths) - 2
    for i in range(len(cfg.widths) - 1):
        t = ad.add_bias(ad.matmul(t, store[f"{prefix}.fc{i}.w"]), store[f"{prefix}.fc{i}.b"])
        if i != last:
            t = act(t)
    return t


# ---------------------------------------------------------------------------
# graph attention


def init_gat(store: ParameterStore, prefix: str, cfg: GatConfig, rng: np.random.Generator):
    for layer in range(cfg.layers):
        fan_in = cfg.input_width if layer == 0 else cfg.width
        for head in range(cfg.heads):
            store.add(f"{prefix}.l{layer}.h{head}.w", _he_linear(rng, fan_in, cfg.head_width))
            a = (rng.standard_normal(2 * cfg.head_width) * np.sqrt(1.0 / cfg.head_width)).astype(np.float32)
            store.add(f"{prefix}.l{layer}.h{head}.a", a)


def gat_layer_edges(store: ParameterStore, prefix: str, cfg: GatConfig, nodes: Tensor,
                    src: np.ndarray, dst: np.ndarray, num_nodes: int) -> Tensor:
    """Graph attention over an explicit edge list (many disjoint graphs at
    once).  Edge k carries node src[k]'s message to node dst[k]; dst must
    be nondecreasing (edges grouped by receiver).  Every node needs at
    least one incoming edge (a self-loop suffices)."""
    if nodes.data.ndim != 2 or nodes.data.shape[1] != cfg.input_width:
        raise ShapeError("gat_layer", f"expected (K, {cfg.input_width}) nodes, got {nodes.data.shape}")
    if num_nodes == 0 or nodes.data.shape[0] == 0:
        raise ShapeError("gat_layer", "empty node list")
    if nodes.data.shape[0] != num_nodes:
        raise ShapeError("gat_layer", f"{nodes.data.shape[0]} node rows vs num_nodes {num_nodes}")
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.shape != dst.shape or src.ndim != 1:
        raise ShapeError("gat_layer", f"edge lists {src.shape} vs {dst.shape}")
    if np.bincount(dst, minlength=num_nodes).min() < 1:
        raise ShapeError("gat_layer", "every node needs at least one incoming edge")
    t = nodes
    for layer in range(cfg.layers):
        heads = []
        for head in range(cfg.heads):
            w = store[f"{prefix}.l{layer}.h{head}.w"]
            a = store[f"{prefix}.l{layer}.h{head}.a"]
            hw = ad.matmul(t, w)  # (K, head_width)
            h_dst = ad.gather_rows(hw, dst)
            h_src = ad.gather_rows(hw, src)
            pair = ad.concat([h_dst, h_src], axis=1)  # [receiver, sender]
            logits = ad.reshape(ad.matmul(pair, ad.reshape(a, (2 * cfg.head_width, 1))), (len(src),))
            logits = ad.leaky_relu(logits, cfg.slope)
            # softmax over each receiver's incoming edges; detached max
            # keeps the exponentials in range without entering the graph
            shift = ad.detach(ad.segment_max(logits, dst, num_nodes))
            e = ad.exp(ad.sub(logits, ad.gather_rows(shift, dst)))
            denom = ad.segment_sum(e, dst, num_nodes)
            alpha = ad.div(e, ad.gather_rows(denom, dst))
            heads.append(ad.segment_sum(ad.mul_rows(h_src, alpha), dst, num_nodes))
        t = ad.concat(heads, axis=1)
    return t


def complete_graph_edges(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Complete digraph with self-loops on k nodes, receiver-major order."""
    dst = np.repeat(np.arange(k, dtype=np.int64), k)
    src = np.tile(np.arange(k, dtype=np.int64), k)
    return src, dst


def gat_layer(store: ParameterStore, prefix: str, cfg: GatConfig, nodes: Tensor) -> Tensor:
    """Attention over the complete graph with self-loops on one node set."""
    k = nodes.data.shape[0] if nodes.data.ndim == 2 else 0
    if k == 0:
        raise ShapeError("gat_layer", "empty node list")
    src, dst = complete_graph_edges(k)
    return gat_layer_edges(store, prefix, cfg, nodes, src, dst, k)


# ---------------------------------------------------------------------------
# residual render stack


def render_unet_config(feat_channels: int, base_width: int, stages: int, out_channels: int) -> UNetConfig:
    return UNetConfig(in_channels=feat_channels, base_width=base_width,
                      stages=stages, out_channels=out_channels)


def init_render_stack(store: ParameterStore, prefix: str, feat_channels: int,
                      base_width: int, stages: int, num_stages: int, rng: np.random.Generator):
    """Register `num_stages` U-Nets; all but the last map features back to
    features with zero-initialized heads, so the fresh stack is a pure
    pass-through into the final RGB U-Net."""
    if num_stages < 1:
        raise ConfigError(f"render stack needs >= 1 stage, got {num_stages}")
    for i in range(1, num_stages + 1):
        out_c = feat_channels if i < num_stages else 3
        cfg = render_unet_config(feat_channels, base_width, stages, out_c)
        init_unet(store, f"{prefix}.stage{i}", cfg, rng, zero_head=(i < num_stages))


def render_features(store: ParameterStore, prefix: str, feat_channels: int,
                    base_width: int, stages: int, num_stages: int, grid: Tensor) -> Tensor:
    """(H, W, C_feat) feature grid -> (H, W, 3) image in (0, 1).

    Stage i refines the running sum: with r_1 = stage_1(G) and
    r_i = stage_i(G + r_{i-1}), the output is sigmoid(stage_L(G + r_{L-1})).
    """
    if grid.data.ndim != 3 or grid.data.shape[2] != feat_channels:
        raise ShapeError("render_features", f"expected (H, W, {feat_channels}), got {grid.data.shape}")
    h, w, c = grid.data.shape
    g = ad.reshape(ad.transpose(grid, (2, 0, 1)), (1, c, h, w))
    cfg_mid = render_unet_config(feat_channels, base_width, stages, feat_channels)
    cfg_out = render_unet_config(feat_channels, base_width, stages, 3)
    t = g
    for i in range(1, num_stages):
        residual = unet_forward(store, f"{prefix}.stage{i}", cfg_mid, t)
        t = ad.add(g, residual)
    rgb = unet_forward(store, f"{prefix}.stage{num_stages}", cfg_out, t)
    rgb = ad.sigmoid(rgb)
    return ad.transpose(ad.reshape(rgb, (3, h, w)), (1, 2, 0))
