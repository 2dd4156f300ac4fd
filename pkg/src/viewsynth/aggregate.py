"""View-dependent fusion of per-source ray features at surface points.

Each surface point seen by the target camera carries K rays, one per source
camera that observes the point: a unit direction v_k from source camera k to
the point, and a feature vector f_k sampled from that source's encoded
feature map.  Together with the target view direction u, an aggregator fuses
the set {(v_k, f_k)} into a single feature vector g.  Four variants:

  weighted_mean  g = sum_k max(0, u.v_k) f_k / sum_k max(0, u.v_k)
  mlp            g = pool_k MLP([u, v_k, f_k])
  gat            graph attention over nodes [u, v_k, f_k] (complete graph
                 with self-loops), pooled over nodes
  gat_readout    node 0 = [u, g'] with g' the weighted mean, nodes 1..K =
                 [v_k, f_k]; g = attention output at node 0

All variants map K = 0 (point seen by no source) to the zero vector, and are
invariant to the order rays arrive in: rows are canonicalized by source index
and every reduction runs in a fixed order, so permuting the input reproduces
the output bit for bit.

The batched entry point `aggregate_rows` fuses many points at once from a
flat ray table (rows grouped by point, sorted by source index within each
point); `aggregate` wraps it for a single point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import (GatConfig, MlpConfig, gat_layer_edges, init_gat,
                     init_mlp, mlp_forward)
from .errors import ConfigError, ShapeError
from .geometry import RayFeatureSet

VARIANTS = ("weighted_mean", "mlp", "gat", "gat_readout")
POOLINGS = ("mean", "max")

# a total source weight at or below this is treated as vanishing and the
# aggregate is the zero vector instead of a near-overflow quotient
WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class AggregatorConfig:
    """Which fusion rule to use and the shapes it operates on.

    pooling applies exactly to the set-pooled variants (mlp, gat); the
    weighted mean has a fixed rule and gat_readout reads a dedicated node.
    """

    variant: str
    feat_channels: int
    pooling: str | None = None
    mlp: MlpConfig | None = None
    gat: GatConfig | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown aggregator variant {self.variant!r}; pick from {VARIANTS}")
        if self.feat_channels < 1:
            raise ConfigError("feat_channels must be positive")
        pooled = self.variant in ("mlp", "gat")
        if pooled != (self.pooling is not None):
            raise ConfigError("pooling must be set for mlp/gat variants and absent otherwise")
        if self.pooling is not None and self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}; pick from {POOLINGS}")
        if (self.variant == "mlp") != (self.mlp is not None):
            raise ConfigError("mlp config must be set exactly for the mlp variant")
        if (self.variant in ("gat", "gat_readout")) != (self.gat is not None):
            raise ConfigError("gat config must be set exactly for the gat variants")
        c = self.feat_channels
        if self.mlp is not None:
            if self.mlp.widths[0] != c + 6 or self.mlp.widths[-1] != c:
                raise ConfigError(
                    f"mlp must map width {c + 6} ([u, v, f] rows) to {c}, got {self.mlp.widths}")
        if self.gat is not None:
            node_w = c + 6 if self.variant == "gat" else c + 3
            if self.gat.input_width != node_w or self.gat.width != c:
                raise ConfigError(
                    f"gat must map width {node_w} nodes to {c}, got "
                    f"{self.gat.input_width} -> {self.gat.width}")


@dataclass
class AggregatedFeature:
    """Fused feature at one surface point and how many rays produced it."""

    g: np.ndarray  # (feat_channels,) float32
    count: int


def make_aggregator_config(variant: str = "mlp", feat_channels: int = 32,
                           pooling: str | None = None, hidden: tuple = (64,),
                           heads: int = 2, layers: int = 1) -> AggregatorConfig:
    """Build a consistent config; pooling defaults to mean where it applies."""
    c = feat_channels
    if variant == "weighted_mean":
        return AggregatorConfig(variant, c)
    if variant == "mlp":
        widths = (c + 6,) + tuple(hidden) + (c,)
        return AggregatorConfig(variant, c, pooling=pooling or "mean",
                                mlp=MlpConfig(widths, activation="relu"))
    if variant == "gat":
        return AggregatorConfig(variant, c, pooling=pooling or "mean",
                                gat=GatConfig(width=c, heads=heads, layers=layers, in_width=c + 6))
    if variant == "gat_readout":
        return AggregatorConfig(variant, c,
                                gat=GatConfig(width=c, heads=heads, layers=layers, in_width=c + 3))
    raise ConfigError(f"unknown aggregator variant {variant!r}; pick from {VARIANTS}")


def init_aggregator(store, prefix: str, config: AggregatorConfig, rng: np.random.Generator):
    """Register the variant's parameters (none for weighted_mean)."""
    if config.variant == "mlp":
        init_mlp(store, f"{prefix}.mlp", config.mlp, rng)
    elif config.variant in ("gat", "gat_readout"):
        init_gat(store, f"{prefix}.gat", config.gat, rng)


# ---------------------------------------------------------------------------
# batched core


def _check_table(config, features, dirs, view_dirs, seg, num_points):
    if not isinstance(features, Tensor):
        raise ShapeError("aggregate", "features must be a Tensor")
    m = features.data.shape[0] if features.data.ndim == 2 else -1
    if features.data.ndim != 2 or features.data.shape[1] != config.feat_channels:
        raise ShapeError("aggregate",
                         f"expected (M, {config.feat_channels}) features, got {features.data.shape}")
    if dirs.shape != (m, 3):
        raise ShapeError("aggregate", f"expected ({m}, 3) ray directions, got {dirs.shape}")
    if view_dirs.shape != (num_points, 3):
        raise ShapeError("aggregate",
                         f"expected ({num_points}, 3) view directions, got {view_dirs.shape}")
    if seg.shape != (m,):
        raise ShapeError("aggregate", f"expected ({m},) point ids, got {seg.shape}")


def _positive_weights(u_rows: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, (u_rows * dirs).sum(axis=1)).astype(np.float32)


def _weighted_mean_rows(features: Tensor, u_rows: np.ndarray, dirs: np.ndarray,
                        seg: np.ndarray, num_points: int) -> Tensor:
    w = ad.constant(_positive_weights(u_rows, dirs))
    num = ad.segment_sum(ad.mul_rows(features, w), seg, num_points)
    den = ad.segment_sum(w, seg, num_points)
    return ad.mul_rows(num, ad.guarded_reciprocal(den, WEIGHT_FLOOR))


def _pool(pooling: str, rows: Tensor, seg: np.ndarray, num_points: int) -> Tensor:
    if pooling == "mean":
        return ad.segment_mean(rows, seg, num_points)
    return ad.segment_max(rows, seg, num_points)


def _complete_graphs(seg: np.ndarray, num_segments: int):
    """Edge lists of a complete graph with self-loops over each segment's
    rows, receiver-major with senders ascending: deterministic and identical
    however the segments were assembled."""
    counts = np.bincount(seg, minlength=num_segments)
    starts = np.searchsorted(seg, np.arange(num_segments))
    dst_parts, src_parts = [], []
    for k in np.unique(counts):
        if k == 0:
            continue
        pat_dst = np.repeat(np.arange(k, dtype=np.int64), k)
        pat_src = np.tile(np.arange(k, dtype=np.int64), k)
        s = starts[counts == k]
        dst_parts.append((s[:, None] + pat_dst[None, :]).ravel())
        src_parts.append((s[:, None] + pat_src[None, :]).ravel())
    dst = np.concatenate(dst_parts)
    src = np.concatenate(src_parts)
    order = np.lexsort((src, dst))
    return src[order], dst[order]


def aggregate_rows(config: AggregatorConfig, store, features: Tensor,
                   dirs: np.ndarray, view_dirs: np.ndarray, seg: np.ndarray,
                   num_points: int, prefix: str = "aggr") -> Tensor:
    """Fuse a flat ray table into one feature row per point.

    features: (M, C) rows f_k; dirs: (M, 3) unit v_k; view_dirs: (P, 3) unit
    u per point; seg: (M,) nondecreasing point ids.  Rows must be sorted by
    source index within each point (the canonical order); gradients flow to
    features and parameters.  Points with no rows get zero rows.
    """
    dirs = np.ascontiguousarray(dirs, dtype=np.float32)
    view_dirs = np.ascontiguousarray(view_dirs, dtype=np.float32)
    seg = np.asarray(seg, dtype=np.int64)
    _check_table(config, features, dirs, view_dirs, seg, num_points)
    m = seg.shape[0]
    c = config.feat_channels
    u_rows = view_dirs[seg]

    if config.variant == "weighted_mean":
        return _weighted_mean_rows(features, u_rows, dirs, seg, num_points)

    if m == 0:
        return ad.constant(np.zeros((num_points, c), dtype=np.float32))

    if config.variant == "mlp":
        rows = ad.concat([ad.constant(u_rows), ad.constant(dirs), features], axis=1)
        hidden = mlp_forward(store, f"{prefix}.mlp", config.mlp, rows)
        return _pool(config.pooling, hidden, seg, num_points)

    if config.variant == "gat":
        nodes = ad.concat([ad.constant(u_rows), ad.constant(dirs), features], axis=1)
        src, dst = _complete_graphs(seg, num_points)
        out = gat_layer_edges(store, f"{prefix}.gat", config.gat, nodes, src, dst, m)
        return _pool(config.pooling, out, seg, num_points)

    # gat_readout: prepend a readout node [u, g'] to each nonempty point's
    # rows [v_k, f_k] and run attention over the K+1-node complete graph
    counts = np.bincount(seg, minlength=num_points)
    starts = np.searchsorted(seg, np.arange(num_points))
    nonempty = np.flatnonzero(counts > 0)
    p1 = nonempty.shape[0]
    g_prime = _weighted_mean_rows(features, u_rows, dirs, seg, num_points)
    readout_rows = ad.concat(
        [ad.constant(view_dirs[nonempty]), ad.gather_rows(g_prime, nonempty)], axis=1)
    source_rows = ad.concat([ad.constant(dirs), features], axis=1)
    stacked = ad.concat([readout_rows, source_rows], axis=0)
    # interleave: point block = [readout, its source rows]; the r-th nonempty
    # point's block starts at starts[p] + r (one extra node per prior block)
    pos0 = starts[nonempty] + np.arange(p1, dtype=np.int64)
    perm = np.empty(p1 + m, dtype=np.int64)
    perm[pos0] = np.arange(p1, dtype=np.int64)
    rest = np.ones(p1 + m, dtype=bool)
    rest[pos0] = False
    perm[rest] = p1 + np.arange(m, dtype=np.int64)
    nodes = ad.gather_rows(stacked, perm)
    node_seg = np.repeat(np.arange(p1, dtype=np.int64), counts[nonempty] + 1)
    src, dst = _complete_graphs(node_seg, p1)
    out = gat_layer_edges(store, f"{prefix}.gat", config.gat, nodes, src, dst, p1 + m)
    picked = ad.gather_rows(out, pos0)
    # scatter back to one row per point, zeros where no rays landed
    padded = ad.concat([ad.constant(np.zeros((1, c), dtype=np.float32)), picked], axis=0)
    back = np.zeros(num_points, dtype=np.int64)
    back[nonempty] = 1 + np.arange(p1, dtype=np.int64)
    return ad.gather_rows(padded, back)


# ---------------------------------------------------------------------------
# single-point surface


def _single_point_rows(config, store, rays: RayFeatureSet, prefix: str) -> Tensor:
    order = np.argsort(np.asarray(rays.source_indices), kind="stable")
    feats = rays.features
    if isinstance(feats, Tensor):
        feats = ad.gather_rows(feats, order)
    else:
        feats = ad.constant(np.asarray(feats, dtype=np.float32)[order])
    dirs = np.asarray(rays.directions, dtype=np.float64)[order]
    u = np.asarray(rays.u, dtype=np.float64)[None, :]
    seg = np.zeros(order.shape[0], dtype=np.int64)
    return aggregate_rows(config, store, feats, dirs, u, seg, 1, prefix)


def aggregate(config: AggregatorConfig, store, rays: RayFeatureSet,
              prefix: str = "aggr") -> AggregatedFeature:
    """Fuse one point's rays with the configured variant.

    Rays are canonicalized by source index first, so any arrival order gives
    the bit-identical result.  K = 0 gives the zero vector.
    """
    k = int(np.asarray(rays.source_indices).shape[0])
    if k == 0:
        return AggregatedFeature(np.zeros(config.feat_channels, dtype=np.float32), 0)
    g = _single_point_rows(config, store, rays, prefix)
    return AggregatedFeature(g.data[0].copy(), k)


def aggregate_weighted_mean(rays: RayFeatureSet, feat_channels: int) -> AggregatedFeature:
    """Positive-dot weighted average of source features (no parameters)."""
    return aggregate(AggregatorConfig("weighted_mean", feat_channels), None, rays)
