"""Ablation harness: sweep one axis at a time and score held-out views.

Three axes, mirroring the model's main design choices:
  aggregator  weighted_mean / mlp / gat / gat_readout
  stages      render-stack stage count L
  regime      none (scene-agnostic only) / network_ft / scene_ft

Each setting trains with the same budget and seed, then reports mean
held-out PSNR/SSIM.  Results are plain rows; `rows_to_csv` renders the
comparison table (`axis,setting,psnr,ssim`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adam import AdamConfig
from .aggregate import VARIANTS, make_aggregator_config
from .errors import ConfigError
from .metrics import evaluate_scene
from .pipeline import ModelConfig, init_params, setup_scene
from .sceneio import load_scene
from .training import (TrainConfig, TrainScene, finetune_network,
                       finetune_scene, prepare_training_scene,
                       train_scene_agnostic)

REGIMES_AXIS = ("none", "network_ft", "scene_ft")


@dataclass(frozen=True)
class AblationConfig:
    pretrain_iterations: int = 200
    finetune_iterations: int = 120
    sources_per_step: int = 3
    lr: float = 3e-4
    seed: int = 0
    feat_channels: int = 8
    encoder_stages: int = 2
    encoder_base: int = 4
    render_stages: int = 3
    render_depth: int = 1
    render_base: int = 6
    variants: tuple = VARIANTS
    stage_counts: tuple = (1, 3)
    regimes: tuple = REGIMES_AXIS

    def __post_init__(self):
        bad = [r for r in self.regimes if r not in REGIMES_AXIS]
        if bad:
            raise ConfigError(f"unknown regime axis entries {bad}")


@dataclass(frozen=True)
class AblationRow:
    axis: str
    setting: str
    mean_psnr: float
    mean_ssim: float


def rows_to_csv(rows) -> str:
    lines = ["axis,setting,psnr,ssim"]
    for r in rows:
        lines.append(f"{r.axis},{r.setting},{r.mean_psnr:.6f},{r.mean_ssim:.6f}")
    return "\n".join(lines) + "\n"


def _model(cfg: AblationConfig, variant: str = "mlp",
           stages: int | None = None) -> ModelConfig:
    return ModelConfig(
        feat_channels=cfg.feat_channels,
        encoder_stages=cfg.encoder_stages, encoder_base=cfg.encoder_base,
        render_stages=cfg.render_stages if stages is None else stages,
        render_depth=cfg.render_depth, render_base=cfg.render_base,
        aggregator=make_aggregator_config(variant, cfg.feat_channels,
                                          hidden=(12,)))


def _train_cfg(cfg: AblationConfig, iterations: int,
               regime: str = "scene_agnostic") -> TrainConfig:
    return TrainConfig(iterations=iterations,
                       sources_per_step=cfg.sources_per_step, regime=regime,
                       seed=cfg.seed, adam=AdamConfig(lr=cfg.lr))


def _score(loaded, store, model_cfg: ModelConfig, images=None) -> tuple[float, float]:
    imgs = loaded.images if images is None else images
    bundle = setup_scene(imgs, loaded.cameras, loaded.mesh, store, model_cfg)
    report = evaluate_scene(bundle, loaded.heldout_cameras, loaded.heldout_images)
    return report.mean_psnr, report.mean_ssim


def _copy_store(store):
    from .params import ParameterStore
    out = ParameterStore()
    for name, t in store.items():
        out.add(name, t.data.copy())
    return out


def run_aggregator_axis(loaded, scene: TrainScene, cfg: AblationConfig,
                        log=None) -> list:
    rows = []
    for variant in cfg.variants:
        model_cfg = _model(cfg, variant=variant)
        result = train_scene_agnostic([scene], model_cfg,
                                      _train_cfg(cfg, cfg.pretrain_iterations))
        p, s = _score(loaded, result.store, model_cfg)
        rows.append(AblationRow("aggregator", variant, p, s))
        if log:
            log(f"aggregator={variant}: psnr {p:.2f} ssim {s:.4f}")
    return rows


def run_stage_axis(loaded, scene: TrainScene, cfg: AblationConfig,
                   log=None) -> list:
    rows = []
    for stages in cfg.stage_counts:
        model_cfg = _model(cfg, stages=stages)
        result = train_scene_agnostic([scene], model_cfg,
                                      _train_cfg(cfg, cfg.pretrain_iterations))
        p, s = _score(loaded, result.store, model_cfg)
        rows.append(AblationRow("stages", str(stages), p, s))
        if log:
            log(f"stages={stages}: psnr {p:.2f} ssim {s:.4f}")
    return rows


def run_regime_axis(loaded, scene: TrainScene, cfg: AblationConfig,
                    log=None) -> list:
    """One shared pretrain, then each fine-tuning regime from a copy of it."""
    model_cfg = _model(cfg)
    pre = train_scene_agnostic([scene], model_cfg,
                               _train_cfg(cfg, cfg.pretrain_iterations))
    rows = []
    for regime in cfg.regimes:
        if regime == "none":
            p, s = _score(loaded, pre.store, model_cfg)
        elif regime == "network_ft":
            store = _copy_store(pre.store)
            finetune_network(scene, store, model_cfg,
                             _train_cfg(cfg, cfg.finetune_iterations, regime))
            p, s = _score(loaded, store, model_cfg)
        else:
            store = _copy_store(pre.store)
            result = finetune_scene(scene, store, model_cfg,
                                    _train_cfg(cfg, cfg.finetune_iterations, regime))
            tuned = [entry.data for entry in result.pool.entries]
            p, s = _score(loaded, store, model_cfg, images=tuned)
        rows.append(AblationRow("regime", regime, p, s))
        if log:
            log(f"regime={regime}: psnr {p:.2f} ssim {s:.4f}")
    return rows


def run_all(loaded, cfg: AblationConfig = AblationConfig(), log=None) -> list:
    scene = prepare_training_scene(loaded.images, loaded.cameras, loaded.mesh,
                                   name=loaded.name)
    rows = []
    rows += run_aggregator_axis(loaded, scene, cfg, log=log)
    rows += run_stage_axis(loaded, scene, cfg, log=log)
    rows += run_regime_axis(loaded, scene, cfg, log=log)
    return rows


def run_ablations(scene_dir, out_csv=None,
                  cfg: AblationConfig = AblationConfig(), log=None) -> list:
    loaded = load_scene(scene_dir)
    rows = run_all(loaded, cfg, log=log)
    if out_csv is not None:
        with open(out_csv, "w", encoding="utf-8") as f:
            f.write(rows_to_csv(rows))
    return rows
