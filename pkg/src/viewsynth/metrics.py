"""Image-fidelity metrics (PSNR, SSIM) and the held-out-view harness.

Conventions, pinned for reproducibility:
  - PSNR is computed over all RGB values jointly: 10*log10(1 / MSE) for
    images in [0, 1], capped at 99 dB so identical images stay finite.
  - SSIM runs on luma (0.299 R + 0.587 G + 0.114 B), single scale, with an
    11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, averaged
    over valid window centers only (no padding).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import ShapeError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def _check_pair(op: str, output, target) -> tuple[np.ndarray, np.ndarray]:
    o = np.asarray(output, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if o.shape != t.shape or o.ndim != 3 or o.shape[2] != 3:
        raise ShapeError(op, f"expected matching (H, W, 3) images, got "
                              f"{o.shape} vs {t.shape}")
    return o, t


def psnr(output, target) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, RGB-joint MSE."""
    o, t = _check_pair("psnr", output, target)
    mse = float(np.mean(np.square(o - t)))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def luma(image) -> np.ndarray:
    """(H, W, 3) -> (H, W) luma plane."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError("luma", f"expected (H, W, 3), got {img.shape}")
    return img @ LUMA_WEIGHTS


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(output, target) -> float:
    """Mean structural similarity over valid window centers."""
    o, t = _check_pair("ssim", output, target)
    h, w = o.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError("ssim", f"image {h}x{w} smaller than the "
                                 f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    x, y = luma(o), luma(t)
    k = _gaussian_window()

    def filt(img):
        return convolve2d(img, k, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    """Per-view scores plus scene means for a held-out evaluation."""

    view_ids: tuple
    psnr_values: tuple
    ssim_values: tuple

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    def to_csv(self) -> str:
        lines = ["view_id,psnr,ssim"]
        for vid, p, s in zip(self.view_ids, self.psnr_values, self.ssim_values):
            lines.append(f"{vid},{p:.6f},{s:.6f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        n = len(self.view_ids)
        return (f"{n} held-out view{'s' if n != 1 else ''}: "
                f"mean PSNR {self.mean_psnr:.2f} dB, "
                f"mean SSIM {self.mean_ssim:.4f}")


def evaluate_scene(bundle, cameras, images, view_ids=None) -> MetricReport:
    """Synthesize each held-out view, then score it against its ground truth.

    Synthesis never touches the ground-truth images; they are read once per
    view, for scoring only.
    """
    from .pipeline import synthesize_view
    cameras = list(cameras)
    if not cameras:
        raise ShapeError("evaluate_scene", "no held-out views to evaluate")
    if len(cameras) != len(images):
        raise ShapeError("evaluate_scene",
                         f"{len(cameras)} cameras vs {len(images)} images")
    if view_ids is None:
        view_ids = [f"{i:04d}" for i in range(len(cameras))]
    rendered = [synthesize_view(bundle, cam).image for cam in cameras]
    p_vals, s_vals = [], []
    for out, truth in zip(rendered, images):
        p_vals.append(psnr(out, truth))
        s_vals.append(ssim(out, truth))
    return MetricReport(view_ids=tuple(view_ids), psnr_values=tuple(p_vals),
                        ssim_values=tuple(s_vals))
