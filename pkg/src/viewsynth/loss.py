"""Training loss: photometric L1 plus a multi-scale feature-difference term.

The feature maps come from a fixed bank of random 3x3 convolutions at three
scales (widths 16/32/64 at overall strides 1/2/4; the stride-4 bank chains
two stride-2 convolutions so its receptive field actually covers the skipped
pixels).  The bank is seed-pinned and frozen: the same filters for every
call, never trained, so the loss is a fixed function.  Each term is a mean
of absolute differences; the scale weights default to 1.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

FILTER_BANK_SEED = 770
DEFAULT_LAMBDAS = (1.0, 1.0, 1.0)

_BANK = None


def _he(rng, cout, cin, k=3):
    w = rng.standard_normal((cout, cin, k, k)) * np.sqrt(2.0 / (cin * k * k))
    return ad.constant(w.astype(np.float32))


def _filter_bank():
    """(lazy, cached) the frozen convolution weights of the three scales."""
    global _BANK
    if _BANK is None:
        rng = np.random.default_rng(FILTER_BANK_SEED)
        _BANK = {
            "s1": _he(rng, 16, 3),
            "s2": _he(rng, 32, 3),
            "s4a": _he(rng, 32, 3),
            "s4b": _he(rng, 64, 32),
        }
    return _BANK


def _nchw(img: Tensor) -> Tensor:
    h, w, c = img.data.shape
    return ad.reshape(ad.transpose(img, (2, 0, 1)), (1, c, h, w))


def feature_stack(img: Tensor) -> list:
    """The three frozen feature maps of an (H, W, 3) image."""
    bank = _filter_bank()
    x = _nchw(img)
    f1 = ad.leaky_relu(ad.conv2d(x, bank["s1"], stride=1, pad=1))
    f2 = ad.leaky_relu(ad.conv2d(x, bank["s2"], stride=2, pad=1))
    h4 = ad.leaky_relu(ad.conv2d(x, bank["s4a"], stride=2, pad=1))
    f4 = ad.leaky_relu(ad.conv2d(h4, bank["s4b"], stride=2, pad=1))
    return [f1, f2, f4]


def loss_image(output: Tensor, target, lambdas=DEFAULT_LAMBDAS) -> Tensor:
    """Mean-L1 photometric term plus weighted mean-L1 feature terms."""
    if not isinstance(target, Tensor):
        target = ad.constant(np.asarray(target, dtype=np.float32))
    if output.data.shape != target.data.shape or output.data.ndim != 3 \
            or output.data.shape[2] != 3:
        raise ShapeError("loss_image",
                         f"expected matching (H, W, 3) images, got "
                         f"{output.data.shape} vs {target.data.shape}")
    if len(lambdas) != 3:
        raise ShapeError("loss_image", f"expected 3 scale weights, got {len(lambdas)}")
    total = ad.reduce_mean(ad.absolute(ad.sub(output, target)))
    fo = feature_stack(output)
    ft = feature_stack(target)
    for lam, a, b in zip(lambdas, fo, ft):
        if lam == 0.0:
            continue
        term = ad.reduce_mean(ad.absolute(ad.sub(a, b)))
        total = ad.add(total, ad.scale(term, float(lam)))
    return total
