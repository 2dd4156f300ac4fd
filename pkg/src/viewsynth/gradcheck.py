"""Finite-difference validation of analytic gradients.

The analytic side runs the function as the product does: float32 forward,
float32 backward.  The numeric side re-evaluates the function at float64
perturbed points (ops follow input dtype), so the central-difference
oracle accumulates in 64-bit and its noise floor sits far below the
tolerances used in tests.

Checks are only meaningful at generic points: callers must keep inputs
away from nondifferentiable boundaries (relu kinks, max ties, texel
edges, guard thresholds).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ShapeError


def grad_check(fn, point, step: float = 1e-3, tolerance: float | None = None,
               rng: np.random.Generator | None = None, max_coords: int | None = None,
               zero_atol: float = 0.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn takes len(point) tensors and returns a scalar tensor; point is a
    sequence of arrays giving the evaluation point.  Error per coordinate
    is |analytic - fd| / max(1e-8, |fd|); the max over all checked
    coordinates is returned (compare it against your tolerance, e.g. the
    1e-3 used throughout the test suite).  When max_coords is given, that
    many coordinates are sampled instead of sweeping every entry.

    zero_atol handles coordinates whose true derivative is structurally
    zero (e.g. a softmax shift direction): exact cancellation leaves
    ~1e-8 float32 residue on the analytic side, which the relative formula
    inflates past any tolerance.  When both sides are below zero_atol they
    are counted as agreeing; the default 0.0 disables this.
    """
    arrays = [np.ascontiguousarray(p, dtype=np.float32) for p in point]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*tensors)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ShapeError("grad_check", "function under test must return a scalar tensor")
    tape.backward(out)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    probes = [a.astype(np.float64) for a in arrays]

    def eval_at(args) -> float:
        res = fn(*[Tensor(a) for a in args])
        return float(res.data.reshape(()))

    coords = [(ti, fi) for ti, a in enumerate(arrays) for fi in range(a.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        keep = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(k)] for k in np.sort(keep)]

    worst = 0.0
    for ti, fi in coords:
        saved = probes[ti].flat[fi]
        probes[ti].flat[fi] = saved + step
        fp = eval_at(probes)
        probes[ti].flat[fi] = saved - step
        fm = eval_at(probes)
        probes[ti].flat[fi] = saved
        fd = (fp - fm) / (2.0 * step)
        a = float(analytic[ti].flat[fi])
        if abs(a) < zero_atol and abs(fd) < zero_atol:
            continue
        err = abs(a - fd) / max(1e-8, abs(fd))
        if err > worst:
            worst = err
    return worst
