"""Adam optimizer over a ParameterStore, bias-corrected, float32 state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .params import ParameterStore


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.9999
    eps: float = 1e-8


class Adam:
    """Keeps first/second moments per parameter name; one step at a time.

    Parameters appearing in later steps (none in practice; the store is
    fixed before training) are not supported: the moment tables are built
    once from the store at construction.
    """

    def __init__(self, store: ParameterStore, config: AdamConfig = AdamConfig()):
        self.config = config
        self.t = 0
        self._m = {name: np.zeros_like(store[name].data) for name in store.names()}
        self._v = {name: np.zeros_like(store[name].data) for name in store.names()}

    def step(self, store: ParameterStore, grads: dict) -> None:
        """Apply one update from a {name: gradient array} mapping."""
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name in self._m:
            if name not in grads:
                raise ShapeError("adam_step", f"missing gradient for parameter {name!r}")
            g = np.asarray(grads[name], dtype=np.float32)
            p = store[name]
            if g.shape != p.data.shape:
                raise ShapeError("adam_step",
                                 f"gradient shape {g.shape} vs parameter {p.data.shape}"
                                 f" for {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * np.square(g)
            update = (c.lr / bc1) * m / (np.sqrt(v / bc2) + c.eps)
            p.data -= update

    def moments(self, name: str):
        return self._m[name], self._v[name]
