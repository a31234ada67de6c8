"""Adam over the model's named tensor dict. Steps ascend (objectives here
are lower bounds to maximize)."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .networks import ModelParams


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, model: ModelParams, grads: dict) -> ModelParams:
        """One ascent step; returns a new model, the input is untouched."""
        self._t += 1
        bc1 = 1.0 - self.beta1**self._t
        bc2 = 1.0 - self.beta2**self._t

        def update(name, value):
            g = np.asarray(grads[name], dtype=np.float64)
            m = self._m.get(name)
            v = self._v.get(name)
            m = (1.0 - self.beta1) * g if m is None else self.beta1 * m + (1.0 - self.beta1) * g
            v = (1.0 - self.beta2) * g * g if v is None else self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            return value + self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

        return model.map_arrays(update)
