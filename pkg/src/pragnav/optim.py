"""Adam with bias correction; updates are in-place and deterministic."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, params, grads):
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for name, t in params.items():
            g = grads[name]
            if g.shape != t.data.shape:
                raise ValueError(f"gradient shape mismatch for {name!r}: "
                                 f"{g.shape} vs {t.data.shape}")
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps))
            t.data -= update.astype(t.data.dtype, copy=False)
