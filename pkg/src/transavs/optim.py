"""Adaptive-moment optimizer with decoupled weight decay.

Per parameter: biased first/second moment accumulators with bias
correction, then p -= lr_eff * (m_hat / (sqrt(v_hat) + eps)) followed by
the decoupled decay p -= lr_eff * wd * p. A prefix-to-multiplier map
scales the learning rate per parameter group; parameters without a grad
buffer step by the decay term only.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


class AdamW:
    def __init__(self, params: dict[str, T.Tensor], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4,
                 lr_scales: dict[str, float] | None = None):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.lr_scales = dict(lr_scales or {})
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def lr_for(self, name: str) -> float:
        for prefix, scale in self.lr_scales.items():
            if name.startswith(prefix):
                return self.lr * scale
        return self.lr

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            lr_eff = self.lr_for(name)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= lr_eff * update
            p.data -= lr_eff * self.weight_decay * p.data

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict:
        return {"step": self.step_count,
                "m": {k: a.copy() for k, a in self.m.items()},
                "v": {k: a.copy() for k, a in self.v.items()}}

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for k in self.params:
            if k not in state["m"] or k not in state["v"]:
                raise ValueError(f"optimizer state missing moments for {k!r}")
            self.m[k] = np.array(state["m"][k])
            self.v[k] = np.array(state["v"][k])
