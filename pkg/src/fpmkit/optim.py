"""Adam and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, state)``; inputs are not mutated."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        out[k] = p - lr * mhat / (np.sqrt(vhat) + eps)
    return out, state


@dataclass
class PlateauScheduler:
    """Multiply the LR by ``factor`` after ``patience`` epochs without improvement.

    An epoch improves when its loss beats the best so far by more than
    ``min_delta``. The LR never drops below ``min_lr``.
    """

    lr: float
    factor: float = 0.1
    patience: int = 10
    min_delta: float = 1e-4
    min_lr: float = 1e-7
    best: float = float("inf")
    bad_epochs: int = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr
