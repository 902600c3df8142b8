"""Adam and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    t = state.step
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    for k in sorted(params):
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without an improvement larger than ``threshold`` (absolute)."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 15, threshold: float = 1e-5,
                 min_lr: float = 0.0):
        if not 0 < factor < 1:
            raise ValueError("reduction factor must lie in (0, 1)")
        if patience < 1 or lr <= 0:
            raise ValueError("patience and learning rate must be positive")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = np.inf
        self.wait = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; returns True if the rate was cut."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            self.wait = 0
            new = max(self.lr * self.factor, self.min_lr)
            changed = new < self.lr
            self.lr = new
            return changed
        return False

    def state_dict(self) -> dict:
        return {"lr": self.lr, "best": self.best, "wait": self.wait}

    def load_state_dict(self, d: dict) -> None:
        self.lr, self.best, self.wait = float(d["lr"]), float(d["best"]), int(d["wait"])
