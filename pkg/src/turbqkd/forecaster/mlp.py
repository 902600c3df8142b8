"""Fully connected baseline over the flattened input window."""

from __future__ import annotations

import numpy as np

from .gru import _check_finite, init_uniform


class MlpForecaster:
    """Dense ReLU network; input is the ``(T, F)`` window flattened time-major."""

    kind = "mlp"

    def __init__(self, n_features: int, in_len: int = 720, hidden_sizes=(1000, 1000), n_out: int = 24,
                 seed: int | None = 0):
        self.n_features = n_features
        self.in_len = in_len
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.n_out = n_out
        self.seed = seed
        rng = None if seed is None else np.random.default_rng(seed)
        sizes = [in_len * n_features, *self.hidden_sizes, n_out]
        self.weights, self.biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            self.weights.append(np.zeros((b, a)) if rng is None else init_uniform(rng, (b, a), a))
            self.biases.append(np.zeros(b))
        self.stats = None
        self.features: tuple[str, ...] = ()
        self.window: tuple[int, ...] = ()  # (in_len, out_len, out_res)

    @classmethod
    def zeros(cls, n_features, in_len=720, hidden_sizes=(1000, 1000), n_out=24):
        return cls(n_features, in_len, hidden_sizes, n_out, seed=None)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"fc{i}.W"] = W
            out[f"fc{i}.b"] = b
        return out

    def set_params(self, params):
        own = self.params()
        for k, v in params.items():
            if own[k].shape != v.shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {own[k].shape}")
            own[k][...] = v

    def architecture(self) -> dict:
        return {"kind": self.kind, "n_features": self.n_features, "in_len": self.in_len,
                "hidden_sizes": list(self.hidden_sizes), "n_out": self.n_out}

    def _flatten(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (self.in_len, self.n_features):
            raise ValueError(f"expected inputs (B, {self.in_len}, {self.n_features}), got {x.shape}")
        _check_finite(x, "model inputs")
        return x.reshape(len(x), -1)

    def forward(self, x, return_cache: bool = False):
        single = np.ndim(x) == 2
        a = self._flatten(x)
        acts = [a]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W.T + b
            if i < last:
                a = np.maximum(a, 0)
            acts.append(a)
        if return_cache:
            return a, acts
        return a[0] if single else a

    def predict(self, x, batch_size: int = 256):
        x = np.asarray(x, dtype=float)
        if not len(x):
            return np.zeros((0, self.n_out))
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def loss_and_grads(self, x, y):
        pred, acts = self.forward(x, return_cache=True)
        B = len(pred)
        diff = pred - y
        loss = float(np.sum(diff**2) / B)
        delta = 2 * diff / B
        grads = {}
        for i in range(len(self.weights) - 1, -1, -1):
            grads[f"fc{i}.W"] = delta.T @ acts[i]
            grads[f"fc{i}.b"] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i]) * (acts[i] > 0)
        return loss, grads


def build_mlp_baseline(n_features: int, in_len: int = 720, hidden=(1000, 1000), n_out: int = 24, seed: int = 0):
    return MlpForecaster(n_features, in_len, hidden, n_out, seed)
