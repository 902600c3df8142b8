"""Stacked GRU with a dense read-out, forward and backward passes in numpy.

Gate rows are stacked in the order update ``z``, reset ``r``, candidate ``n``::

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    n = tanh(Wn x + bn + r * (Un h))
    h' = (1 - z) * n + z * h
"""

from __future__ import annotations

import numpy as np


class NumericError(FloatingPointError):
    pass


def sigmoid(x):
    # split form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


def init_uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def gru_cell_forward(x_t, h_prev, W, U, b):
    """Single GRU step for one example or a batch.

    ``W`` is ``(3H, I)``, ``U`` is ``(3H, H)`` and ``b`` is ``(3H,)``.
    """
    _check_finite(x_t, "GRU input")
    H = U.shape[1]
    xp = x_t @ W.T + b
    hp = h_prev @ U.T
    z = sigmoid(xp[..., :H] + hp[..., :H])
    r = sigmoid(xp[..., H:2 * H] + hp[..., H:2 * H])
    n = np.tanh(xp[..., 2 * H:] + r * hp[..., 2 * H:])
    return (1 - z) * n + z * h_prev


class GruLayer:
    def __init__(self, input_size: int, hidden_size: int, rng=None):
        self.input_size = input_size
        self.hidden_size = hidden_size
        H, I = hidden_size, input_size
        if rng is None:
            self.W = np.zeros((3 * H, I))
            self.U = np.zeros((3 * H, H))
        else:
            self.W = init_uniform(rng, (3 * H, I), I)
            self.U = init_uniform(rng, (3 * H, H), H)
        self.b = np.zeros(3 * H)

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b}

    def forward(self, x, h0=None):
        """Run over ``x`` of shape ``(B, T, I)``; returns all hidden states and a cache."""
        B, T, _ = x.shape
        H = self.hidden_size
        h = np.zeros((B, H)) if h0 is None else h0
        xp = x @ self.W.T + self.b  # (B, T, 3H)
        Uzr, Un = self.U[: 2 * H].T, self.U[2 * H:].T
        hs = np.empty((B, T, H))
        zs = np.empty((B, T, H))
        rs = np.empty((B, T, H))
        ns = np.empty((B, T, H))
        hns = np.empty((B, T, H))
        h_prev = np.empty((B, T, H))
        for t in range(T):
            h_prev[:, t] = h
            gzr = sigmoid(xp[:, t, : 2 * H] + h @ Uzr)
            z, r = gzr[:, :H], gzr[:, H:]
            hn = h @ Un
            n = np.tanh(xp[:, t, 2 * H:] + r * hn)
            h = n + z * (h - n)
            zs[:, t], rs[:, t], ns[:, t], hns[:, t], hs[:, t] = z, r, n, hn, h
        return hs, (x, h_prev, zs, rs, ns, hns)

    def backward(self, dhs, cache):
        """BPTT given ``dL/dh_t`` from above for every step.

        Returns ``(grads, dx, dh0)``.
        """
        x, h_prev, zs, rs, ns, hns = cache
        B, T, H = dhs.shape
        U = self.U
        dxp = np.empty((B, T, 3 * H))
        dhp = np.empty((B, T, 3 * H))
        dh = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dh + dhs[:, t]
            z, r, n, hn = zs[:, t], rs[:, t], ns[:, t], hns[:, t]
            dz = dh * (h_prev[:, t] - n)
            dan = dh * (1 - z) * (1 - n * n)
            daz = dz * z * (1 - z)
            dar = dan * hn * r * (1 - r)
            dxp[:, t, :H] = daz
            dxp[:, t, H:2 * H] = dar
            dxp[:, t, 2 * H:] = dan
            dhp[:, t, :H] = daz
            dhp[:, t, H:2 * H] = dar
            dhp[:, t, 2 * H:] = dan * r
            dh = dh * z + dhp[:, t] @ U
        grads = {
            "W": np.einsum("btg,bti->gi", dxp, x),
            "U": np.einsum("btg,bth->gh", dhp, h_prev),
            "b": dxp.sum(axis=(0, 1)),
        }
        dx = dxp @ self.W
        return grads, dx, dh


class GruForecaster:
    """GRU stack whose final hidden state feeds a dense layer of ``n_out`` units."""

    kind = "gru"

    def __init__(self, n_features: int, hidden_sizes=(64, 64), n_out: int = 24, seed: int | None = 0):
        self.n_features = n_features
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.n_out = n_out
        self.seed = seed
        rng = None if seed is None else np.random.default_rng(seed)
        self.layers = []
        size = n_features
        for h in self.hidden_sizes:
            self.layers.append(GruLayer(size, h, rng))
            size = h
        if rng is None:
            self.Wd = np.zeros((n_out, size))
        else:
            self.Wd = init_uniform(rng, (n_out, size), size)
        self.bd = np.zeros(n_out)
        self.stats = None
        self.features: tuple[str, ...] = ()
        self.window: tuple[int, ...] = ()  # (in_len, out_len, out_res)

    @classmethod
    def zeros(cls, n_features, hidden_sizes=(64, 64), n_out=24):
        return cls(n_features, hidden_sizes, n_out, seed=None)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                out[f"gru{i}.{k}"] = v
        out["dense.W"] = self.Wd
        out["dense.b"] = self.bd
        return out

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.params()
        for k, v in params.items():
            if own[k].shape != v.shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {own[k].shape}")
            own[k][...] = v

    def architecture(self) -> dict:
        return {"kind": self.kind, "n_features": self.n_features,
                "hidden_sizes": list(self.hidden_sizes), "n_out": self.n_out}

    def _check(self, x):
        if x.ndim != 3 or x.shape[2] != self.n_features:
            raise ValueError(f"expected inputs (B, T, {self.n_features}), got {x.shape}")
        _check_finite(x, "model inputs")

    def forward(self, x, return_cache: bool = False):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 2
        if single:
            x = x[None]
        self._check(x)
        caches = []
        h = x
        for layer in self.layers:
            h, cache = layer.forward(h)
            caches.append(cache)
        last = h[:, -1]
        y = last @ self.Wd.T + self.bd
        if return_cache:
            return y, (caches, last, h.shape)
        return y[0] if single else y

    def predict(self, x, batch_size: int = 256):
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]) \
            if len(x) else np.zeros((0, self.n_out))

    def loss_and_grads(self, x, y):
        """MSE (mean over the batch of squared Euclidean error) and its gradients."""
        pred, (caches, last, shape) = self.forward(x, return_cache=True)
        B = len(pred)
        diff = pred - y
        loss = float(np.sum(diff**2) / B)
        dpred = 2 * diff / B
        grads = {"dense.W": dpred.T @ last, "dense.b": dpred.sum(axis=0)}
        dhs = np.zeros(shape)
        dhs[:, -1] = dpred @ self.Wd
        for i in range(len(self.layers) - 1, -1, -1):
            g, dhs, _ = self.layers[i].backward(dhs, caches[i])
            for k, v in g.items():
                grads[f"gru{i}.{k}"] = v
        return loss, grads


def mse_loss(pred, true) -> float:
    """Mean over examples of the squared Euclidean distance between output vectors."""
    pred = np.atleast_2d(pred)
    true = np.atleast_2d(true)
    return float(np.mean(np.sum((pred - true) ** 2, axis=-1)))
