"""Minimal NCHW layers with hand-written backward passes.

Each layer registers its trainable arrays in a shared ``params`` dict under
dotted names and writes gradients into ``grads`` under the same keys.
Buffers (batch-norm running statistics) live in ``buffers``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(ValueError):
    pass


class Store:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        self.params[name] = np.asarray(value, dtype=self.dtype)
        self.grads[name] = np.zeros_like(self.params[name])
        return name

    def add_buffer(self, name, value):
        self.buffers[name] = np.asarray(value, dtype=self.dtype)
        return name

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)


class Conv2d:
    def __init__(self, store: Store, name: str, cin: int, cout: int, k: int,
                 stride: int = 1, pad: int = 0, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.s, self.k, self.stride, self.pad = store, k, stride, pad
        self.cin, self.cout = cin, cout
        std = np.sqrt(2.0 / (cin * k * k))
        self.w = store.add(f"{name}.weight", rng.normal(0.0, std, size=(cout, cin, k, k)))
        self.b = store.add(f"{name}.bias", np.zeros(cout))

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ShapeMismatch(f"conv expects {self.cin} channels, got shape {x.shape}")
        W, b = self.s.params[self.w], self.s.params[self.b]
        if self.k == 1 and self.stride == 1 and self.pad == 0:
            self._x = x
            out = np.tensordot(W[:, :, 0, 0], x, axes=([1], [1]))  # (cout, B, H, W)
            return out.transpose(1, 0, 2, 3) + b[None, :, None, None]
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (self.k, self.k), axis=(2, 3))[:, :, ::self.stride, ::self.stride]
        self._xshape, self._win = xp.shape, win
        out = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, cout)
        return out.transpose(0, 3, 1, 2) + b[None, :, None, None]

    def backward(self, dout):
        W = self.s.params[self.w]
        self.s.grads[self.b] += dout.sum(axis=(0, 2, 3))
        if self.k == 1 and self.stride == 1 and self.pad == 0:
            x = self._x
            self.s.grads[self.w][:, :, 0, 0] += np.tensordot(dout, x, axes=([0, 2, 3], [0, 2, 3]))
            return np.tensordot(W[:, :, 0, 0], dout, axes=([0], [1])).transpose(1, 0, 2, 3)
        win = self._win
        self.s.grads[self.w] += np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
        B, _, Ho, Wo = dout.shape
        dxp = np.zeros(self._xshape, dtype=dout.dtype)
        st = self.stride
        for i in range(self.k):
            for j in range(self.k):
                contrib = np.tensordot(W[:, :, i, j], dout, axes=([0], [1]))  # (cin, B, Ho, Wo)
                dxp[:, :, i:i + st * (Ho - 1) + 1:st, j:j + st * (Wo - 1) + 1:st] += contrib.transpose(1, 0, 2, 3)
        p = self.pad
        return dxp[:, :, p:dxp.shape[2] - p, p:dxp.shape[3] - p] if p else dxp


class BatchNorm2d:
    def __init__(self, store: Store, name: str, c: int, momentum: float = 0.1, eps: float = 1e-5):
        self.s, self.c, self.momentum, self.eps = store, c, momentum, eps
        self.g = store.add(f"{name}.gamma", np.ones(c))
        self.b = store.add(f"{name}.beta", np.zeros(c))
        self.rm = store.add_buffer(f"{name}.running_mean", np.zeros(c))
        self.rv = store.add_buffer(f"{name}.running_var", np.ones(c))

    def forward(self, x, train=True):
        if x.shape[1] != self.c:
            raise ShapeMismatch(f"batch norm expects {self.c} channels, got {x.shape[1]}")
        gamma, beta = self.s.params[self.g], self.s.params[self.b]
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            buf = self.s.buffers
            buf[self.rm] = ((1 - m) * buf[self.rm] + m * mean).astype(buf[self.rm].dtype)
            buf[self.rv] = ((1 - m) * buf[self.rv] + m * var).astype(buf[self.rv].dtype)
        else:
            mean, var = self.s.buffers[self.rm], self.s.buffers[self.rv]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self._xhat, self._inv = xhat, inv
        return gamma[None, :, None, None] * xhat + beta[None, :, None, None]

    def backward(self, dout):
        gamma = self.s.params[self.g]
        xhat, inv = self._xhat, self._inv
        self.s.grads[self.g] += (dout * xhat).sum(axis=(0, 2, 3))
        self.s.grads[self.b] += dout.sum(axis=(0, 2, 3))
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        dxhat = dout * gamma[None, :, None, None]
        s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
        return (inv[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)


class ReLU:
    def forward(self, x, train=True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool2d:
    """Non-overlapping k x k max pooling; trailing rows/cols that do not fill a window are dropped."""

    def __init__(self, k: int = 2):
        self.k = k

    def forward(self, x, train=True):
        k = self.k
        B, C, H, W = x.shape
        Ho, Wo = H // k, W // k
        self._shape = x.shape
        xc = x[:, :, :Ho * k, :Wo * k].reshape(B, C, Ho, k, Wo, k).transpose(0, 1, 2, 4, 3, 5)
        flat = xc.reshape(B, C, Ho, Wo, k * k)
        self._arg = flat.argmax(axis=-1)
        return np.take_along_axis(flat, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        k = self.k
        B, C, H, W = self._shape
        Ho, Wo = H // k, W // k
        flat = np.zeros((B, C, Ho, Wo, k * k), dtype=dout.dtype)
        np.put_along_axis(flat, self._arg[..., None], dout[..., None], axis=-1)
        dx = np.zeros(self._shape, dtype=dout.dtype)
        dx[:, :, :Ho * k, :Wo * k] = flat.reshape(B, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * k, Wo * k)
        return dx


class GlobalAvgPool:
    def forward(self, x, train=True):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        B, C, H, W = self._shape
        return np.broadcast_to(dout[:, :, None, None] / (H * W), self._shape).copy()


class Linear:
    def __init__(self, store: Store, name: str, fin: int, fout: int, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.s, self.fin = store, fin
        self.w = store.add(f"{name}.weight", rng.normal(0.0, np.sqrt(1.0 / fin), size=(fout, fin)))
        self.b = store.add(f"{name}.bias", np.zeros(fout))

    def forward(self, x, train=True):
        if x.shape[-1] != self.fin:
            raise ShapeMismatch(f"linear expects {self.fin} features, got {x.shape[-1]}")
        self._x = x
        return x @ self.s.params[self.w].T + self.s.params[self.b]

    def backward(self, dout):
        self.s.grads[self.w] += dout.T @ self._x
        self.s.grads[self.b] += dout.sum(axis=0)
        return dout @ self.s.params[self.w]


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return float(loss), d / n
