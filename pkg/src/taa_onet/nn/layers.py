"""Layers with hand-written forward and reverse passes.

A layer owns no parameter storage. ``forward(params, x)`` receives a list of
parameter views (in the order of ``param_shapes``) and returns the output and
a cache; ``backward(params, cache, dy, need_dx)`` returns the input gradient
(``None`` when ``need_dx`` is false) and a list of parameter gradients in the
same order.

Image tensors are channels-last, ``(N, H, W, C)``; dense tensors are ``(N, features)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import StructuralError

ACTIVATIONS = ("tanh", "identity")


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(y: np.ndarray, dy: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        g = y * y
        np.subtract(1.0, g, out=g)
        g *= dy
        return g
    return dy


def _check_activation(kind: str) -> None:
    if kind not in ACTIVATIONS:
        raise StructuralError(f"unsupported activation {kind!r}; choose from {ACTIVATIONS}")


def xavier_bound(fan_in: int, fan_out: int) -> float:
    if fan_in < 1 or fan_out < 1:
        raise StructuralError("fan_in and fan_out must be at least 1")
    return math.sqrt(6.0 / (fan_in + fan_out))


def xavier_init(shape, rng, fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    """Glorot-uniform weights; fans default to the last two axes of ``shape``."""
    shape = tuple(int(s) for s in shape)
    if fan_in is None or fan_out is None:
        fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    bound = xavier_bound(fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind = "layer"

    def param_shapes(self) -> list[tuple[int, ...]]:
        return []

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def init_params(self, rng) -> list[np.ndarray]:
        return []

    def spec(self) -> dict:
        return {"kind": self.kind}


@dataclass
class Dense(Layer):
    """``y = act(x W^T + b)`` with ``W`` of shape ``(out, in)``."""

    n_in: int
    n_out: int
    activation: str = "tanh"
    kind = "dense"

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise StructuralError("dense layer sizes must be positive")
        _check_activation(self.activation)

    def param_shapes(self):
        return [(self.n_out, self.n_in), (self.n_out,)]

    def out_shape(self, in_shape):
        if tuple(in_shape) != (self.n_in,):
            raise StructuralError(f"dense layer expects ({self.n_in},), got {tuple(in_shape)}")
        return (self.n_out,)

    def init_params(self, rng):
        return [xavier_init((self.n_out, self.n_in), rng, self.n_in, self.n_out), np.zeros(self.n_out)]

    def forward(self, params, x):
        w, b = params
        y = _activate(x @ w.T + b, self.activation)
        return y, (x, y)

    def backward(self, params, cache, dy, need_dx=True):
        w, _ = params
        x, y = cache
        dz = _activation_grad(y, dy, self.activation)
        return (dz @ w if need_dx else None), [dz.T @ x, dz.sum(axis=0)]

    def spec(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}


def conv_out_size(n: int, kernel: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - kernel) // stride + 1


@dataclass
class Conv2D(Layer):
    """Cross-correlation with zero padding, weights ``(F, kh, kw, C)``."""

    in_channels: int
    filters: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    pad: int = 0
    activation: str = "tanh"
    kind = "conv2d"

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)
        if min(self.in_channels, self.filters, self.stride, *self.kernel) < 1 or self.pad < 0:
            raise StructuralError("convolution sizes must be positive and padding non-negative")
        _check_activation(self.activation)

    def param_shapes(self):
        return [(self.filters, *self.kernel, self.in_channels), (self.filters,)]

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_channels:
            raise StructuralError(f"conv layer expects (H, W, {self.in_channels}), got {tuple(in_shape)}")
        kh, kw = self.kernel
        ho = conv_out_size(in_shape[0], kh, self.stride, self.pad)
        wo = conv_out_size(in_shape[1], kw, self.stride, self.pad)
        if ho < 1 or wo < 1:
            raise StructuralError(f"conv layer output would be empty for input {tuple(in_shape)}")
        return (ho, wo, self.filters)

    def init_params(self, rng):
        kh, kw = self.kernel
        fan_in = self.in_channels * kh * kw
        fan_out = self.filters * kh * kw
        return [xavier_init(self.param_shapes()[0], rng, fan_in, fan_out), np.zeros(self.filters)]

    def _taps(self, ho, wo):
        s = self.stride
        kh, kw = self.kernel
        for i in range(kh):
            for j in range(kw):
                yield (slice(None), slice(i, i + s * ho, s), slice(j, j + s * wo, s))

    def forward(self, params, x):
        w, b = params
        p = self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        ho, wo, _ = self.out_shape(x.shape[1:])
        s = self.stride
        # im2col with columns ordered (kh, kw, C) to match the weight layout
        win = sliding_window_view(xp, self.kernel, axis=(1, 2))[:, ::s, ::s]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, w[0].size)
        y = _activate(cols @ w.reshape(self.filters, -1).T + b, self.activation)
        return y.reshape(x.shape[0], ho, wo, self.filters), (cols, y, xp.shape)

    def backward(self, params, cache, dy, need_dx=True):
        w, _ = params
        cols, y, xp_shape = cache
        dz = _activation_grad(y, dy.reshape(y.shape), self.activation)
        dw = (dz.T @ cols).reshape(w.shape)
        db = dz.sum(axis=0)
        if not need_dx:
            return None, [dw, db]
        n, ho, wo = dy.shape[:3]
        c, p = self.in_channels, self.pad
        dcols = (dz @ w.reshape(self.filters, -1)).reshape(n, ho, wo, -1, c)
        dxp = np.zeros(xp_shape)
        for t, sl in enumerate(self._taps(ho, wo)):
            dxp[sl] += dcols[:, :, :, t, :]
        dx = dxp[:, p : xp_shape[1] - p, p : xp_shape[2] - p, :] if p else dxp
        return dx, [dw, db]

    def spec(self):
        return {
            "kind": self.kind, "in_channels": self.in_channels, "filters": self.filters,
            "kernel": list(self.kernel), "stride": self.stride, "pad": self.pad, "activation": self.activation,
        }


@dataclass
class MaxPool(Layer):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""

    window: int = 2
    kind = "maxpool"

    def __post_init__(self):
        if self.window < 1:
            raise StructuralError("pool window must be positive")

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise StructuralError(f"max pool expects (H, W, C), got {tuple(in_shape)}")
        h, w, c = in_shape
        k = self.window
        if h < k or w < k:
            raise StructuralError(f"pool window {k} larger than input {tuple(in_shape)}")
        return (h // k, w // k, c)

    def _taps(self, x):
        k = self.window
        ho, wo = x.shape[1] // k, x.shape[2] // k
        for a in range(k):
            for b in range(k):
                yield (slice(None), slice(a, ho * k, k), slice(b, wo * k, k))

    def forward(self, params, x):
        taps = list(self._taps(x))
        out = x[taps[0]].copy()
        for sl in taps[1:]:
            np.maximum(out, x[sl], out=out)
        return out, (x, out)

    def backward(self, params, cache, dy, need_dx=True):
        x, out = cache
        dx = np.zeros(x.shape)
        free = np.ones(out.shape, dtype=bool)
        for sl in self._taps(x):
            # the first maximal entry of each window receives the gradient
            hit = x[sl] == out
            hit &= free
            free ^= hit
            np.copyto(dx[sl], dy, where=hit)
        return dx, []

    def spec(self):
        return {"kind": self.kind, "window": self.window}


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dy, need_dx=True):
        return dy.reshape(cache), []


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "dense":
        return Dense(**spec)
    if kind == "conv2d":
        return Conv2D(**spec)
    if kind == "maxpool":
        return MaxPool(**spec)
    if kind == "flatten":
        return Flatten()
    raise StructuralError(f"unknown layer kind {kind!r}")
