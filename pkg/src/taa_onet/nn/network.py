"""Sequential networks over a flat float64 parameter vector."""
from __future__ import annotations

import numpy as np

from ..errors import StructuralError
from .layers import Conv2D, Dense, Flatten, Layer, MaxPool, layer_from_spec


class Sequential:
    """A chain of layers whose shapes are checked once, at assembly.

    Parameters live in a caller-owned flat vector; ``offset`` is where this
    network's block starts, so several networks can share one vector.
    """

    def __init__(self, layers: list[Layer], input_shape, offset: int = 0):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        shape = self.input_shape
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.out_shape(shape)
            self.shapes.append(shape)
        self.output_shape = shape
        self.offset = int(offset)
        self.slots: list[list[tuple[int, int, tuple]]] = []
        pos = self.offset
        for layer in self.layers:
            slots = []
            for shp in layer.param_shapes():
                size = int(np.prod(shp))
                slots.append((pos, pos + size, shp))
                pos += size
            self.slots.append(slots)
        self.size = pos - self.offset

    @property
    def end(self) -> int:
        return self.offset + self.size

    def views(self, theta: np.ndarray, i: int) -> list[np.ndarray]:
        return [theta[a:b].reshape(shp) for a, b, shp in self.slots[i]]

    def init(self, theta: np.ndarray, rng) -> None:
        for i, layer in enumerate(self.layers):
            for (a, b, _), val in zip(self.slots[i], layer.init_params(rng)):
                theta[a:b] = val.ravel()

    def forward(self, theta: np.ndarray, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise StructuralError(f"input shape {x.shape[1:]} != network input {self.input_shape}")
        caches = []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(self.views(theta, i), x)
            caches.append(cache)
        return x, caches

    def backward(self, theta: np.ndarray, caches, dy: np.ndarray, grad: np.ndarray, input_grad: bool = True):
        """Accumulate parameter gradients into ``grad`` (same layout as ``theta``); return input gradient."""
        for i in range(len(self.layers) - 1, -1, -1):
            dy, pgrads = self.layers[i].backward(self.views(theta, i), caches[i], dy, need_dx=input_grad or i > 0)
            for (a, b, _), g in zip(self.slots[i], pgrads):
                grad[a:b] += g.ravel()
        return dy

    def spec(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [layer.spec() for layer in self.layers]}

    @classmethod
    def from_spec(cls, spec: dict, offset: int = 0) -> "Sequential":
        return cls([layer_from_spec(s) for s in spec["layers"]], spec["input_shape"], offset)

    def param_count(self) -> int:
        return self.size


def fnn(n_in: int, n_out: int, depth: int, width: int, activation: str = "tanh", offset: int = 0) -> Sequential:
    """``depth`` dense layers: ``depth - 1`` hidden layers of ``width`` units and a linear output."""
    if depth < 1:
        raise StructuralError("depth must be at least 1")
    layers: list[Layer] = []
    prev = n_in
    for _ in range(depth - 1):
        layers.append(Dense(prev, width, activation))
        prev = width
    layers.append(Dense(prev, n_out, "identity"))
    return Sequential(layers, (n_in,), offset)


def cnn(
    input_shape,
    n_out: int,
    filters=(16, 32),
    kernel: int = 3,
    pool: int = 2,
    activation: str = "tanh",
    offset: int = 0,
) -> Sequential:
    """Conv(pad 1) + pool, then unpadded conv + pool blocks, flatten, linear head."""
    c = int(input_shape[-1])
    layers: list[Layer] = []
    for i, f in enumerate(filters):
        layers.append(Conv2D(c, int(f), (kernel, kernel), 1, 1 if i == 0 else 0, activation))
        layers.append(MaxPool(pool))
        c = int(f)
    layers.append(Flatten())
    probe = Sequential(layers, input_shape)
    layers.append(Dense(probe.output_shape[0], n_out, "identity"))
    return Sequential(layers, input_shape, offset)
