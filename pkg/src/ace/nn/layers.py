"""Dense blocks and mean pooling with explicit backward passes.

Layers accept inputs of shape (..., in_dim); leading dimensions are
flattened for the kernel call and restored on output.  Each layer keeps the
cache of its latest forward call, so within one computation graph a layer
must be called exactly once before its backward.
"""

import math
from typing import Optional, Tuple

import numpy as np

from ace.nn.backend import kernels
from ace.nn.params import ParamStore


class Dense:
    """y = act(x @ w.T + b) with act in {relu, identity}.

    Weights initialize uniform in +-sqrt(1/fan_in), biases at zero.
    """

    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, activation: str = "relu"):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        bound = math.sqrt(1.0 / in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        self.w = store.add(name + ".w", w)
        self.b = store.add(name + ".b", np.zeros(out_dim))
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.relu = activation == "relu"
        self._cache: Optional[Tuple[np.ndarray, np.ndarray, Tuple[int, ...]]] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected last dim {self.in_dim}, got {x.shape[-1]}")
        lead = x.shape[:-1]
        x2 = np.ascontiguousarray(x.reshape(-1, self.in_dim), dtype=self.w.value.dtype)
        y2 = kernels.dense_forward(x2, self.w.value, self.b.value, self.relu)
        self._cache = (x2, y2, lead)
        return y2.reshape(*lead, self.out_dim)

    __call__ = forward

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Accumulates parameter gradients, returns the input gradient."""
        if self._cache is None:
            raise RuntimeError("no cached activations")
        x2, y2, lead = self._cache
        dy2 = np.ascontiguousarray(dy.reshape(-1, self.out_dim), dtype=self.w.value.dtype)
        if dy2.shape[0] != x2.shape[0]:
            raise ValueError("upstream gradient batch does not match cached forward")
        dx2 = kernels.dense_backward(x2, y2, self.w.value, dy2, self.relu,
                                     self.w.grad, self.b.grad)
        return dx2.reshape(*lead, self.in_dim)


def mean_pool(x: np.ndarray, axis: int) -> np.ndarray:
    """Elementwise mean over one axis; an empty axis pools to zeros."""
    if x.shape[axis] == 0:
        shape = list(x.shape)
        del shape[axis]
        return np.zeros(shape, dtype=x.dtype)
    return x.mean(axis=axis)


def mean_pool_backward(dy: np.ndarray, count: int, axis: int) -> np.ndarray:
    """Each pooled input receives upstream / count."""
    scaled = dy / count
    return np.repeat(np.expand_dims(scaled, axis), count, axis=axis)
