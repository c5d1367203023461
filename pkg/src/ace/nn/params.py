"""Named parameter storage with gradients, optimizers and checkpoint IO.

A ParamStore owns every learnable tensor of a model: values, gradient
buffers and per-tensor optimizer state.  Forward inference on a store is
safe from many readers; gradient accumulation and optimizer steps are
single-writer.
"""

import json
import struct
from typing import Dict, Iterator, Tuple

import numpy as np

from ace.nn.backend import kernels

CKPT_MAGIC = b"ACECKPT1"


class Param:
    """One learnable tensor plus its gradient and moment buffers."""

    __slots__ = ("name", "value", "grad", "m", "v")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)


class ParamStore:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: Dict[str, Param] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Param:
        """Register a tensor under a unique name; returns its Param."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(name, np.ascontiguousarray(value, dtype=self.dtype))
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self) -> Iterator[Tuple[str, Param]]:
        return iter(self._params.items())

    def names(self):
        return list(self._params)

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0

    def copy_values_from(self, other: "ParamStore") -> None:
        self._check_same_structure(other)
        for name, p in self._params.items():
            np.copyto(p.value, other[name].value)

    def _check_same_structure(self, other: "ParamStore") -> None:
        if self.names() != other.names():
            raise ValueError("parameter structure mismatch")
        for name, p in self._params.items():
            if p.value.shape != other[name].value.shape:
                raise ValueError(f"shape mismatch for {name!r}")

    def _check_finite_grads(self) -> None:
        for name, p in self._params.items():
            if not np.all(np.isfinite(p.grad)):
                raise RuntimeError(f"divergence detected: non-finite gradient in {name!r}")

    def adam_step(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                  weight_decay: float = 0.0) -> None:
        """Adam with decoupled weight decay; clears gradients afterwards."""
        self._check_finite_grads()
        self.step_count += 1
        for p in self._params.values():
            kernels.adam_step(p.value.ravel(), p.grad.ravel(), p.m.ravel(), p.v.ravel(),
                              lr, betas[0], betas[1], eps, weight_decay, self.step_count)
        self.zero_grad()

    def rmsprop_step(self, lr: float, alpha: float = 0.99, eps: float = 1e-8,
                     weight_decay: float = 0.0) -> None:
        """RMSProp with decoupled weight decay; clears gradients afterwards."""
        self._check_finite_grads()
        self.step_count += 1
        for p in self._params.values():
            if weight_decay != 0:
                p.value *= 1.0 - lr * weight_decay
            p.v *= alpha
            p.v += (1.0 - alpha) * np.square(p.grad)
            p.value -= lr * p.grad / (np.sqrt(p.v) + eps)
        self.zero_grad()

    def soft_update_from(self, online: "ParamStore", theta: float) -> None:
        """self <- (1 - theta) * self + theta * online, elementwise."""
        self._check_same_structure(online)
        for name, p in self._params.items():
            kernels.soft_update(p.value.ravel(), online[name].value.ravel(), theta)


def save_checkpoint(store: ParamStore, path: str) -> None:
    """Manifest (name, shape, offset in elements) + one flat little-endian
    float32 blob."""
    manifest = []
    offset = 0
    chunks = []
    for name, p in store.items():
        manifest.append({"name": name, "shape": list(p.value.shape), "offset": offset})
        flat = np.ascontiguousarray(p.value, dtype="<f4").ravel()
        chunks.append(flat.tobytes())
        offset += flat.size
    header = json.dumps(manifest).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for c in chunks:
            f.write(c)


def load_checkpoint(store: ParamStore, path: str) -> None:
    """Load values into an existing store; shapes must match the manifest."""
    with open(path, "rb") as f:
        if f.read(8) != CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        manifest = json.loads(f.read(hlen).decode())
        blob = np.frombuffer(f.read(), dtype="<f4")
    names = [entry["name"] for entry in manifest]
    if names != store.names():
        raise ValueError("checkpoint parameter names do not match the model")
    for entry in manifest:
        p = store[entry["name"]]
        shape = tuple(entry["shape"])
        if p.value.shape != shape:
            raise ValueError(f"checkpoint shape mismatch for {entry['name']!r}")
        start = entry["offset"]
        flat = blob[start : start + p.value.size]
        if flat.size != p.value.size:
            raise ValueError("truncated checkpoint blob")
        np.copyto(p.value, flat.reshape(shape).astype(store.dtype))
