"""Network building blocks on top of the autograd engine: parameter
containers, the layers the fidelity branches use, the Adam optimizer, and a
flat binary checkpoint format.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .autograd import Tensor, relu, sqrt
from .validation import as_rng


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{idx}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield (f"{prefix}{name}", value)
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield (f"{prefix}{name}.{idx}", item)
        for name, child in self._children():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        for m in self._all_modules():
            m.__dict__["training"] = mode
        return self

    def eval(self):
        return self.train(False)

    @property
    def training(self) -> bool:
        return self.__dict__.get("training", True)

    def _all_modules(self):
        yield self
        for _, child in self._children():
            yield from child._all_modules()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All parameters plus persistent buffers, keyed by dotted path."""
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def named_buffers(self, prefix: str = ""):
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                out[f"{prefix}{name}"] = value.copy()
        for name, child in self._children():
            out.update(child.named_buffers(prefix=f"{prefix}{name}."))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = self._buffer_slots()
        for name, value in arrays.items():
            if name in params:
                if params[name].data.shape != value.shape:
                    raise ValueError(
                        f"shape mismatch for {name}: {params[name].data.shape} vs {value.shape}"
                    )
                params[name].data = value.astype(np.float64).copy()
            elif name in buffers:
                holder, attr = buffers[name]
                setattr(holder, attr, value.astype(np.float64).copy())
            else:
                raise KeyError(f"unknown tensor {name!r} in checkpoint")

    def _buffer_slots(self, prefix: str = ""):
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                out[f"{prefix}{name}"] = (self, name)
        for name, child in self._children():
            out.update(child._buffer_slots(prefix=f"{prefix}{name}."))
        return out


def _kaiming_uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng=None, bias: bool = True):
        rng = as_rng(rng)
        self.weight = Parameter(_kaiming_uniform(rng, in_features, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv1d(Module):
    """Width-1 convolution over the record axis: one shared affine kernel
    applied to every record row. Input and output are (rows, channels)."""

    def __init__(self, in_channels: int, out_channels: int, rng=None):
        rng = as_rng(rng)
        self.weight = Parameter(
            _kaiming_uniform(rng, in_channels, (in_channels, out_channels))
        )
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class BatchNorm1d(Module):
    """Channel normalization over axis 0 with running statistics.

    Training mode normalizes by batch statistics (biased variance) and blends
    them into the running buffers with the given momentum; eval mode applies
    the stored statistics as a fixed per-row affine map.
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            mean = x.mean(axis=0)
            centered = x - mean
            var = (centered * centered).mean(axis=0)
            self.running_mean = (
                self.momentum * self.running_mean + (1.0 - self.momentum) * mean.data
            )
            self.running_var = (
                self.momentum * self.running_var + (1.0 - self.momentum) * var.data
            )
            norm = centered / sqrt(var + self.eps)
        else:
            norm = (x - Tensor(self.running_mean)) / Tensor(
                np.sqrt(self.running_var + self.eps)
            )
        return norm * self.gamma + self.beta


class MLP(Module):
    """Fully connected stack with ReLU between layers and a linear last layer."""

    def __init__(self, widths, rng=None, final_activation: bool = False):
        rng = as_rng(rng)
        self.layers = [
            Linear(widths[i], widths[i + 1], rng=rng) for i in range(len(widths) - 1)
        ]
        self.final_activation = final_activation

    def forward(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_activation:
                x = relu(x)
        return x


class Adam:
    """Adam with bias correction; deterministic given parameters and grads."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_update(value, grad, m, v, t, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One functional Adam step; returns (new value, new m, new v, t)."""
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    t = t + 1
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v, t


# --------------------------------------------------------------------------
# Checkpoints: little-endian float64 flat binary plus a JSON manifest.

CHECKPOINT_BIN = "weights.bin"
CHECKPOINT_MANIFEST = "manifest.json"


def save_checkpoint(directory, arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)}
        )
        offset += arr.size
        blobs.append(arr.tobytes())
    with open(directory / CHECKPOINT_BIN, "wb") as fh:
        fh.write(b"".join(blobs))
    manifest = {"format": "crossfid-checkpoint-v1", "tensors": entries}
    if extra:
        manifest.update(extra)
    with open(directory / CHECKPOINT_MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    with open(directory / CHECKPOINT_MANIFEST, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    raw = np.fromfile(directory / CHECKPOINT_BIN, dtype="<f8")
    arrays = {}
    for entry in manifest["tensors"]:
        start = entry["offset"]
        arrays[entry["name"]] = (
            raw[start : start + entry["count"]].reshape(entry["shape"]).astype(np.float64)
        )
    return arrays, manifest
