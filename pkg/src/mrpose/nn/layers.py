"""Stateful layer wrappers and the tiny module system used by the models."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor

# Active trace list while ``trace_layers`` runs; leaf layers append rows to it.
_TRACE: Optional[list] = None


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: tuple = (1, 1)
    stride: int = 1
    padding: int = 0
    in_channels: int = 0
    out_channels: int = 0


class Module:
    """Container with named parameters, numpy buffers and a train/infer flag."""

    spec: Optional[LayerSpec] = None

    def __init__(self):
        self.training = True

    def forward(self, *args):
        raise NotImplementedError

    def __call__(self, *args):
        out = self.forward(*args)
        if _TRACE is not None and self.spec is not None:
            _TRACE.append((self, args[0].shape, out.shape))
        return out

    def children(self) -> Iterator[tuple]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix, self
        for key, child in self.children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for mod_name, mod in self.named_modules(prefix):
            for key, value in vars(mod).items():
                if isinstance(value, Parameter):
                    yield (f"{mod_name}.{key}" if mod_name else key), value

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple]:
        for mod_name, mod in self.named_modules():
            for key, value in getattr(mod, "buffers", {}).items():
                yield (f"{mod_name}.{key}" if mod_name else key), value

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: float, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel=1, stride=1, padding=0, bias=True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("conv", (kernel, kernel), stride, padding, in_ch, out_ch)
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(he_normal(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, kernel=4, stride=2, padding=1, bias=False, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("transposed_conv", (kernel, kernel), stride, padding, in_ch, out_ch)
        # each output cell sees kernel^2 / stride^2 taps per input channel
        fan_in = in_ch * kernel * kernel / (stride * stride)
        self.weight = Parameter(he_normal(rng, (in_ch, out_ch, kernel, kernel), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.spec = LayerSpec("batch_norm", in_channels=channels, out_channels=channels)
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.buffers["running_mean"],
                            self.buffers["running_var"], self.training, self.momentum, self.eps)


class ReLU(Module):
    spec = LayerSpec("relu")

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(x)


class MaxPool2d(Module):
    def __init__(self, kernel: int = 3, stride: int = 2, padding: int = 1):
        super().__init__()
        self.spec = LayerSpec("max_pool", (kernel, kernel), stride, padding)

    def forward(self, x: Tensor) -> Tensor:
        return F.max_pool2d(x, self.spec.kernel[0], self.spec.stride, self.spec.padding)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def __getitem__(self, i: int) -> Module:
        return self.layers[i]

    def __len__(self) -> int:
        return len(self.layers)


def trace_layers(model: Module, x: Tensor) -> list:
    """Run ``model(x)`` and return (layer, in_shape, out_shape) for every leaf layer."""
    global _TRACE
    _TRACE = []
    try:
        model(x)
        return _TRACE
    finally:
        _TRACE = None
