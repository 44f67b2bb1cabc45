"""Stateful layer objects wrapping the functional primitives.

A layer object may appear in several networks; that is how the shared
encoder and generator components alias their parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from . import functional as F
from .autograd import Parameter, Tensor

LAYER_KINDS = ("conv", "deconv", "batchnorm", "leaky_relu", "maxpool", "fc", "sigmoid", "tanh")


@dataclass
class LayerSpec:
    """One primitive layer.  Fields irrelevant to ``kind`` stay ``None``."""

    kind: str
    channels: Optional[int] = None
    kernel: Optional[int] = None
    stride: Optional[int] = None
    padding: Optional[str] = None
    output_padding: Optional[int] = None
    shared: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


def _kaiming(rng: np.random.Generator, shape, fan_in: int, slope: float, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / ((1 + slope**2) * fan_in))
    return (rng.standard_normal(shape) * std).astype(dtype)


class Layer:
    name = ""

    def params(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, shape):
        return shape


class Conv(Layer):
    def __init__(self, name, in_ch, out_ch, kernel, stride, padding, bias, rng, slope=0.2, dtype=np.float32):
        self.name = name
        self.stride, self.padding = stride, padding
        self.kernel = Parameter(f"{name}.kernel", _kaiming(rng, (kernel, kernel, in_ch, out_ch), kernel * kernel * in_ch, slope, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_ch, dtype=dtype)) if bias else None

    def __call__(self, x, training=False):
        return F.conv2d(x, self.kernel, self.stride, self.padding, self.bias)

    def params(self):
        return [self.kernel] + ([self.bias] if self.bias is not None else [])

    def output_shape(self, shape):
        h, w, _ = shape
        k = self.kernel.shape[0]
        return (F.conv_output_size(h, k, self.stride, self.padding), F.conv_output_size(w, k, self.stride, self.padding), self.kernel.shape[3])


class Deconv(Layer):
    def __init__(self, name, in_ch, out_ch, kernel, stride, padding, output_padding, bias, rng, slope=0.2, dtype=np.float32):
        self.name = name
        self.stride, self.padding, self.output_padding = stride, padding, output_padding
        self.kernel = Parameter(f"{name}.kernel", _kaiming(rng, (kernel, kernel, out_ch, in_ch), kernel * kernel * in_ch, slope, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_ch, dtype=dtype)) if bias else None

    def __call__(self, x, training=False):
        return F.deconv2d(x, self.kernel, self.stride, self.padding, self.output_padding, self.bias)

    def params(self):
        return [self.kernel] + ([self.bias] if self.bias is not None else [])

    def output_shape(self, shape):
        h, w, _ = shape
        k = self.kernel.shape[0]
        size = lambda n: F.deconv_output_size(n, k, self.stride, self.padding, self.output_padding)  # noqa: E731
        return (size(h), size(w), self.kernel.shape[2])


class BatchNorm(Layer):
    def __init__(self, name, channels, epsilon=1e-5, momentum=0.9, dtype=np.float32):
        self.name = name
        self.epsilon = epsilon
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.stats = F.RunningStats(channels, momentum, dtype)

    def __call__(self, x, training=False):
        return F.batch_norm(x, self.gamma, self.beta, "train" if training else "eval", self.stats, self.epsilon)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.stats.mean, f"{self.name}.running_var": self.stats.var}


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        self.slope = slope

    def __call__(self, x, training=False):
        return ag.leaky_relu(x, self.slope)


class MaxPool(Layer):
    def __init__(self, kernel, stride, padding="valid"):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def __call__(self, x, training=False):
        return F.max_pool(x, self.kernel, self.stride, self.padding)

    def output_shape(self, shape):
        h, w, c = shape
        return (F.conv_output_size(h, self.kernel, self.stride, self.padding), F.conv_output_size(w, self.kernel, self.stride, self.padding), c)


class Dense(Layer):
    def __init__(self, name, in_features, out_features, rng, slope=0.2, dtype=np.float32):
        self.name = name
        self.weights = Parameter(f"{name}.weights", _kaiming(rng, (in_features, out_features), in_features, slope, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_features, dtype=dtype))

    def __call__(self, x, training=False):
        return F.fully_connected(x, self.weights, self.bias)

    def params(self):
        return [self.weights, self.bias]

    def output_shape(self, shape):
        return (self.weights.shape[1],)


class Sigmoid(Layer):
    def __call__(self, x, training=False):
        return ag.sigmoid(x)


class Tanh(Layer):
    def __call__(self, x, training=False):
        return ag.tanh(x)


class Network:
    """An ordered stack of layers with a fixed per-sample input shape."""

    def __init__(self, name: str, layers: list[Layer], input_shape: tuple[int, ...]):
        self.name = name
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"{self.name} expects inputs of shape (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        for layer in self.layers:
            x = layer(x, training)
        return x

    def params(self) -> list[Parameter]:
        seen: dict[int, Parameter] = {}
        for layer in self.layers:
            for p in layer.params():
                seen.setdefault(id(p), p)
        return list(seen.values())

    def param_names(self) -> list[str]:
        return [p.name for p in self.params()]

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def __repr__(self):
        return f"Network({self.name!r}, {len(self.layers)} layers, {self.input_shape} -> {self.output_shape})"
