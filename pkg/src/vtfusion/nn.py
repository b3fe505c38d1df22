"""Minimal layer toolkit on top of the tensor core: parameter registry,
linear/conv/LSTM/layer-norm layers, and centered uniform fan-in init."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class giving named-parameter traversal and state dicts.

    Attribute insertion order defines parameter order, which keeps
    checkpoints and optimizer state stable across runs.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        T.zero_grads(self.parameters())

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, strict: bool = True):
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise ValueError(f"state dict mismatch: missing={missing}, unexpected={unexpected}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name}: checkpoint shape {arr.shape} != model {p.data.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> Tensor:
    """Centered uniform init with bound gain / sqrt(fan_in)."""
    bound = gain / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32), requires_grad=True)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, gain: float = 1.0):
        self.weight = uniform_fan_in(rng, (out_features, in_features), in_features, gain)
        self.bias = Tensor(np.zeros(out_features, np.float32), requires_grad=True) if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int,
                 rng: np.random.Generator):
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = uniform_fan_in(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in
        )
        self.bias = Tensor(np.zeros(out_channels, np.float32), requires_grad=True)
        self.kernel_size = kernel_size
        self.stride = stride

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride)


class LSTMCell(Module):
    """Single LSTM layer stepped one timestep at a time."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.w_x = uniform_fan_in(rng, (4 * hidden_size, input_size), hidden_size)
        self.w_h = uniform_fan_in(rng, (4 * hidden_size, hidden_size), hidden_size)
        bias = np.zeros(4 * hidden_size, np.float32)
        bias[hidden_size : 2 * hidden_size] = 1.0  # forget-gate bias keeps early memory open
        self.bias = Tensor(bias, requires_grad=True)
        self.input_size = input_size
        self.hidden_size = hidden_size

    def forward(self, x, h, c):
        return T.lstm_step(x, h, c, self.w_x, self.w_h, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, np.float32), requires_grad=True)
        self.eps = eps
        self.dim = dim

    def forward(self, x):
        mu = T.mean(x, axis=-1, keepdims=True)
        centered = x - mu
        var = T.mean(centered * centered, axis=-1, keepdims=True)
        return centered / T.sqrt(var + self.eps) * self.gamma + self.beta
