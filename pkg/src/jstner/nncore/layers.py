"""Parameterized building blocks for the encoder/decoder stacks."""

from __future__ import annotations

import numpy as np

from . import tensor as nt
from .optim import Parameter
from .tensor import Tensor


def scaled_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True):
        self.w = Parameter(f"{name}.w", scaled_uniform(rng, (d_in, d_out), d_in, d_out))
        self.b = Parameter(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if self.b is None:
            return nt.matmul(x, self.w.t)
        return nt.affine(x, self.w.t, self.b.t)

    def parameters(self):
        return [self.w] if self.b is None else [self.w, self.b]


class Embedding:
    def __init__(self, name: str, n: int, dim: int, rng: np.random.Generator):
        self.table = Parameter(f"{name}.table", scaled_uniform(rng, (n, dim), n, dim))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return nt.embedding(self.table.t, ids)

    def parameters(self):
        return [self.table]


class LayerNorm:
    def __init__(self, name: str, dim: int):
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return nt.layer_norm(x, self.gamma.t, self.beta.t)

    def parameters(self):
        return [self.gamma, self.beta]


class Conv1d:
    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, stride: int,
                 rng: np.random.Generator):
        fan_in = kernel * c_in
        self.w = Parameter(f"{name}.w",
                           scaled_uniform(rng, (kernel, c_in, c_out), fan_in, c_out))
        self.b = Parameter(f"{name}.b", np.zeros(c_out))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return nt.conv1d(x, self.w.t, self.b.t, self.stride)

    def parameters(self):
        return [self.w, self.b]


class DepthwiseConv1d:
    def __init__(self, name: str, channels: int, kernel: int, rng: np.random.Generator):
        self.w = Parameter(f"{name}.w",
                           scaled_uniform(rng, (kernel, channels), kernel, 1))
        self.b = Parameter(f"{name}.b", np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return nt.depthwise_conv1d(x, self.w.t, self.b.t)

    def parameters(self):
        return [self.w, self.b]


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Absolute sinusoidal position table [length, dim]."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table
