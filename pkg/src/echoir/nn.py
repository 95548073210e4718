"""Parameter containers and the handful of layers the network is built from."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Owns named parameters and child modules, in registration order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
            self._children.pop(name, None)
        elif isinstance(value, Module):
            self._children[name] = value
            self._params.pop(name, None)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        T.zero_grads(self.parameters())

    def zero_(self) -> "Module":
        for p in self.parameters():
            p.data[...] = 0.0
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Sequential(Module):
    def __init__(self, modules):
        super().__init__()
        self._items = []
        for i, m in enumerate(modules):
            setattr(self, str(i), m)
            self._items.append(m)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __iter__(self):
        return iter(self._items)

    def forward(self, x):
        for m in self._items:
            x = m(x)
        return x


def _param(shape, rng: np.random.Generator, bound: float, dtype) -> Tensor:
    data = rng.uniform(-bound, bound, size=shape) if bound > 0 else np.zeros(shape)
    return Tensor(data.astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=1, stride=1, padding=0, groups=1, bias=True, rng=None, dtype=T.WIDE, init_scale=1.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if cin % groups or cout % groups:
            raise T.ConfigError(f"channels ({cin}, {cout}) not divisible by groups={groups}")
        fan_in = (cin // groups) * kernel * kernel
        bound = init_scale / math.sqrt(fan_in)
        self.weight = _param((cout, cin // groups, kernel, kernel), rng, bound, dtype)
        self.bias = _param((cout,), rng, 0.0, dtype) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose2d(Module):
    """Kernel == stride transposed convolution (used for 2x upsampling)."""

    def __init__(self, cin, cout, kernel=2, rng=None, dtype=T.WIDE):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _param((cin, cout, kernel, kernel), rng, 1.0 / math.sqrt(cin), dtype)
        self.bias = _param((cout,), rng, 0.0, dtype)

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias)


class Linear(Module):
    """y = W x + b on a 1-d input."""

    def __init__(self, cin, cout, rng=None, dtype=T.WIDE):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _param((cout, cin), rng, 1.0 / math.sqrt(cin), dtype)
        self.bias = _param((cout,), rng, 0.0, dtype)

    def forward(self, x):
        y = T.matmul(self.weight, T.reshape(x, (x.shape[0], 1)))
        return T.reshape(y, (self.weight.shape[0],)) + self.bias


class LayerNorm2d(Module):
    """Layer norm across channels at every pixel of a C x H x W map."""

    def __init__(self, channels, eps=1e-5, dtype=T.WIDE):
        super().__init__()
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, axis=0, eps=self.eps)


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    c, h, w = x.shape
    if c % (r * r):
        raise T.ShapeError(f"pixel_shuffle needs channels divisible by {r * r}, got {c}")
    y = T.reshape(x, (c // (r * r), r, r, h, w))
    y = T.transpose(y, (0, 3, 1, 4, 2))
    return T.reshape(y, (c // (r * r), h * r, w * r))
