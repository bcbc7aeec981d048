"""Tiny layer base: parameter, buffer and child registration by attribute."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class Context:
    """Per-call state threaded through forward passes."""
    training: bool = False
    rng: np.random.Generator = field(default_factory=np.random.default_rng)


class Module:
    """Base class giving named access to parameters and state buffers."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array: np.ndarray):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def set_buffer(self, name, array: np.ndarray):
        if name not in self._buffers:
            raise KeyError(name)
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_params(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_params(f"{prefix}{cname}.")

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield prefix + name, self
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def param_count(self) -> int:
        return sum(int(np.prod(p.shape)) for _, p in self.named_params())

    def forward(self, x: Tensor, ctx: Context) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, ctx: Context | None = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        return self.forward(x, ctx or Context())


def he_normal(shape, fan_in: int, rng: np.random.Generator, dtype) -> Tensor:
    """Gaussian init with variance 2/fan_in."""
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
