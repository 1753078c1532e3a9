"""Parameter containers and the layers shared by every model stage."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensors as T
from .tensors import Tensor


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=T.get_dtype()), requires_grad=True)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)))


class Module:
    """Walks its attributes to find parameters and sub-modules, in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            yield from _walk(val, f"{prefix}{key}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        from .errors import ContractError

        own = dict(self.named_parameters())
        for name, p in own.items():
            if name not in state:
                raise ContractError(f"checkpoint is missing parameter {name}")
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ContractError(
                    f"shape mismatch for {name}: checkpoint {arr.shape}, model {p.shape}")
            p.data = arr.astype(p.data.dtype)
        extra = sorted(set(state) - set(own))
        if extra:
            raise ContractError(f"checkpoint has unknown parameter {extra[0]}")

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(val, name):
    if isinstance(val, Tensor):
        if val.requires_grad:
            yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _walk(item, f"{name}.{i}")
    elif isinstance(val, dict):
        for k, item in val.items():
            yield from _walk(item, f"{name}.{k}")


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, zero: bool = False):
        self.weight = param(np.zeros((d_in, d_out))) if zero else xavier(rng, d_in, d_out)
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y

    def zero_(self) -> None:
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1):
        fan_in = c_in * k * k
        bound = math.sqrt(6.0 / fan_in)  # He-uniform, suits the relu stacks
        self.kernel = param(rng.uniform(-bound, bound, size=(k, k, c_in, c_out)))
        self.bias = param(np.zeros(c_out))
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x):
        return T.conv2d(x, self.kernel, self.bias, self.stride, self.padding)


class Attention(Module):
    """Multi-head attention with separate q/k/v/out projections.

    The output projection can start at zero so the residual branch is inert.
    """

    def __init__(self, rng, dim: int, heads: int, kv_dim: int | None = None,
                 zero_out: bool = False):
        kv_dim = kv_dim or dim
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, kv_dim, dim)
        self.v = Linear(rng, kv_dim, dim)
        self.out = Linear(rng, dim, dim, zero=zero_out)
        self.heads = heads

    def __call__(self, query, key, value, mask=None):
        h = T.multi_head_attention(self.q(query), self.k(key), self.v(value), self.heads, mask)
        return self.out(h)


class FeedForward(Module):
    def __init__(self, rng, dim: int, hidden: int, zero_out: bool = False):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim, zero=zero_out)

    def __call__(self, x):
        return self.fc2(T.relu(self.fc1(x)))


def sine_position_2d(h: int, w: int, dim: int, temperature: float = 10000.0) -> np.ndarray:
    """Fixed DETR-style sine/cosine encoding of (y, x), shape [h*w, dim]."""
    if dim % 4:
        raise ValueError("sine position dim must be a multiple of 4")
    quarter = dim // 4
    freqs = temperature ** (np.arange(quarter) / quarter)
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    ys = ys.reshape(-1, 1) / h * 2 * math.pi / freqs
    xs = xs.reshape(-1, 1) / w * 2 * math.pi / freqs
    return np.concatenate([np.sin(ys), np.cos(ys), np.sin(xs), np.cos(xs)], axis=1)
