"""Small module system and transformer blocks shared by both encoders."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from camp import tensor as T
from camp.tensor import Tensor

MASK_BIAS = -1e9


class Module:
    """Attribute-walking parameter container.

    Parameters are :class:`Tensor` attributes; child modules may be attributes
    or lists of modules. Names are dotted paths in attribute-definition order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, child in enumerate(val):
                    yield from child.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.set_requires_grad(flag)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def to(self, dtype) -> "Module":
        """Cast every parameter in place (used by float64 gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            if p.grad is not None:
                p.grad = p.grad.astype(dtype)
        return self


def _normal(rng: np.random.Generator, shape, std: float) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(np.float32), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True, std: float = 0.02):
        self.weight = _normal(rng, (n_in, n_out), std)
        self.bias = Tensor(np.zeros(n_out, np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}weight", self.weight
        if self.bias is not None:
            yield f"{prefix}bias", self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, np.float32), requires_grad=True)
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self._eps)


def mask_to_bias(mask: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Boolean attendability mask -> additive pre-softmax bias (0 or MASK_BIAS)."""
    return np.where(mask, 0.0, MASK_BIAS).astype(dtype)


class SelfAttention(Module):
    def __init__(self, rng: np.random.Generator, width: int, n_heads: int, out_std: float):
        if width % n_heads:
            raise ValueError(f"width {width} not divisible by n_heads {n_heads}")
        self.qkv = Linear(rng, width, 3 * width)
        self.out = Linear(rng, width, width, std=out_std)
        self._n_heads = n_heads

    def __call__(self, x: Tensor, bias: np.ndarray | None) -> Tensor:
        b, s, w = x.shape
        nh = self._n_heads
        hd = w // nh
        qkv = self.qkv(x).reshape(b, s, 3, nh, hd).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(hd))
        if bias is not None:
            # bias: (B, S, S) or (S, S); broadcast over heads
            scores = scores + Tensor(bias[:, None] if bias.ndim == 3 else bias, dtype=x.dtype)
        attn = T.softmax(scores, axis=-1)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, s, w)
        return self.out(ctx)


class Block(Module):
    """Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, rng: np.random.Generator, width: int, n_heads: int, mlp_ratio: int, n_layers: int):
        out_std = 0.02 / math.sqrt(2 * n_layers)
        self.ln1 = LayerNorm(width)
        self.attn = SelfAttention(rng, width, n_heads, out_std)
        self.ln2 = LayerNorm(width)
        self.fc1 = Linear(rng, width, mlp_ratio * width)
        self.fc2 = Linear(rng, mlp_ratio * width, width, std=out_std)

    def __call__(self, x: Tensor, bias: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), bias)
        return x + self.fc2(T.gelu(self.fc1(self.ln2(x))))
