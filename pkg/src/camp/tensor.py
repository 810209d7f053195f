"""Dense tensors with tape-based reverse-mode autodiff.

Every value in the model is a :class:`Tensor` wrapping a contiguous numpy
array. Operations that touch a tensor with ``requires_grad`` record their
parents and a backward closure; :func:`backward` orders the recorded graph
into a :class:`GradTape` and replays it in reverse.
"""

from __future__ import annotations

import contextlib
import logging
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_GRAD_ENABLED = True
CHECK_FINITE = True


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = _contig(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def set_requires_grad(self, flag: bool) -> None:
        self.requires_grad = bool(flag)
        self.grad = np.zeros_like(self.data) if flag else None

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def astype(self, dtype) -> "Tensor":
        return _cast(self, dtype)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _contig(arr) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    arr = np.asarray(arr)
    return arr if arr.flags.c_contiguous else arr.copy(order="C")


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values in output of {op} (shape {data.shape})")
    out = Tensor.__new__(Tensor)
    out.data = _contig(data)
    out.name = None
    out.op = op
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return _make(a.data / b.data, (a, b), bw, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    if exponent == 2:
        def bw(g):
            return (g * 2 * a.data,)

        return _make(a.data * a.data, (a,), bw, "pow")

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(a.data**exponent, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        return (g * out_data,)

    return _make(out_data, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw, "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out_data,)

    return _make(out_data, (a,), bw, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out_data * out_data),)

    return _make(out_data, (a,), bw, "tanh")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    c = x.dtype.type(_GELU_C)
    inner = c * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = c * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out_data, (a,), bw, "gelu")


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select from ``a`` where ``cond`` is true, else ``b``. ``cond`` is constant."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)

    def bw(g):
        return (
            _unbroadcast(np.where(cond, g, 0), a.shape),
            _unbroadcast(np.where(cond, 0, g), b.shape),
        )

    return _make(np.where(cond, a.data, b.data), (a, b), bw, "where")


# ---------------------------------------------------------------------------
# reductions and shape


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), bw, "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def index(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), bw, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching rules (leading dims broadcast)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        return _matmul_folded(a, b)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), bw, "matmul")


def _matmul_folded(a: Tensor, b: Tensor) -> Tensor:
    # (..., k) @ (k, n): fold leading dims so the weight gradient is one GEMM
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, a.shape[-1])

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return _make((a2 @ b.data).reshape(*lead, b.shape[-1]), (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# fused neural-net primitives


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out_data * (g - (g * out_data).sum(axis=axis, keepdims=True)),)

    return _make(out_data, (x,), bw, "softmax")


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_keep = m + np.log(s)
    probs = e / s

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * probs,)

    out_data = out_keep if keepdims else np.squeeze(out_keep, axis=axis)
    return _make(out_data, (x,), bw, "logsumexp")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x - logsumexp(x, axis=axis, keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gamma.data + beta.data
    h = x.shape[-1]

    def bw(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        if not gamma.requires_grad:
            return gx, None, None
        ggamma = (g * xhat).reshape(-1, h).sum(axis=0)
        gbeta = g.reshape(-1, h).sum(axis=0)
        return gx, ggamma, gbeta

    return _make(out_data, (x, gamma, beta), bw, "layer_norm")


def l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm, guarding zero rows with ``eps``."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if (norm < eps).any():
        logger.warning("l2_normalize: %d row(s) with norm below eps=%g", int((norm < eps).sum()), eps)
    denom = np.maximum(norm, eps)
    out_data = x.data / denom
    active = norm >= eps

    def bw(g):
        proj = (g * out_data).sum(axis=-1, keepdims=True)
        gx = (g - np.where(active, out_data * proj, 0)) / denom
        return (gx,)

    return _make(out_data, (x,), bw, "l2_normalize")


def gather_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Rows ``indices`` of a 2-D tensor, in order (duplicates allowed)."""
    if x.ndim != 2:
        raise ValueError(f"gather_rows expects a 2-D tensor, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"gather_rows index out of range [0, {x.shape[0]}): {idx.tolist()}")
    return take(x, idx, axis=0)


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Embedding-style lookup along ``axis``; gradient scatters back with accumulation."""
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim

    def bw(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, axis, 0) if idx.ndim == 1 else g
        if idx.ndim == 1:
            np.add.at(moved, idx, gm)
        else:
            if axis != 0:
                raise NotImplementedError("multi-dim take only supported along axis 0")
            np.add.at(moved, idx.reshape(-1), g.reshape((-1,) + x.shape[1:]))
        return (full,)

    return _make(np.take(x.data, idx, axis=axis), (x,), bw, "take")


def take_along_batch(x: Tensor, positions: np.ndarray) -> Tensor:
    """For ``x`` of shape (B, S, H) and integer ``positions`` (B, P), return (B, P, H)."""
    pos = np.asarray(positions, dtype=np.int64)
    b_idx = np.arange(x.shape[0])[:, None]
    return index(x, (b_idx, pos))


# ---------------------------------------------------------------------------
# tape and backward


class GradTape:
    """Reverse-topological record of the ops that produced a scalar."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "GradTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(reversed(self.nodes))


def backward(loss: Tensor, tape: GradTape | None = None) -> GradTape:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf with ``requires_grad``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("backward called on a non-finite loss")
    if not loss.requires_grad:
        return GradTape([])
    tape = tape or GradTape.record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in tape:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = pg.astype(parent.dtype, copy=False)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return tape


# ---------------------------------------------------------------------------
# verification oracle


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x: Tensor, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``; ``x.data`` is restored afterwards."""
    base = x.data
    flat = base.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(x))
            flat[i] = orig - h
            fm = _scalar(f(x))
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(base.shape)


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return float(v.data.reshape(-1)[0])
    return float(v)


def _cast(t: Tensor, dtype) -> Tensor:
    def bw(g):
        return (g.astype(t.dtype),)

    return _make(t.data.astype(dtype), (t,), bw, "cast")


def parameters_zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
