"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation on a :class:`Tensor` that involves an operand with
``requires_grad=True`` records itself in the computation graph; calling
:meth:`Tensor.backward` on a one-element result replays that record in
reverse topological order and accumulates ``.grad`` on the leaves. The
graph is consumed by the backward pass.

Broadcasting is limited to scalar-tensor arithmetic. Anything else needs
an explicit reshape, :func:`tile_rows`, or a dedicated primitive.
"""
from __future__ import annotations

import builtins
import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "conv2d",
    "relu",
    "log",
    "exp",
    "sqrt",
    "sum",
    "mean",
    "l2_norm",
    "softmax",
    "log_softmax",
    "max",
    "clamp",
    "reshape",
    "tile_rows",
    "take_rows",
    "concat",
    "channel_normalize",
    "scale_shift",
]

_STATE = threading.local()  # grad mode is per thread so attack workers do not interfere


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (current thread only)."""
    prev = is_grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = prev


def is_grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


class Tensor:
    """n-dimensional float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor data contains NaN or Inf")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return _const(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf needing it."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a one-element tensor, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("graph already consumed by a previous backward()")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._consumed = True
        self._consumed = True


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, finished = stack.pop()
        if finished:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _const(data: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out._parents = ()
    out._backward = None
    out._consumed = False
    return out


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("operation produced NaN or Inf")
    out = _const(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return _const(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return g if g.shape == shape else np.asarray(g.sum()).reshape(shape)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (only scalar broadcasting)")


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "div")
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: zero denominator")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError("transpose: only 2-D tensors")
    return _make(a.data.T, (a,), lambda g: (g.T,))


# -------------------------------------------------------------- convolution


def _windows(xp: np.ndarray, k: int) -> np.ndarray:
    # (B, C, H', W', k, k) view
    return np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))


def conv2d(x, w, b=None, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation of (B, C, H, W) input with (O, C, k, k) kernels."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d: expects 4-D input and weight")
    out_c, in_c, k, k2 = w.shape
    if k != k2 or k > 5:
        raise ValueError("conv2d: square kernels of size <= 5 only")
    if x.shape[1] != in_c:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, kernel expects {in_c}")
    p = int(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    if xp.shape[2] < k or xp.shape[3] < k:
        raise ValueError("conv2d: kernel larger than padded input")
    win = _windows(xp, k)
    out = np.einsum("bchwij,ocij->bohw", win, w.data, optimize=True)
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (out_c,):
            raise ValueError("conv2d: bias must have one entry per output channel")
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def backward(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.einsum("bohw,bchwij->ocij", g, win, optimize=True)
        if x.requires_grad:
            gwin = np.einsum("bohw,ocij->bchwij", g, w.data, optimize=True)
            gxp = np.zeros_like(xp)
            ho, wo = g.shape[2], g.shape[3]
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + ho, j : j + wo] += gwin[..., i, j]
            gx = gxp[:, :, p : gxp.shape[2] - p, p : gxp.shape[3] - p] if p else gxp
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    return _make(out, parents, backward)


# ------------------------------------------------------------- elementwise


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0  # derivative at exactly 0 is 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise FloatingPointError("log of non-positive value")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):  # overflow is reported by _make
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data < 0):
        raise FloatingPointError("sqrt of negative value")
    out = np.sqrt(x.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, g / (2.0 * np.where(out > 0, out, 1.0)), 0.0),)

    return _make(out, (x,), backward)


def clamp(x, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip into [lo, hi]; the gradient passes where the input lies inside the closed interval."""
    x = _as_tensor(x)
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    mask = (x.data >= lo_v) & (x.data <= hi_v)
    return _make(np.clip(x.data, lo_v, hi_v), (x,), lambda g: (g * mask,))


# -------------------------------------------------------------- reductions


def _expand(g: np.ndarray, shape: tuple[int, ...], axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    return np.broadcast_to(np.expand_dims(g, axes), shape)


def sum(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    return _make(x.data.sum(axis=axis), (x,), lambda g: (_expand(g, x.shape, axis).copy(),))


def mean(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    out = x.data.mean(axis=axis)
    count = x.data.size // builtins.max(out.size, 1) if x.data.size else 1
    return _make(out, (x,), lambda g: (_expand(g, x.shape, axis) / count,))


def max(x, axis: int | None = None) -> Tensor:
    """Maximum reduction; the gradient goes to the first maximising entry."""
    x = _as_tensor(x)
    if axis is None:
        flat = x.data.reshape(-1)
        idx = int(np.argmax(flat))

        def backward(g):
            out = np.zeros(flat.shape)
            out[idx] = g
            return (out.reshape(x.shape),)

        return _make(flat[idx], (x,), backward)
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros(x.shape)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), backward)


def l2_norm(x, axis: int | None = None) -> Tensor:
    """Euclidean norm (whole tensor, or along ``axis``); gradient at the origin is 0."""
    x = _as_tensor(x)
    out = np.sqrt(np.sum(x.data * x.data, axis=axis))

    def backward(g):
        n = out if axis is None else np.expand_dims(out, axis)
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, (g if axis is None else np.expand_dims(g, axis)) / safe, 0.0)
        return (x.data * scale,)

    return _make(out, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _make(out, (x,), backward)


# ----------------------------------------------------------- shape plumbing


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def tile_rows(v, n: int) -> Tensor:
    """Stack ``n`` copies of a 1-D tensor into an (n, d) matrix."""
    v = _as_tensor(v)
    if v.ndim != 1:
        raise ValueError("tile_rows: expects a 1-D tensor")
    return _make(np.tile(v.data, (n, 1)), (v,), lambda g: (g.sum(axis=0),))


def take_rows(x, index) -> Tensor:
    """Pick ``x[i, index[i]]`` for every row of a 2-D tensor."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ValueError("take_rows: expects (B, C) tensor and B indices")
    if np.any(index < 0) or np.any(index >= x.shape[1]):
        raise IndexError("take_rows: index out of range")
    rows = np.arange(x.shape[0])

    def backward(g):
        gx = np.zeros(x.shape)
        gx[rows, index] = g
        return (gx,)

    return _make(x.data[rows, index], (x,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


# -------------------------------------------------------- normalisation ops


def channel_normalize(x, axis: int = 1) -> Tensor:
    """Scale each fibre along ``axis`` to unit L2 norm; all-zero fibres stay zero."""
    x = _as_tensor(x)
    n = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)
    out = np.where(n > 0, x.data / safe, 0.0)

    def backward(g):
        proj = np.sum(g * out, axis=axis, keepdims=True)
        return (np.where(n > 0, (g - out * proj) / safe, 0.0),)

    return _make(out, (x,), backward)


def scale_shift(x, scale, shift) -> Tensor:
    """Per-feature affine map along axis 1: ``x * scale[c] + shift[c]``."""
    x, scale, shift = _as_tensor(x), _as_tensor(scale), _as_tensor(shift)
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ValueError("scale_shift: scale/shift must match axis 1")
    view = (1, c) + (1,) * (x.ndim - 2)
    other = tuple(i for i in range(x.ndim) if i != 1)

    def backward(g):
        return (
            g * scale.data.reshape(view),
            np.sum(g * x.data, axis=other),
            np.sum(g, axis=other),
        )

    out = x.data * scale.data.reshape(view) + shift.data.reshape(view)
    return _make(out, (x, scale, shift), backward)
