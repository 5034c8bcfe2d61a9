"""Tensor, tape and the primitive differentiable operations.

Every value is a float64 numpy array. Operations only record onto a tape when
one is active (``with Tape() as tape:``) and at least one input requires a
gradient, so inference runs without bookkeeping.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NonFiniteError, ShapeError

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "mvcl_active_tape", default=None
)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_ufunc__ = None  # make numpy defer to the reflected Tensor operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str) -> "Tensor":
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        if not np.isfinite(data).all():
            raise NonFiniteError(f"{op} produced non-finite values")
        out.data = data
        out.grad = None
        out.requires_grad = False
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of operations; parents always precede their children."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, parents, backward):
        self.nodes.append(_Node(out, parents, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise ContractError("tape already consumed by a backward pass")
        if not self.nodes:
            raise ContractError("backward called on an empty tape")
        self.consumed = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64, copy=True).reshape(parent.shape)
                else:
                    parent.grad = parent.grad + pg
            # intermediate gradients are not needed once propagated
            if node.out.name is None:
                node.out.grad = None


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor._from_op(data, op)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, tuple(parents), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    return _record(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,), "scale")


# -- linear algebra and shape ops -----------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need at least 2-D input, got {a.shape}")
        return _record(
            np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose"
        )
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _record(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _record(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _record(np.concatenate([t.data for t in ts], axis=ax), ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("stack: no inputs")
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: shape {t.shape} differs from {ts[0].shape}")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _record(out, ts, backward, "stack")


def _has_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a, index) -> Tensor:
    """Slice (basic or integer-array indexing); named ``slice`` in the op list."""
    a = as_tensor(a)
    try:
        data = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {a.shape}") from None
    advanced = _has_advanced(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _record(np.array(data, copy=True), (a,), backward, "slice")


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather rows along ``axis``; repeated indices accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % a.ndim
    if idx.size and (idx.min() < -a.shape[ax] or idx.max() >= a.shape[ax]):
        raise ShapeError(f"take: index out of range for axis {axis} of shape {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, ax, 0)
        gm = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return (full,)

    return _record(np.take(a.data, idx, axis=ax), (a,), backward, "take")


def where(mask, a, b) -> Tensor:
    """Pick ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    m = np.asarray(mask, dtype=bool)
    try:
        out = np.where(m, a.data, b.data)
    except ValueError:
        raise ShapeError(f"where: incompatible shapes {m.shape}, {a.shape}, {b.shape}") from None

    def backward(g):
        return (
            _unbroadcast(np.where(m, g, 0.0), a.shape),
            _unbroadcast(np.where(m, 0.0, g), b.shape),
        )

    return _record(out, (a, b), backward, "where")


# -- reductions ------------------------------------------------------------------


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _record(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def _valid_mask(op, a: Tensor, mask, axis):
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    try:
        m = np.broadcast_to(m, a.shape)
    except ValueError:
        raise ShapeError(f"{op}: mask shape {np.shape(mask)} incompatible with {a.shape}") from None
    return m


def max_pool(a, axis: int = 0, mask=None) -> Tensor:
    """Maximum along ``axis`` over valid entries; ties go to the first index."""
    a = as_tensor(a)
    m = _valid_mask("max_pool", a, mask, axis)
    ax = axis % a.ndim
    masked = a.data if m is None else np.where(m, a.data, -np.inf)
    arg = np.argmax(masked, axis=ax)
    arg_k = np.expand_dims(arg, ax)
    out = np.take_along_axis(a.data, arg_k, axis=ax).squeeze(ax)
    if m is not None:
        any_valid = m.any(axis=ax)
        out = np.where(any_valid, out, 0.0)
    else:
        any_valid = None

    def backward(g):
        full = np.zeros_like(a.data)
        gg = g if any_valid is None else np.where(any_valid, g, 0.0)
        np.put_along_axis(full, arg_k, np.expand_dims(gg, ax), axis=ax)
        return (full,)

    return _record(out, (a,), backward, "max_pool")


def avg_pool(a, axis: int = 0, mask=None) -> Tensor:
    """Mean along ``axis`` over valid entries."""
    a = as_tensor(a)
    m = _valid_mask("avg_pool", a, mask, axis)
    ax = axis % a.ndim
    if m is None:
        w = np.full(a.shape, 1.0 / a.shape[ax])
    else:
        counts = m.sum(axis=ax, keepdims=True)
        w = np.where(m, 1.0 / np.maximum(counts, 1), 0.0)
    return _record(
        (a.data * w).sum(axis=ax),
        (a,),
        lambda g: (np.expand_dims(g, ax) * w,),
        "avg_pool",
    )


# -- nonlinearities --------------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0.0  # subgradient at 0 is 0
    return _record(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x):
    # tanh form: no overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _record(y, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NonFiniteError("log of non-positive value")
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if (a.data < 0).any():
        raise NonFiniteError("sqrt of negative value")
    y = np.sqrt(a.data)
    return _record(y, (a,), lambda g: (g * 0.5 / np.maximum(y, 1e-300),), "sqrt")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _record(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def _softmax_data(x, axis, m):
    if m is None:
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)
    shifted = np.where(m, x, -np.inf)
    top = shifted.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(m, np.exp(np.where(m, x - top, 0.0)), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    return np.where(total > 0, e / np.where(total > 0, total, 1.0), 0.0)


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax over ``axis``; masked entries get probability 0.

    A slice with no valid entry yields all zeros.
    """
    a = as_tensor(a)
    m = _valid_mask("softmax", a, mask, axis)
    p = _softmax_data(a.data, axis, m)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _record(p, (a,), backward, "softmax")


def log_softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Log-softmax over ``axis``; masked entries are reported as 0 and get no gradient."""
    a = as_tensor(a)
    m = _valid_mask("log_softmax", a, mask, axis)
    p = _softmax_data(a.data, axis, m)
    if m is None:
        z = a.data - a.data.max(axis=axis, keepdims=True)
        out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    else:
        top = np.where(m, a.data, -np.inf).max(axis=axis, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        z = np.where(m, a.data - top, 0.0)
        lse = np.log(np.maximum(np.where(m, np.exp(z), 0.0).sum(axis=axis, keepdims=True), 1e-300))
        out = np.where(m, z - lse, 0.0)

    def backward(g):
        gv = g if m is None else np.where(m, g, 0.0)
        return (gv - p * gv.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), backward, "log_softmax")


def cosine_similarity(a, b, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Cosine of the angle between ``a`` and ``b`` along ``axis`` (broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("cosine_similarity", a, b)
    na = np.maximum(np.linalg.norm(a.data, axis=axis, keepdims=True), eps)
    nb = np.maximum(np.linalg.norm(b.data, axis=axis, keepdims=True), eps)
    dot = (a.data * b.data).sum(axis=axis, keepdims=True)
    cos = dot / (na * nb)

    def backward(g):
        gk = np.expand_dims(g, axis)
        ga = gk * (b.data / (na * nb) - cos * a.data / (na * na))
        gb = gk * (a.data / (na * nb) - cos * b.data / (nb * nb))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(np.clip(cos, -1.0, 1.0).squeeze(axis), (a, b), backward, "cosine_similarity")
