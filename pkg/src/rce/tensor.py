"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a contiguous row-major ``float64`` ndarray. Operations
called while a :class:`Tape` is active, on inputs where at least one needs a
gradient, append a node holding the backward rule. :func:`backward` replays
the nodes in reverse order and accumulates ``grad`` on every tensor that
requires one.

Broadcasting is deliberately narrow: scalar-with-tensor and equal shapes.
Row-wise broadcasts that a network needs (bias add, per-row scaling,
per-sample matrix-vector products) are separate, explicit ops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not fit the operation."""


class DomainError(ValueError):
    """Input outside the mathematical domain of the operation."""


class ContractError(RuntimeError):
    """Caller violated a precondition of the differentiation machinery."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim:
            arr = np.ascontiguousarray(arr)  # would promote 0-d to 1-d otherwise
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"non-positive dimension in shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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


Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    rule: Backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: Backward) -> None:
        self.nodes.append(_Node(out, inputs, rule))

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, rule)
    return out


def backward(loss: Tensor, tape: Tape, params: Sequence[Tensor] = ()) -> None:
    """Populate ``grad`` of every tensor on ``tape`` reachable from ``loss``.

    Gradients accumulate into existing ``grad`` arrays, so call
    ``zero_grad`` on parameters between steps. Tensors in ``params`` that the
    loss does not depend on get an explicit zero gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad:
        if not any(node.out is loss for node in tape.nodes):
            raise ContractError("loss was not produced on this tape")
        seed = np.ones_like(loss.data)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        for node in reversed(tape.nodes):
            g = node.out.grad
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.rule(g)):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi
    for p in params:
        if p.grad is None:
            p.grad = np.zeros(p.shape)


# -- broadcasting helpers -----------------------------------------------------


def _is_scalar(t: Tensor) -> bool:
    return t.size == 1


def _binary_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if _is_scalar(b):
        return a.shape
    if _is_scalar(a):
        return b.shape
    raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.full(t.shape, g.sum())


def _bval(t: Tensor, shape: tuple[int, ...]) -> np.ndarray:
    # scalar operands are used as plain floats so results keep the tensor shape
    if t.shape == shape:
        return t.data
    return t.data.reshape(-1)[0]


# -- elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    shape = _binary_shape(a, b)
    data = np.asarray(_bval(a, shape) + _bval(b, shape)).reshape(shape)
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    shape = _binary_shape(a, b)
    data = np.asarray(_bval(a, shape) - _bval(b, shape)).reshape(shape)
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    shape = _binary_shape(a, b)
    av, bv = _bval(a, shape), _bval(b, shape)
    data = np.asarray(av * bv).reshape(shape)
    return _result(data, (a, b), lambda g: (_unbroadcast(g * bv, a), _unbroadcast(g * av, b)))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    shape = _binary_shape(a, b)
    av, bv = _bval(a, shape), _bval(b, shape)
    if np.any(bv == 0):
        raise DomainError("division by zero")
    data = np.asarray(av / bv).reshape(shape)

    def rule(g):
        return _unbroadcast(g / bv, a), _unbroadcast(-g * av / (bv * bv), b)

    return _result(data, (a, b), rule)


def neg(x) -> Tensor:
    x = _wrap(x)
    return _result(-x.data, (x,), lambda g: (-g,))


def exp(x) -> Tensor:
    x = _wrap(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = _wrap(x)
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive input")
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    return _result(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))  # keeps NaN visible


def softplus(x) -> Tensor:
    x = _wrap(x)
    return _result(softplus_np(x.data), (x,), lambda g: (g * _sigmoid(x.data),))


def identity(x) -> Tensor:
    return _wrap(x)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where the clamp is active."""
    x = _wrap(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus_np(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "relu": relu,
    "softplus": softplus,
    "identity": identity,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# -- reductions and structure ---------------------------------------------------


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    x = _wrap(x)
    if axis is None:
        return _result(np.asarray(x.data.sum()).reshape(()), (x,),
                       lambda g: (np.broadcast_to(g, x.shape),))
    ax = axis % x.ndim
    data = x.data.sum(axis=ax)
    if data.ndim == 0:
        data = data.reshape(())
    return _result(data, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, ax), x.shape),))


def mean(x, axis: int | None = None) -> Tensor:
    x = _wrap(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _wrap(x)
    try:
        data = x.data.reshape(shape)
    except ValueError as err:
        raise DimensionError(str(err)) from None
    return _result(data, (x,), lambda g: (g.reshape(x.shape),))


def cols(x, start: int, stop: int) -> Tensor:
    """Slice ``[start, stop)`` of the last axis."""
    x = _wrap(x)
    if not 0 <= start < stop <= x.shape[-1]:
        raise DimensionError(f"column range [{start}, {stop}) out of {x.shape}")

    def rule(g):
        full = np.zeros(x.shape)
        full[..., start:stop] = g
        return (full,)

    return _result(x.data[..., start:stop], (x,), rule)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = tuple(_wrap(x) for x in xs)
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as err:
        raise DimensionError(str(err)) from None
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def rule(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(xs)))

    return _result(data, xs, rule)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul of {a.shape} and {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def add_bias(x, b) -> Tensor:
    """``x[i, :] + b`` for every row ``i``."""
    x, b = _wrap(x), _wrap(b)
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"bias {b.shape} does not fit rows of {x.shape}")
    return _result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def scale_rows(x, s) -> Tensor:
    """``x[i, :] * s[i]`` for every row ``i``."""
    x, s = _wrap(x), _wrap(s)
    if x.ndim != 2 or s.shape != (x.shape[0],):
        raise DimensionError(f"row scales {s.shape} do not fit {x.shape}")
    sc = s.data[:, None]
    return _result(x.data * sc, (x, s), lambda g: (g * sc, (g * x.data).sum(axis=1)))


def batched_matvec(m, v) -> Tensor:
    """``m[i] @ v[i]`` for a stack of matrices ``m`` (N, a, b) and vectors ``v`` (N, b)."""
    m, v = _wrap(m), _wrap(v)
    if m.ndim != 3 or v.ndim != 2 or m.shape[0] != v.shape[0] or m.shape[2] != v.shape[1]:
        raise DimensionError(f"batched_matvec of {m.shape} and {v.shape}")
    data = np.einsum("nab,nb->na", m.data, v.data)

    def rule(g):
        return g[:, :, None] * v.data[:, None, :], np.einsum("nab,na->nb", m.data, g)

    return _result(data, (m, v), rule)


# -- networks --------------------------------------------------------------------

_ACTIVATIONS = {
    "identity": identity,
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
}


@dataclass
class Layer:
    weight: Tensor  # (fan_in, fan_out)
    bias: Tensor  # (fan_out,)
    activation: str = "identity"

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


def mlp_forward(layers: Sequence[Layer], x) -> Tensor:
    """Apply ``act(x @ W + b)`` layer by layer.

    A 1-D input is treated as a single row and the result is returned 1-D.
    """
    x = _wrap(x)
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, x.shape[0]))
    for i, layer in enumerate(layers):
        if x.shape[1] != layer.fan_in:
            raise DimensionError(f"layer {i} expects width {layer.fan_in}, got {x.shape[1]}")
        x = _ACTIVATIONS[layer.activation](add_bias(matmul(x, layer.weight), layer.bias))
    if single:
        x = reshape(x, (x.shape[1],))
    return x


def glorot_layer(rng: np.random.Generator, fan_in: int, fan_out: int,
                 activation: str, name: str = "") -> Layer:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), True, f"{name}.weight")
    b = Tensor(np.zeros(fan_out), True, f"{name}.bias")
    return Layer(w, b, activation)
