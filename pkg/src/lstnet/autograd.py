"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation on :class:`Tensor` objects records its inputs and a closure
computing the vector-Jacobian product.  Nodes carry a monotonically increasing
id, so sorting the reachable nodes by id gives a valid topological order
(insertion order) for the backward sweep.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

_ids = itertools.count()
_grad_enabled = True
_default_dtype = np.dtype(np.float32)

LOG_FLOOR = 1e-7


class NonFiniteError(FloatingPointError):
    """Raised as soon as an operation produces NaN or Inf."""


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


class Tensor:
    """An immutable-shape numpy array that can take part in a computation graph."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _default_dtype
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """Trainable tensor with a persistent gradient buffer and Adam state."""

    def __init__(self, name: str, value, dtype=None):
        super().__init__(np.array(value, dtype=dtype or _default_dtype), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.t = 0

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _default_dtype))


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op's output, recording it in the graph when any parent needs a gradient."""
    _check_finite(data, op)
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(output: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(output)/d(leaf) into the ``grad`` of every reachable leaf.

    ``output`` must be a scalar unless an explicit seed gradient is supplied.
    """
    if grad is None:
        if output.shape != ():
            raise ValueError(f"backward requires a scalar output, got shape {output.shape}")
        grad = np.ones((), dtype=output.dtype)
    if not output.requires_grad:
        return

    nodes: dict[int, Tensor] = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {output._id: np.asarray(grad, dtype=output.dtype)}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if node._backward is None:
            _check_finite(g, f"backward into {node!r}")
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, f"backward of '{node.op}'")
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# elementwise and reduction ops ---------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), bw, "add")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), bw, "mul")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return make_node(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    return make_node(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise ValueError("mean of an empty tensor")
    n = a.data.size
    out = np.asarray(a.data.mean(), dtype=a.dtype)
    return make_node(out, (a,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),), "mean")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def abs_(a: Tensor) -> Tensor:
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log of a non-positive value")
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clamped_log(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """log(max(a, floor)); the gradient is zero where the floor is active."""
    active = a.data > floor
    safe = np.where(active, a.data, floor)
    out = np.log(safe).astype(a.dtype, copy=False)
    return make_node(out, (a,), lambda g: (np.where(active, g / safe, 0).astype(a.dtype, copy=False),), "clamped_log")


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data).astype(a.dtype, copy=False)
    return make_node(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


tanh_act = tanh


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0 < slope < 1:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    positive = a.data >= 0
    out = np.where(positive, a.data, slope * a.data)
    return make_node(out, (a,), lambda g: (np.where(positive, g, slope * g),), "leaky_relu")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data
    return make_node(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tuple(tensors), bw, "concat")


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


@contextlib.contextmanager
def frozen(params: Iterable[Parameter]):
    """Treat the given parameters as constants inside the block."""
    params = list(params)
    previous = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, previous):
            p.requires_grad = flag
