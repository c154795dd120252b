"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` records every operation executed while it is active::

    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.square(x))
    tape.backward(y)
    x.grad  # -> [2., 4., 6.]

Outside an active tape operations are evaluated eagerly and nothing is
recorded, which is how evaluation code runs without paying for adjoints.
"""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

EPS = 1e-12

_local = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def _clamp_counter() -> Counter:
    if not hasattr(_local, "clamps"):
        _local.clamps = Counter()
    return _local.clamps


def clamp_counts() -> dict[str, int]:
    """Number of entries clamped at ``EPS`` by log/div on this thread."""
    return dict(_clamp_counter())


def reset_clamp_counts() -> None:
    _clamp_counter().clear()


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Row-major float64 array that can participate in a tape."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite value while creating tensor {name or '<anon>'}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t.name = ""
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the functions below are the real implementation
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of operations; one tape per minibatch."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, rule) -> None:
        for t in inputs:
            if t.requires_grad and id(t) not in self._produced:
                self._leaves.setdefault(id(t), t)
        self.nodes.append(Node(op, inputs, output, rule))
        self._produced.add(id(output))

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())

    def backward(self, root: Tensor) -> None:
        backward(self, root)


def backward(tape: Tape, root: Tensor) -> None:
    """Populate ``grad`` of every leaf recorded on ``tape`` with d(root)/d(leaf).

    Leaves that do not influence ``root`` receive a zero gradient.
    """
    if root.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    if id(root) not in tape._produced:
        raise ContractError("backward root was not produced on this tape")
    adj: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = adj.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adj:
                adj[key] = adj[key] + gi
            else:
                adj[key] = gi
    for key, leaf in tape._leaves.items():
        g = adj.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.array(g, dtype=np.float64)


def _check_inputs(op: str, arrays) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError(f"non-finite input to op '{op}'")


def _make(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, rule) -> Tensor:
    if not np.isfinite(out).all():
        raise NumericError(f"non-finite output from op '{op}'")
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, needs)
    if needs:
        tape.record(op, inputs, result, rule)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary -----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape("add", a, b)
    _check_inputs("add", (a.data, b.data))
    return _make("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape("sub", a, b)
    _check_inputs("sub", (a.data, b.data))
    return _make("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape("mul", a, b)
    _check_inputs("mul", (a.data, b.data))
    return _make("mul", (a, b), a.data * b.data,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    """Elementwise ``a / b``; denominators with ``|b| < EPS`` are clamped to ``±EPS``."""
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape("div", a, b)
    _check_inputs("div", (a.data, b.data))
    small = np.abs(b.data) < EPS
    n_small = int(small.sum())
    if n_small:
        _clamp_counter()["div"] += n_small
        den = np.where(small, np.where(b.data < 0, -EPS, EPS), b.data)
    else:
        den = b.data
    out = a.data / den

    def rule(g):
        ga = g / den
        gb = -g * out / den
        if n_small:
            gb = np.where(small, 0.0, gb)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("div", (a, b), out, rule)


# -- elementwise unary ------------------------------------------------------

def neg(a) -> Tensor:
    a = as_tensor(a)
    _check_inputs("neg", (a.data,))
    return _make("neg", (a,), -a.data, lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    _check_inputs("exp", (a.data,))
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    """Natural log with inputs below ``EPS`` clamped to ``EPS`` (zero gradient there)."""
    a = as_tensor(a)
    _check_inputs("log", (a.data,))
    small = a.data < EPS
    n_small = int(small.sum())
    if n_small:
        _clamp_counter()["log"] += n_small
        x = np.where(small, EPS, a.data)
    else:
        x = a.data
    out = np.log(x)

    def rule(g):
        ga = g / x
        return (np.where(small, 0.0, ga) if n_small else ga,)

    return _make("log", (a,), out, rule)


def square(a) -> Tensor:
    a = as_tensor(a)
    _check_inputs("square", (a.data,))
    return _make("square", (a,), a.data * a.data, lambda g: (2.0 * a.data * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    _check_inputs("sqrt", (a.data,))
    if (a.data < 0).any():
        raise NumericError("negative input to op 'sqrt'")
    out = np.sqrt(a.data)
    return _make("sqrt", (a,), out, lambda g: (g * 0.5 / np.maximum(out, EPS),))


def abs(a) -> Tensor:  # noqa: A001 - mirrors the op-kind name
    """Absolute value; the subgradient at 0 is 0."""
    a = as_tensor(a)
    _check_inputs("abs", (a.data,))
    return _make("abs", (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    _check_inputs("tanh", (a.data,))
    out = np.tanh(a.data)
    return _make("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    _check_inputs("sigmoid", (a.data,))
    out = _sigmoid(a.data)
    return _make("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    _check_inputs("softplus", (a.data,))
    out = np.logaddexp(0.0, a.data)
    return _make("softplus", (a,), out, lambda g: (g * _sigmoid(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    _check_inputs("relu", (a.data,))
    mask = a.data > 0
    return _make("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; gradient passes only strictly inside the interval."""
    a = as_tensor(a)
    _check_inputs("clamp", (a.data,))
    mask = (a.data > lo) & (a.data < hi)
    return _make("clamp", (a,), np.clip(a.data, lo, hi), lambda g: (g * mask,))


# -- reductions and structure -----------------------------------------------

def _expand(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    _check_inputs("sum", (a.data,))
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)
    return _make("sum", (a,), out, lambda g: (_expand(g, a.shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _check_inputs("mean", (a.data,))
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims), dtype=np.float64)
    n = a.data.size / max(out.size, 1)
    return _make("mean", (a,), out, lambda g: (_expand(g, a.shape, axis, keepdims) / n,))


def logsumexp(a, axis: int = -1) -> Tensor:
    """Max-shifted ``log(sum(exp(a)))`` along one axis."""
    a = as_tensor(a)
    _check_inputs("logsumexp", (a.data,))
    m = a.data.max(axis=axis, keepdims=True)
    s = np.exp(a.data - m)
    tot = s.sum(axis=axis, keepdims=True)
    out = (np.log(tot) + m).squeeze(axis)
    soft = s / tot
    return _make("logsumexp", (a,), out, lambda g: (np.expand_dims(g, axis) * soft,))


def broadcast(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {shape}") from None
    return _make("broadcast", (a,), out, lambda g: (_unbroadcast(g, a.shape),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _make("transpose", (a,), a.data.T, lambda g: (g.T,))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make("concat", ts, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = np.array(a.data[index], dtype=np.float64)

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make("getitem", (a,), out, rule)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    _check_inputs("matmul", (a.data, b.data))
    return _make("matmul", (a, b), a.data @ b.data,
                 lambda g: (g @ b.data.T, a.data.T @ g))


OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul, "add": add, "mul": mul, "sub": sub, "div": div, "neg": neg,
    "exp": exp, "log": log, "square": square, "sqrt": sqrt, "abs": abs,
    "tanh": tanh, "sigmoid": sigmoid, "softplus": softplus, "relu": relu,
    "clamp": clamp, "sum": sum, "mean": mean, "logsumexp": logsumexp, "broadcast": broadcast,
    "reshape": reshape, "transpose": transpose, "concat": concat, "getitem": getitem,
}


def forward_op(name: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an op by its kind name; ``concat`` takes the tensors positionally."""
    try:
        fn = OPS[name]
    except KeyError:
        raise ContractError(f"unknown op kind {name!r}") from None
    if name == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)
