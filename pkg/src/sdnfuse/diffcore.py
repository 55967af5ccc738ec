"""Minimal reverse-mode differentiation over dense 2-D float64 matrices.

Every quantity is a :class:`Value` holding a ``(rows, cols)`` array and a
gradient slot of the same shape. Operations record themselves on the active
:class:`Tape`; :func:`backward` replays that tape in reverse.

Broadcasting is limited to what the fusion model needs: a ``1 x n`` row or a
``p x 1`` column (or a ``1 x 1`` scalar) against a ``p x n`` matrix.

>>> x = Value([[1.0, 2.0]])
>>> W = Value([[1.0, 1.0], [1.0, -1.0]], requires_grad=True)
>>> b = Value([[0.5, 0.5]], requires_grad=True)
>>> with Tape() as tape:
...     y = affine(x, W, b)
...     loss = sum(y)
...     backward(loss, tape)
>>> y.data
array([[ 3.5, -0.5]])
>>> W.grad
array([[1., 1.],
       [2., 2.]])
"""
from __future__ import annotations

import builtins
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

ARCCOS_CLAMP = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class DomainError(ValueError):
    """Input outside the mathematical domain of a primitive."""


def _as_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of shape {arr.shape}")
    return arr


class Value:
    """A matrix with a gradient slot and a handle into the tape."""

    __slots__ = ("data", "grad", "node", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_matrix(data)
        self.grad = np.zeros_like(self.data)
        self.node: int | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 value, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


def _lift(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def const(data) -> Value:
    """Wrap data as a constant: gradients never flow into it."""
    return Value(data.data if isinstance(data, Value) else data)


@dataclass
class Node:
    out: Value
    parents: tuple[Value, ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class Tape:
    """Ordered record of primitive operations.

    Parents are always recorded before children, so a reverse sweep over
    ``nodes`` is a valid reverse topological order.
    """

    nodes: list[Node] = field(default_factory=list)

    def record(self, out: Value, parents: tuple[Value, ...], backward_fn) -> Value:
        out.node = len(self.nodes)
        out.requires_grad = True
        self.nodes.append(Node(out, parents, backward_fn))
        return out

    def reset(self) -> None:
        """Zero every gradient slot the tape touched and forget all nodes."""
        for node in self.nodes:
            node.out.zero_grad()
            node.out.node = None
            for p in node.parents:
                p.zero_grad()
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)


_TAPES: list[Tape | None] = [Tape()]


def current_tape() -> Tape | None:
    return _TAPES[-1]


@contextmanager
def no_grad():
    """Evaluate without recording anything."""
    _TAPES.append(None)
    try:
        yield
    finally:
        _TAPES.pop()


def _recording(parents: tuple[Value, ...]) -> bool:
    return _TAPES[-1] is not None and any(p.requires_grad for p in parents)


def _emit(data: np.ndarray, parents: tuple[Value, ...], backward_fn) -> Value:
    out = Value.__new__(Value)
    out.data = data
    out.grad = np.zeros(data.shape)
    out.node = None
    out.requires_grad = False
    out.name = None
    tape = _TAPES[-1]
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = _colsum(g)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _colsum(g: np.ndarray) -> np.ndarray:
    # ones @ g is far faster than g.sum(axis=0) for tall narrow matrices
    return (np.ones(g.shape[0]) @ g)[None, :]


def _check_broadcast(a: Value, b: Value, opname: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{opname}: cannot combine shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- layers


def affine(x: Value, W: Value, b: Value | None = None) -> Value:
    """``x @ W (+ b)`` with ``b`` a ``1 x out`` row broadcast over samples."""
    if x.shape[1] != W.shape[0]:
        raise ShapeError(f"affine: x has shape {x.shape} but W has shape {W.shape}")
    if b is not None and b.shape != (1, W.shape[1]):
        raise ShapeError(f"affine: bias shape {b.shape} does not match W shape {W.shape}")
    return affine_sum([(x, W)], b)


def affine_sum(terms: Sequence[tuple[Value, Value]], b: Value | None = None) -> Value:
    """``sum_j x_j @ W_j (+ b)``: one node for a densely connected layer input.

    Evaluated as a single product of the column-stacked inputs with the
    row-stacked weights.
    """
    if not terms:
        raise ShapeError("affine_sum needs at least one (x, W) pair")
    rows = terms[0][0].shape[0]
    cols = terms[0][1].shape[1]
    for x, W in terms:
        if x.shape[1] != W.shape[0] or x.shape[0] != rows or W.shape[1] != cols:
            raise ShapeError(f"affine_sum: x has shape {x.shape} but W has shape {W.shape}")
    if len(terms) == 1:
        X, Wcat = terms[0][0].data, terms[0][1].data
    else:
        X = np.concatenate([x.data for x, _ in terms], axis=1)
        Wcat = np.concatenate([W.data for _, W in terms], axis=0)
    out = X @ Wcat
    if b is not None:
        out += b.data
    parents = tuple(v for pair in terms for v in pair)
    if b is not None:
        parents += (b,)
    splits = np.cumsum([x.shape[1] for x, _ in terms])[:-1]

    def backward_fn(g):
        gX = np.split(g @ Wcat.T, splits, axis=1)
        gW = np.split(X.T @ g, splits, axis=0)
        grads = []
        for (x, W), gx, gw in zip(terms, gX, gW):
            grads.append(gx if x.requires_grad else None)
            grads.append(gw if W.requires_grad else None)
        if b is not None:
            grads.append(_colsum(g))
        return grads

    return _emit(out, parents, backward_fn)


def matmul(a: Value, b: Value) -> Value:
    return affine(a, b)


def take_rows(x: Value, index: np.ndarray) -> Value:
    """Rows of ``x`` gathered by ``index`` (repeats allowed)."""
    index = np.asarray(index, dtype=np.intp)

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _emit(x.data[index], (x,), backward_fn)


def transpose(x: Value) -> Value:
    return _emit(x.data.T.copy(), (x,), lambda g: (g.T,))


# ---------------------------------------------------------------- activations


def _logistic(d: np.ndarray) -> np.ndarray:
    # exp overflow gives inf and then exactly 0, never NaN
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-d))


def sigmoid(x: Value) -> Value:
    y = _logistic(x.data)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def softplus(x: Value) -> Value:
    """``log(1 + e^x)`` as ``max(x, 0) + log1p(e^-|x|)``."""
    d = x.data
    y = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    return _emit(y, (x,), lambda g: (g * _logistic(d),))


def identity(x: Value) -> Value:
    return x


ACTIVATIONS: dict[str, Callable[[Value], Value]] = {
    "sigmoid": sigmoid,
    "softplus": softplus,
    "identity": identity,
}


# ---------------------------------------------------------------- elementwise


def add(a: Value, b: Value) -> Value:
    _check_broadcast(a, b, "add")
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Value, b: Value) -> Value:
    _check_broadcast(a, b, "sub")
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Value, b: Value) -> Value:
    _check_broadcast(a, b, "mul")
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a: Value, b: Value) -> Value:
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0.0):
        raise DomainError("div: zero denominator")
    return _emit(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / b.data**2, b.shape)))


def scalar_mul(x: Value, k: float) -> Value:
    return _emit(x.data * k, (x,), lambda g: (g * k,))


def log(x: Value) -> Value:
    if np.any(x.data <= 0.0):
        raise DomainError("log: non-positive input")
    return _emit(np.log(x.data), (x,), lambda g: (g / x.data,))


def arccos(x: Value) -> Value:
    d = x.data
    if np.any(np.abs(d) > 1.0):
        raise DomainError("arccos: input outside [-1, 1]")
    return _emit(np.arccos(d), (x,), lambda g: (-g / np.sqrt(1.0 - d * d),))


def clamp(x: Value, lo: float, hi: float) -> Value:
    d = x.data
    inside = (d >= lo) & (d <= hi)
    return _emit(np.clip(d, lo, hi), (x,), lambda g: (g * inside,))


def maximum(x: Value, floor: float) -> Value:
    keep = x.data > floor
    return _emit(np.where(keep, x.data, floor), (x,), lambda g: (g * keep,))


def square(x: Value) -> Value:
    return _emit(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x: Value) -> Value:
    if np.any(x.data < 0.0):
        raise DomainError("sqrt: negative input")
    y = np.sqrt(x.data)
    return _emit(y, (x,), lambda g: (g / (2.0 * y),))


def sum(x: Value, axis: int | None = None) -> Value:  # noqa: A001
    """Sum of all entries (``1 x 1``) or along ``axis`` (kept as a row/column)."""
    if axis is None:
        y = np.array([[x.data.sum()]])
    else:
        y = x.data.sum(axis=axis, keepdims=True)
    return _emit(y, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Value, axis: int | None = None) -> Value:
    n = x.data.size if axis is None else x.shape[axis]
    return scalar_mul(sum(x, axis), 1.0 / n)


# ---------------------------------------------------------------- fused kernels


def kumaraswamy_inverse(u: Value, beta: Value) -> Value:
    """``1 - (1 - u)^(1/beta)`` with ``beta`` a column broadcast over ``u``."""
    if beta.shape != (u.shape[0], 1):
        raise ShapeError(f"kumaraswamy_inverse: beta shape {beta.shape} vs u shape {u.shape}")
    if not _recording((u, beta)):
        return _emit(kernels.kuma_forward(u.data, beta.data), (u, beta), None)
    v, dv_du, dv_db = kernels.kuma_partials(u.data, beta.data)
    return _emit(v, (u, beta), lambda g: (g * dv_du, (g * dv_db).sum(axis=1, keepdims=True)))


def stick_break(v: Value) -> Value:
    """Finite stick-breaking: ``p x (c-1)`` fractions to ``p x c`` simplex rows."""
    s = kernels.stick_forward(v.data)
    return _emit(s, (v,), lambda g: (kernels.stick_backward(v.data, g),))


def entropy_function(s: Value, p: float = 1.0, eps: float = 1e-12) -> Value:
    """Mean over rows of the normalized-magnitude entropy of each row."""
    if not _recording((s,)):
        return _emit(np.array([[kernels.entropy_forward(s.data, p, eps)]]), (s,), None)
    h, gs = kernels.entropy_value_and_grad(s.data, p, eps)
    return _emit(np.array([[h]]), (s,), lambda g: (gs * g[0, 0],))


def mean_row_angle(a: Value, b: Value, clamp: float = ARCCOS_CLAMP) -> Value:
    """Mean over rows of the angle (radians) between matching rows of ``a`` and ``b``."""
    if a.shape != b.shape:
        raise ShapeError(f"mean_row_angle: shapes {a.shape} and {b.shape} differ")
    if not _recording((a, b)):
        return _emit(np.array([[kernels.angle_forward(a.data, b.data, clamp)]]), (a, b), None)
    theta, ga, gb = kernels.angle_value_and_grad(a.data, b.data, clamp)

    def backward_fn(g):
        k = g[0, 0]
        return (ga * k if a.requires_grad else None, gb * k if b.requires_grad else None)

    return _emit(np.array([[theta]]), (a, b), backward_fn)


# ---------------------------------------------------------------- backward


def backward(loss: Value, tape: Tape | None = None) -> None:
    """Accumulate ``d loss / d leaf`` into every reachable leaf's ``grad``.

    Intermediate gradient slots are overwritten on every call, while leaves
    (parameters) accumulate, so two calls without a reset double leaf grads.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    tape = tape if tape is not None else current_tape()
    if tape is None or loss.node is None:
        return
    if loss.node >= len(tape.nodes) or tape.nodes[loss.node].out is not loss:
        raise ContractError("loss was not recorded on this tape")
    nodes = tape.nodes[: loss.node + 1]
    pending: dict[int, np.ndarray] = {loss.node: np.ones((1, 1))}
    for node in reversed(nodes):
        out = node.out
        g = pending.pop(out.node, None)
        if g is None:
            out.grad = np.zeros(out.data.shape)
            continue
        out.grad = g
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            k = parent.node
            if k is None or k >= len(nodes) or nodes[k].out is not parent:
                # a leaf, or a value recorded on some other tape
                parent.grad += pg
            elif k in pending:
                pending[k] = pending[k] + pg
            else:
                pending[k] = pg


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Ordered, named collection of trainable leaf values."""

    def __init__(self, values: dict[str, np.ndarray] | None = None):
        self._values: dict[str, Value] = {}
        for name, arr in (values or {}).items():
            self.add(name, arr)

    def add(self, name: str, data) -> Value:
        if name in self._values:
            raise KeyError(f"duplicate parameter {name!r}")
        v = Value(data, requires_grad=True, name=name)
        self._values[name] = v
        return v

    def __getitem__(self, name: str) -> Value:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self):
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def values(self) -> list[Value]:
        return list(self._values.values())

    def items(self):
        return self._values.items()

    def zero_grad(self) -> None:
        for v in self._values.values():
            v.zero_grad()

    def size(self) -> int:
        return builtins.sum(v.data.size for v in self._values.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._values.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, arr in state.items():
            if self._values[k].shape != arr.shape:
                raise ShapeError(f"{k}: stored shape {arr.shape} vs {self._values[k].shape}")
            self._values[k].data[...] = arr

    def frozen(self) -> dict[str, Value]:
        """Constant copies of every parameter, for paths that must not train them."""
        return {k: const(v) for k, v in self._values.items()}

    @classmethod
    def merged(cls, *stores: "ParamStore") -> "ParamStore":
        """A view store sharing the underlying leaf values of ``stores``."""
        out = cls()
        for st in stores:
            for k, v in st.items():
                if k in out._values:
                    raise KeyError(f"duplicate parameter {k!r}")
                out._values[k] = v
        return out


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    failures: list[tuple[str, tuple[int, int], float, float, float]]
    tol: float
    floor: float = 0.0
    # coordinates with max(|analytic|, |numeric|) < floor, whose error is measured against the floor
    n_below_floor: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "ok" if self.ok else f"{len(self.failures)} failing"
        return (f"max rel err {self.max_rel_error:.3e} over {self.n_checked} coords "
                f"({self.n_below_floor} below floor {self.floor:.2e}, {status})")


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom


# allowance for rounding accumulated while evaluating f, in ulps of |f|
FD_ROUNDING_ULPS = 4.0


def resolution_floor(f_value: float, h: float, tol: float) -> float:
    """Smallest gradient magnitude a central difference resolves to ``tol``.

    With ``f`` accurate to ``k`` ulps the central difference carries an
    absolute error near ``k * eps * |f| / h``; below
    ``k * eps * max(|f|, 1) / (h * tol)`` that roundoff alone exceeds ``tol``.
    """
    eps = np.finfo(np.float64).eps
    return float(FD_ROUNDING_ULPS * eps * max(abs(f_value), 1.0) / (h * tol))


def finite_diff_check(
    f: Callable[[], Value],
    params: ParamStore | Iterable[Value],
    h: float = 1e-5,
    tol: float = 1e-5,
    floor: float | None = None,
) -> GradCheckReport:
    """Compare backward-pass gradients of ``f`` with central differences.

    ``f`` takes no arguments and reads the current parameter data. The
    relative error of each coordinate uses ``max(|analytic|, |numeric|, floor)``
    as denominator, so coordinates whose gradient is below ``floor`` are
    judged on absolute error. ``floor=None`` uses :func:`resolution_floor`.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    values = params.values() if isinstance(params, ParamStore) else list(params)
    for v in values:
        v.zero_grad()
    with Tape() as tape:
        loss = f()
        backward(loss, tape)
    if floor is None:
        floor = resolution_floor(loss.item(), h, tol)
    analytic = [v.grad.copy() for v in values]
    tape.reset()

    failures = []
    worst = 0.0
    count = 0
    below = 0
    with no_grad():
        for v, grad in zip(values, analytic):
            for idx in np.ndindex(*v.shape):
                orig = v.data[idx]
                v.data[idx] = orig + h
                fp = f().item()
                v.data[idx] = orig - h
                fm = f().item()
                v.data[idx] = orig
                numeric = (fp - fm) / (2.0 * h)
                err = relative_error(float(grad[idx]), numeric, floor)
                below += max(abs(grad[idx]), abs(numeric)) < floor
                worst = max(worst, err)
                count += 1
                if err > tol:
                    failures.append((v.name or "?", idx, float(grad[idx]), numeric, err))
    for v in values:
        v.zero_grad()
    return GradCheckReport(worst, count, failures, tol, floor, int(below))
