"""Reverse-mode automatic differentiation on a per-call tape.

Values are numpy arrays. A ``Var`` wraps one array and remembers the primitive
that produced it together with one vector-Jacobian product per input. Nodes are
appended to their ``Tape`` in creation order, which is already a topological
order, so the backward pass is one reversed sweep over the tape.

Every primitive also accepts plain arrays and floats. When none of the
arguments is a ``Var`` the primitive simply evaluates with numpy, so model code
written against this module runs unchanged on and off the tape.

Kinks: ``maximum``/``minimum`` send the whole gradient to the left argument at
ties; ``hypot`` uses gradient 0 at the origin.
"""
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import NonFiniteError

VJP = Callable[[np.ndarray], np.ndarray]


class Tape:
    """Ordered record of the nodes built during one differentiated call."""

    __slots__ = ("nodes",)

    def __init__(self) -> None:
        self.nodes: List["Var"] = []


class Var:
    """An array value tracked on a tape."""

    __slots__ = ("value", "tape", "parents", "grad", "primitive")
    # Make ndarray <op> Var defer to the Var's reflected operator.
    __array_ufunc__ = None

    def __init__(
        self,
        value: np.ndarray,
        tape: Tape,
        parents: Tuple[Tuple["Var", VJP], ...] = (),
        primitive: str = "leaf",
    ) -> None:
        self.value = value
        self.tape = tape
        self.parents = parents
        self.grad: Optional[np.ndarray] = None
        self.primitive = primitive
        tape.nodes.append(self)

    @property
    def shape(self) -> Tuple[int, ...]:
        return np.shape(self.value)

    @property
    def ndim(self) -> int:
        return np.ndim(self.value)

    @property
    def size(self) -> int:
        return int(np.size(self.value))

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Var({self.primitive}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def value(x: Any):
    """Return the numpy value behind ``x`` (identity for plain arrays)."""
    return x.value if isinstance(x, Var) else x


def _tape_of(args: Sequence[Any]) -> Tape:
    tape = None
    for arg in args:
        if isinstance(arg, Var):
            if tape is None:
                tape = arg.tape
            elif arg.tape is not tape:
                raise ValueError("cannot combine values recorded on different tapes")
    return tape


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if np.shape(grad) == tuple(shape):
        return grad
    extra = np.ndim(grad) - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return np.reshape(grad, shape)


def _record(primitive: str, out, links: Sequence[Tuple[Any, VJP]]):
    """Attach ``out`` to the tape of its Var inputs, or return it untouched."""
    inputs = [item for item, _ in links]
    if not any(isinstance(item, Var) for item in inputs):
        return out
    out = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(primitive)
    tape = _tape_of(inputs)
    parents = tuple((item, vjp) for item, vjp in links if isinstance(item, Var))
    return Var(out, tape, parents, primitive)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(x, y):
    xv, yv = value(x), value(y)
    out = np.add(xv, yv)
    return _record(
        "add",
        out,
        [
            (x, lambda g: _unbroadcast(g, np.shape(xv))),
            (y, lambda g: _unbroadcast(g, np.shape(yv))),
        ],
    )


def subtract(x, y):
    xv, yv = value(x), value(y)
    out = np.subtract(xv, yv)
    return _record(
        "subtract",
        out,
        [
            (x, lambda g: _unbroadcast(g, np.shape(xv))),
            (y, lambda g: _unbroadcast(-g, np.shape(yv))),
        ],
    )


def multiply(x, y):
    xv, yv = value(x), value(y)
    out = np.multiply(xv, yv)
    return _record(
        "multiply",
        out,
        [
            (x, lambda g: _unbroadcast(g * yv, np.shape(xv))),
            (y, lambda g: _unbroadcast(g * xv, np.shape(yv))),
        ],
    )


def divide(x, y):
    xv, yv = value(x), value(y)
    out = np.divide(xv, yv)
    return _record(
        "divide",
        out,
        [
            (x, lambda g: _unbroadcast(g / yv, np.shape(xv))),
            (y, lambda g: _unbroadcast(-g * out / yv, np.shape(yv))),
        ],
    )


def negative(x):
    out = np.negative(value(x))
    return _record("negative", out, [(x, lambda g: -g)])


def power(x, exponent):
    if isinstance(exponent, Var):
        raise TypeError("power only supports constant exponents")
    xv = value(x)
    out = np.power(xv, exponent)
    return _record(
        "power",
        out,
        [(x, lambda g: _unbroadcast(g * exponent * np.power(xv, np.subtract(exponent, 1.0)), np.shape(xv)))],
    )


def square(x):
    return multiply(x, x)


def exp(x):
    out = np.exp(value(x))
    return _record("exp", out, [(x, lambda g: g * out)])


def log(x):
    xv = value(x)
    out = np.log(xv)
    return _record("log", out, [(x, lambda g: g / xv)])


def sqrt(x):
    out = np.sqrt(value(x))
    return _record("sqrt", out, [(x, lambda g: 0.5 * g / out)])


def hypot(x, y):
    """sqrt(x^2 + y^2) with gradient 0 at the origin."""
    xv, yv = value(x), value(y)
    out = np.hypot(xv, yv)
    positive = out > 0.0
    safe = np.where(positive, out, 1.0)
    return _record(
        "hypot",
        out,
        [
            (x, lambda g: _unbroadcast(g * np.where(positive, xv / safe, 0.0), np.shape(xv))),
            (y, lambda g: _unbroadcast(g * np.where(positive, yv / safe, 0.0), np.shape(yv))),
        ],
    )


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def tanh(x):
    out = np.tanh(value(x))
    return _record("tanh", out, [(x, lambda g: g * (1.0 - out * out))])


def sigmoid(x):
    out = expit(value(x))
    return _record("sigmoid", out, [(x, lambda g: g * out * (1.0 - out))])


def softplus(x):
    xv = value(x)
    out = np.logaddexp(0.0, xv)
    return _record("softplus", out, [(x, lambda g: g * expit(xv))])


def relu(x):
    xv = value(x)
    out = np.maximum(xv, 0.0)
    return _record("relu", out, [(x, lambda g: g * (xv > 0.0))])


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def maximum(x, y):
    xv, yv = value(x), value(y)
    out = np.maximum(xv, yv)
    left = xv >= yv
    return _record(
        "maximum",
        out,
        [
            (x, lambda g: _unbroadcast(g * left, np.shape(xv))),
            (y, lambda g: _unbroadcast(g * ~left, np.shape(yv))),
        ],
    )


def minimum(x, y):
    xv, yv = value(x), value(y)
    out = np.minimum(xv, yv)
    left = xv <= yv
    return _record(
        "minimum",
        out,
        [
            (x, lambda g: _unbroadcast(g * left, np.shape(xv))),
            (y, lambda g: _unbroadcast(g * ~left, np.shape(yv))),
        ],
    )


def clip(x, lower, upper):
    return minimum(maximum(x, lower), upper)


def where(condition, x, y):
    cond = np.asarray(value(condition), dtype=bool)
    xv, yv = value(x), value(y)
    out = np.where(cond, xv, yv)
    return _record(
        "where",
        out,
        [
            (x, lambda g: _unbroadcast(g * cond, np.shape(xv))),
            (y, lambda g: _unbroadcast(g * ~cond, np.shape(yv))),
        ],
    )


# ---------------------------------------------------------------------------
# Reductions and shape
# ---------------------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy naming
    xv = value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    shape = np.shape(xv)
    return _record("sum", out, [(x, lambda g: _expand_reduced(g, shape, axis, keepdims))])


def mean(x, axis=None, keepdims: bool = False):
    xv = value(x)
    count = np.size(xv) if axis is None else np.prod([np.shape(xv)[a] for a in np.atleast_1d(axis)])
    return divide(sum(x, axis=axis, keepdims=keepdims), float(count))


def matmul(x, w):
    """``x @ w`` for ``x`` of shape (..., n) and a 2-D ``w``."""
    xv, wv = value(x), value(w)
    if np.ndim(wv) != 2:
        raise ValueError("matmul expects a 2-D right operand")
    if np.shape(xv)[-1] != np.shape(wv)[0]:
        raise ValueError(f"shape mismatch: {np.shape(xv)} @ {np.shape(wv)}")
    out = np.matmul(xv, wv)
    n_in, n_out = np.shape(wv)

    def grad_x(g):
        return np.matmul(g, wv.T)

    def grad_w(g):
        return np.reshape(xv, (-1, n_in)).T @ np.reshape(g, (-1, n_out))

    return _record("matmul", out, [(x, grad_x), (w, grad_w)])


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(item, (slice, int, np.integer)) or item is None or item is Ellipsis for item in items)


def getitem(x, index):
    xv = value(x)
    out = xv[index]
    shape = np.shape(xv)

    def grad(g):
        full = np.zeros(shape)
        if _is_basic_index(index):
            full[index] = g
        else:
            np.add.at(full, index, g)
        return full

    return _record("getitem", out, [(x, grad)])


def reshape(x, shape):
    xv = value(x)
    out = np.reshape(xv, shape)
    original = np.shape(xv)
    return _record("reshape", out, [(x, lambda g: np.reshape(g, original))])


def broadcast_to(x, shape):
    xv = value(x)
    out = np.broadcast_to(xv, shape)
    original = np.shape(xv)
    return _record("broadcast_to", out, [(x, lambda g: _unbroadcast(g, original))])


def concatenate(items: Sequence[Any], axis: int = -1):
    values = [value(item) for item in items]
    out = np.concatenate([np.asarray(v, dtype=float) for v in values], axis=axis)
    sizes = [np.shape(v)[axis] for v in values]
    cuts = np.cumsum(sizes)[:-1]

    links = []
    for position, item in enumerate(items):
        def grad(g, position=position):
            return np.split(g, cuts, axis=axis)[position]

        links.append((item, grad))
    return _record("concatenate", out, links)


def take_along_axis(x, indices: np.ndarray, axis: int = -1):
    xv = value(x)
    indices = np.asarray(indices)
    out = np.take_along_axis(xv, indices, axis=axis)
    shape = np.shape(xv)

    def grad(g):
        full = np.zeros(shape)
        grid = list(np.indices(indices.shape, sparse=True))
        grid[axis] = indices
        np.add.at(full, tuple(grid), g)
        return full

    return _record("take_along_axis", out, [(x, grad)])


def sorted_sum(x, axis: int = -1, keepdims: bool = False):
    """Sum after sorting along ``axis``; the result does not depend on element order."""
    order = np.argsort(value(x), axis=axis, kind="stable")
    return sum(take_along_axis(x, order, axis=axis), axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# Differentiation entry points
# ---------------------------------------------------------------------------


def backward(output: Var) -> None:
    """Propagate d(output)/d(node) into ``node.grad`` for every node on the tape."""
    if output.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    output.grad = np.ones_like(output.value)
    for node in reversed(output.tape.nodes):
        if node.grad is None or not node.parents:
            continue
        for parent, vjp in node.parents:
            contribution = vjp(node.grad)
            if not np.all(np.isfinite(contribution)):
                raise NonFiniteError(f"{node.primitive} (backward)")
            parent.grad = contribution if parent.grad is None else parent.grad + contribution


def value_and_grad(fn: Callable, x, has_aux: bool = False):
    """Evaluate ``fn(x)`` and its gradient with respect to the array ``x``.

    ``fn`` must return a scalar (or ``(scalar, aux)`` when ``has_aux``).

    Returns:
        ``(value, grad)`` or ``(value, grad, aux)``.
    """
    x = np.array(getattr(x, "values", x), dtype=float, copy=True)
    tape = Tape()
    leaf = Var(x, tape)
    result = fn(leaf)
    out, aux = result if has_aux else (result, None)

    if isinstance(out, Var):
        backward(out)
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(x)
        scalar = float(np.reshape(out.value, ()))
    else:
        grad = np.zeros_like(x)
        scalar = float(np.reshape(out, ()))

    grad = np.array(np.broadcast_to(grad, x.shape), dtype=float)
    return (scalar, grad, aux) if has_aux else (scalar, grad)


def gradient(loss_fn: Callable, params) -> np.ndarray:
    """Exact reverse-mode gradient of a scalar ``loss_fn`` at ``params``."""
    return value_and_grad(loss_fn, params)[1]


__all__ = [
    "Tape",
    "Var",
    "add",
    "backward",
    "broadcast_to",
    "clip",
    "concatenate",
    "divide",
    "exp",
    "getitem",
    "gradient",
    "hypot",
    "log",
    "matmul",
    "maximum",
    "mean",
    "minimum",
    "multiply",
    "negative",
    "power",
    "relu",
    "reshape",
    "sigmoid",
    "softplus",
    "sorted_sum",
    "sqrt",
    "square",
    "subtract",
    "sum",
    "take_along_axis",
    "tanh",
    "value",
    "value_and_grad",
    "where",
]
