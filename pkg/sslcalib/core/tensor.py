"""Dense float64 tensors with tape-based reverse-mode differentiation.

The graph is rebuilt on every forward pass: each op that sees an input with
``requires_grad`` records its parents and a closure mapping the output
gradient to one gradient per parent.  :func:`backward` walks the tape once in
reverse topological order.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, Sequence[float], float]
GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


_GRAD_ENABLED = True
_OPEN_EPS = 1e-12


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation.

    Parameters
    ----------
    data : array-like
        Values; copied and converted to ``float64``.
    requires_grad : bool
        Leaves with this flag receive ``grad`` after :func:`backward`.
    name : str
        Label used in error messages and checkpoints.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = "") -> None:
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        _check_finite(self.data, name or "tensor")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._grad_fn: Optional[GradFn] = None
        self._op = "leaf"

    # ------------------------------------------------------------------
    # Construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Tuple["Tensor", ...], op: str, grad_fn: GradFn) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out._op = op
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._grad_fn = grad_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._grad_fn = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    # ------------------------------------------------------------------
    # Operator sugar
    # ------------------------------------------------------------------

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    def __radd__(self, other: float) -> "Tensor":
        return shift(self, float(other))

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __rsub__(self, other: float) -> "Tensor":
        return shift(neg(self), float(other))

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other: float) -> "Tensor":
        return scale(self, float(other))

    def __truediv__(self, other: float) -> "Tensor":
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ----------------------------------------------------------------------
# Elementwise binary ops (broadcast only over the leading batch dim)
# ----------------------------------------------------------------------

def _broadcast_axis(op: str, a: Tensor, b: Tensor) -> Optional[str]:
    """Return which operand (if any) is broadcast over the leading dim."""
    if a.shape == b.shape:
        return None
    if a.data.ndim >= 1 and b.shape == a.shape[1:]:
        return "b"
    if b.data.ndim >= 1 and a.shape == b.shape[1:]:
        return "a"
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _unbroadcast(grad: np.ndarray, which: Optional[str], side: str) -> np.ndarray:
    return grad.sum(axis=0) if which == side else grad


def add(a: Tensor, b: Tensor) -> Tensor:
    which = _broadcast_axis("add", a, b)

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(g, which, "a"), _unbroadcast(g, which, "b")

    return Tensor._from_op(a.data + b.data, (a, b), "add", grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    which = _broadcast_axis("sub", a, b)

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(g, which, "a"), -_unbroadcast(g, which, "b")

    return Tensor._from_op(a.data - b.data, (a, b), "sub", grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    which = _broadcast_axis("mul", a, b)
    a_data, b_data = a.data, b.data

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return _unbroadcast(g * b_data, which, "a"), _unbroadcast(g * a_data, which, "b")

    return Tensor._from_op(a_data * b_data, (a, b), "mul", grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    a_data, b_data = a.data, b.data

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return g @ b_data.T, a_data.T @ g

    return Tensor._from_op(a_data @ b_data, (a, b), "matmul", grad_fn)


# ----------------------------------------------------------------------
# Scalar-constant and unary ops
# ----------------------------------------------------------------------

def scale(x: Tensor, c: float) -> Tensor:
    return Tensor._from_op(x.data * c, (x,), "scale", lambda g: (g * c,))


def shift(x: Tensor, c: float) -> Tensor:
    return Tensor._from_op(x.data + c, (x,), "shift", lambda g: (g,))


def neg(x: Tensor) -> Tensor:
    return Tensor._from_op(-x.data, (x,), "neg", lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    x_data = x.data
    return Tensor._from_op(x_data * x_data, (x,), "square", lambda g: (2.0 * x_data * g,))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return Tensor._from_op(np.where(active, x.data, 0.0), (x,), "relu", lambda g: (g * active,))


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # float64 rounds to exactly 0 or 1 past |x| ~ 37; keep the range open
    out = np.clip(out, _OPEN_EPS, 1.0 - _OPEN_EPS)
    return Tensor._from_op(out, (x,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), "exp", lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    x_data = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x_data)
    return Tensor._from_op(out, (x,), "log", lambda g: (g / x_data,))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(out, (x,), "softmax", grad_fn)


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable ``log(softmax(x))`` over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op(out, (x,), "log_softmax", grad_fn)


# ----------------------------------------------------------------------
# Reductions and structure
# ----------------------------------------------------------------------

def tsum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    shape = x.shape

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._from_op(np.asarray(x.data.sum(axis=axis)), (x,), "sum", grad_fn)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError(f"mean: cannot reduce empty axis of shape {x.shape}")
    return scale(tsum(x, axis), 1.0 / count)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no tensors given")
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        other = [d for i, d in enumerate(t.shape) if i != ax]
        first = [d for i, d in enumerate(tensors[0].shape) if i != ax]
        if t.data.ndim != ndim or other != first:
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} do not conform on axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad_fn(g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return tuple(np.split(g, bounds, axis=ax))

    data = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor._from_op(data, tuple(tensors), "concat", grad_fn)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {original} as {shape}") from exc
    return Tensor._from_op(data, (x,), "reshape", lambda g: (g.reshape(original),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator, shared: bool = False) -> Tensor:
    """Inverted dropout.

    Survivors are scaled by ``1 / (1 - rate)``.  With ``shared=True`` a single
    mask is drawn for the trailing dims and reused for every row of the batch,
    which samples one thinned network per call.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask_shape = (1,) + x.shape[1:] if shared and x.data.ndim >= 1 else x.shape
    keep = (rng.random(mask_shape) >= rate) / (1.0 - rate)
    return Tensor._from_op(x.data * keep, (x,), "dropout", lambda g: (g * keep,))


# ----------------------------------------------------------------------
# Losses built from the primitives
# ----------------------------------------------------------------------

def cross_entropy(logits: Tensor, targets: np.ndarray, weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean soft-target cross-entropy ``-sum(t * log_softmax(z))`` over the batch.

    ``targets`` is a constant (B, M) probability matrix; ``weights`` an
    optional constant per-row factor applied before the mean.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError(f"cross_entropy: shapes {logits.shape} and {targets.shape} do not conform")
    per_row = neg(tsum(mul(log_softmax(logits), Tensor(targets)), axis=-1))
    if weights is not None:
        per_row = mul(per_row, Tensor(np.asarray(weights, dtype=np.float64)))
    return mean(per_row)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# ----------------------------------------------------------------------
# Backward pass and optimiser
# ----------------------------------------------------------------------

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen: set[int] = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` leaf reachable from *loss*.

    Raises
    ------
    ShapeError
        If *loss* is not a scalar.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            _check_finite(g, f"gradient of {node.name or 'leaf'}")
            node.grad = g if node.grad is None else node.grad + g
            continue
        assert node._grad_fn is not None
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """Plain SGD: ``p <- p - lr * grad``, then clear grads."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter '{p.name or p.shape}' has no gradient")
    for p in params:
        assert p.grad is not None
        p.data = p.data - lr * p.grad
        _check_finite(p.data, f"sgd_step on {p.name or 'parameter'}")
        p.grad = None
