"""Dense float64 tensors with reverse-mode automatic differentiation.

Each operation on tensors appends to an implicit computation record: the
output keeps links to its inputs plus a closure computing input gradients
from the output gradient. ``backward()`` on a scalar topologically sorts
that record and sweeps it once in reverse, accumulating ``.grad`` on every
``requires_grad`` ancestor. The record is rebuilt on every forward pass.

Everything is double precision. Inference code should wrap calls in
``no_grad()`` so no record is kept.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from .errors import DimensionError, UsageError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

# per-thread recording flag: forward-only evaluations may run concurrently
# with a training thread without disabling its graph
_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager disabling graph recording (forward-only mode)."""

    def __enter__(self):
        self._prev = _recording()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array with an optional gradient slot.

    ``values`` is always a contiguous ndarray; ``grad`` is None until a
    backward pass deposits an array of identical shape.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are promoted to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(values, parents, backward) -> Tensor:
    """Build an op output; record parents only when recording is on."""
    out = Tensor(values)
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for rank-{ndim} tensor")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise suite


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.values + b.values
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _from_op(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.values - b.values
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _from_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.values * b.values
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        return (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape))

    return _from_op(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.values / b.values
    except ValueError:
        raise DimensionError(f"div: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = _unbroadcast(g / b.values, a.shape)
        gb = _unbroadcast(-g * a.values / (b.values * b.values), b.shape)
        return ga, gb

    return _from_op(out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    c = float(c)

    def backward(g):
        return (g * c,)

    return _from_op(a.values * c, (a,), backward)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.values > 0.0

    def backward(g):
        return (g * mask,)

    return _from_op(np.where(mask, a.values, 0.0), (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    a = _as_tensor(a)
    x = a.values
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))

    def backward(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return (g * d,)

    return _from_op(0.5 * x * (1.0 + t), (a,), backward)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.values)

    def backward(g):
        return (g * out,)

    return _from_op(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    """Natural log; caller guarantees positive inputs."""
    a = _as_tensor(a)

    def backward(g):
        return (g / a.values,)

    return _from_op(np.log(a.values), (a,), backward)


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise x**p for a fixed scalar exponent."""
    a = _as_tensor(a)
    p = float(p)

    def backward(g):
        return (g * p * a.values ** (p - 1.0),)

    return _from_op(a.values**p, (a,), backward)


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

    def backward(g):
        return g @ b.values.T, a.values.T @ g

    return _from_op(a.values @ b.values, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise DimensionError(f"transpose: expected rank-2 tensor, got shape {a.shape}")

    def backward(g):
        return (g.T,)

    return _from_op(a.values.T, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape

    def backward(g):
        return (g.reshape(old),)

    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _from_op(out, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise UsageError("concat of zero tensors")
    axis = _check_axis(axis, tensors[0].values.ndim)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            "concat: shapes " + ", ".join(str(t.shape) for t in tensors) + " disagree"
        ) from None
    return _from_op(out, tuple(tensors), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    a = _as_tensor(a)
    axis = _check_axis(axis, a.values.ndim)
    if not 0 <= start <= stop <= a.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    idx = tuple(slice(start, stop) if d == axis else slice(None) for d in range(a.values.ndim))

    def backward(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _from_op(a.values[idx], (a,), backward)


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _check_axis(axis, a.values.ndim)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _from_op(a.values.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _check_axis(axis, a.values.ndim)
    n = a.values.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _from_op(a.values.mean(axis=axis, keepdims=keepdims), (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = _check_axis(axis, a.values.ndim)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _from_op(out, (a,), backward)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean, unit variance along ``axis`` (no affine)."""
    if eps <= 0:
        raise UsageError(f"layer_norm eps must be > 0, got {eps}")
    a = _as_tensor(a)
    axis = _check_axis(axis, a.values.ndim)
    mu = a.values.mean(axis=axis, keepdims=True)
    xc = a.values - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * out).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - out * gym),)

    return _from_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# backward sweep and parameter update


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; accumulates into ``.grad``.

    Gradients add onto any existing ``.grad`` arrays, so zero them
    (``p.grad = None``) between steps.
    """
    if loss.values.size != 1:
        raise UsageError(f"backward root must be scalar, got shape {loss.shape}")

    # iterative post-order DFS: inputs of every node precede it
    record: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            record.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(record):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            # leaf parameter
            node.grad = g if node.grad is None else node.grad + g
            continue
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        if node.requires_grad and node._parents:
            # interior node someone may also inspect; keep its grad too
            node.grad = g if node.grad is None else node.grad + g


def sgd_step(params, grads, lr: float, weight_decay: float = 0.0) -> None:
    """In-place SGD: p <- p - lr*(g + wd*p)."""
    if lr <= 0:
        raise UsageError(f"learning rate must be > 0, got {lr}")
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.values)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.values.shape:
            raise DimensionError(f"sgd_step: param shape {p.values.shape} vs grad shape {g.shape}")
        p.values -= lr * (g + weight_decay * p.values)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
