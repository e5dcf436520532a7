"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

A ``Tensor`` records the op that produced it and closures that push the
incoming cotangent to each parent.  ``backward`` walks the graph once in
reverse topological order, accumulating gradients by summation in a fixed
order, so repeated runs are bitwise identical.

Every primitive checks its forward result for non-finite values and reports
the op name, which keeps overflow diagnostics close to the source.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .special import digamma as _digamma_fn
from .special import lgamma as _lgamma_fn
from .special import trigamma as _trigamma_fn


class AutodiffError(RuntimeError):
    pass


class NonFiniteError(AutodiffError):
    """A primitive produced NaN or infinity during the forward pass."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps", "_op")

    # numpy must defer to our reflected operators for ndarray <op> Tensor
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.data.shape})"

    # operator sugar; constants are promoted on the fly
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return subtract(self, _as_tensor(other))

    def __rsub__(self, other):
        return subtract(_as_tensor(other), self)

    def __mul__(self, other):
        return multiply(self, _as_tensor(other))

    def __rmul__(self, other):
        return multiply(_as_tensor(other), self)

    def __truediv__(self, other):
        return divide(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return divide(_as_tensor(other), self)

    def __neg__(self):
        return multiply(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape: tuple[int, ...]) -> "Tensor":
        return reshape(self, shape)

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Seed gradient 1 at this scalar and fill ``grad`` on the graph."""
        backward(self)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _make(op: str, data: np.ndarray, parents, vjps) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"op '{op}' produced a non-finite value")
    out = Tensor(data)
    tracked = tuple(parents)
    if any(p.requires_grad for p in tracked):
        out.requires_grad = True
        out._parents = tracked
        out._vjps = tuple(vjps)
    out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out axes that broadcasting introduced or stretched."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make("add", data, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(g, b.data.shape),
    ))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make("subtract", data, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(-g, b.data.shape),
    ))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make("multiply", data, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.data.shape),
        lambda g: _unbroadcast(g * a.data, b.data.shape),
    ))


def divide(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data
    return _make("divide", data, (a, b), (
        lambda g: _unbroadcast(g / b.data, a.data.shape),
        lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
    ))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data
    return _make("matmul", data, (a, b), (
        lambda g: g @ b.data.T,
        lambda g: a.data.T @ g,
    ))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _make("relu", a.data * mask, (a,), (lambda g: g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    data = np.where(a.data >= 0.0,
                    1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    return _make("sigmoid", data, (a,), (lambda g: g * data * (1.0 - data),))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make("exp", data, (a,), (lambda g: g * data,))


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    return _make("log", data, (a,), (lambda g: g / a.data,))


def square(a: Tensor) -> Tensor:
    return _make("square", a.data * a.data, (a,), (lambda g: g * 2.0 * a.data,))


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).copy()

    return _make("sum", data, (a,), (vjp,))


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g / count, a.data.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg / count, a.data.shape).copy()

    return _make("mean", data, (a,), (vjp,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)
    return _make("reshape", data, (a,), (lambda g: g.reshape(a.data.shape),))


def clamp_st(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient is passed through inside the range
    and zeroed outside (straight-through at the saturated entries)."""
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make("clamp_st", data, (a,), (lambda g: g * mask,))


def dropout(a: Tensor, keep_prob: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/keep_prob so the
    expectation matches the identity map."""
    if not 0.0 < keep_prob <= 1.0:
        raise AutodiffError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return _make("dropout", a.data.copy(), (a,), (lambda g: g,))
    mask = (rng.random(a.data.shape) < keep_prob) / keep_prob
    return _make("dropout", a.data * mask, (a,), (lambda g: g * mask,))


def lgamma(a: Tensor) -> Tensor:
    data = np.asarray(_lgamma_fn(a.data))
    return _make("lgamma", data, (a,), (lambda g: g * _digamma_fn(a.data),))


def digamma(a: Tensor) -> Tensor:
    data = np.asarray(_digamma_fn(a.data))
    return _make("digamma", data, (a,), (lambda g: g * _trigamma_fn(a.data),))


def detach(a: Tensor) -> Tensor:
    """Cut the graph: same values, no gradient flows back."""
    out = Tensor(a.data)
    out._op = "detach"
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor, wrt: Sequence[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Accumulate d(output)/d(node) for every node reachable from ``output``.

    ``output`` must be scalar.  Gradients land in ``node.grad``; when ``wrt``
    is given the return value maps ``id(node)`` to its gradient and every
    requested node must be part of the graph.
    """
    if output.data.ndim != 0 and output.data.size != 1:
        raise AutodiffError(
            f"backward expects a scalar output, got shape {output.data.shape}")
    order = _topo_order(output)
    on_tape = {id(node) for node in order}
    if wrt is not None:
        for node in wrt:
            if id(node) not in on_tape:
                raise AutodiffError("backward: requested node is not in the graph")
    grads: dict[int, np.ndarray] = {
        id(output): np.ones_like(output.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in zip(node._parents, node._vjps):
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    if wrt is not None:
        out: dict[int, np.ndarray] = {}
        for node in wrt:
            g = grads.get(id(node))
            out[id(node)] = np.zeros_like(node.data) if g is None else g
        return out
    return {}


def grad_check(fn: Callable[[Tensor], Tensor], x0, step: float = 1e-5) -> float:
    """Compare the analytic gradient of scalar-valued ``fn`` at ``x0`` with
    central differences; returns max over coordinates of
    |analytic - numeric| / max(1, |analytic|)."""
    if isinstance(x0, Tensor):
        x0 = x0.data
    x0 = np.asarray(x0, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = fn(leaf)
    analytic = backward(out, wrt=[leaf])[id(leaf)]
    worst = 0.0
    flat = x0.ravel()
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = step
        hi = fn(Tensor((flat + bump).reshape(x0.shape))).data
        lo = fn(Tensor((flat - bump).reshape(x0.shape))).data
        numeric = (float(hi) - float(lo)) / (2.0 * step)
        a = float(analytic.ravel()[i])
        err = abs(a - numeric) / max(1.0, abs(a))
        worst = max(worst, err)
    return worst
