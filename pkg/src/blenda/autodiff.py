"""Minimal reverse-mode automatic differentiation on numpy arrays.

Define-by-run tape: every op returns a Tensor holding its forward value plus
a closure that maps the output adjoint to the input adjoints. Calling
``backward()`` on a scalar Tensor accumulates gradients into every reachable
Tensor's ``grad`` slot. Everything is float64; a tape (one graph plus its
tensors) belongs to a single thread.

The one non-standard op is ``grl``: identity in the forward pass, adjoint
negation in the backward pass, which turns a discriminator's descent into the
feature extractor's adversarial ascent in a single backward pass.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int]


class Tensor:
    """A differentiable value: forward array, grad slot, parent links."""

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(
        self,
        value: ArrayLike,
        parents: Sequence["Tensor"] = (),
        backward: Optional[Callable[[np.ndarray], Tuple[np.ndarray, ...]]] = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Accumulate adjoints of this tensor w.r.t. every upstream tensor.

        Defaults to seeding with ones (i.e. d(sum of self)/d(input)); for a
        scalar output that is the usual gradient.
        """
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))

        adjoint = {id(t): np.zeros_like(t.value) for t in topo}
        adjoint[id(self)] = (
            np.ones_like(self.value) if seed is None else np.asarray(seed, np.float64)
        )
        for t in reversed(topo):
            g = adjoint[id(t)]
            t.grad = t.grad + g
            if t._backward is not None:
                for parent, pg in zip(t.parents, t._backward(g)):
                    adjoint[id(parent)] += pg


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value, (a, b))
    out._backward = lambda g: (
        _unbroadcast(g, a.value.shape),
        _unbroadcast(g, b.value.shape),
    )
    return out


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value - b.value, (a, b))
    out._backward = lambda g: (
        _unbroadcast(g, a.value.shape),
        _unbroadcast(-g, b.value.shape),
    )
    return out


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value * b.value, (a, b))
    out._backward = lambda g: (
        _unbroadcast(g * b.value, a.value.shape),
        _unbroadcast(g * a.value, b.value.shape),
    )
    return out


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value / b.value, (a, b))
    out._backward = lambda g: (
        _unbroadcast(g / b.value, a.value.shape),
        _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
    )
    return out


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError(
            f"matmul expects 2-D operands, got {a.value.shape} @ {b.value.shape}"
        )
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    out = Tensor(a.value @ b.value, (a, b))
    out._backward = lambda g: (g @ b.value.T, a.value.T @ g)
    return out


def transpose(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise ValueError(f"transpose expects a 2-D operand, got {a.value.shape}")
    out = Tensor(a.value.T, (a,))
    out._backward = lambda g: (g.T,)
    return out


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0.0
    out = Tensor(np.where(mask, a.value, 0.0), (a,))
    out._backward = lambda g: (g * mask,)
    return out


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    x = a.value
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s, (a,))
    out._backward = lambda g: (g * s * (1.0 - s),)
    return out


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.value)
    out = Tensor(e, (a,))
    out._backward = lambda g: (g * e,)
    return out


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0.0):
        raise ValueError("log requires strictly positive inputs; clamp upstream")
    out = Tensor(np.log(a.value), (a,))
    out._backward = lambda g: (g / a.value,)
    return out


def clip(a: ArrayLike, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes through inside the window."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    out = Tensor(np.clip(a.value, lo, hi), (a,))
    out._backward = lambda g: (g * inside,)
    return out


def _reduce(a: Tensor, op: str, axis: Optional[int], keepdims: bool) -> Tensor:
    value = getattr(a.value, op)(axis=axis, keepdims=keepdims)
    count = a.value.size if axis is None else a.value.shape[axis]

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        g = np.broadcast_to(g, a.value.shape).astype(np.float64)
        if op == "mean":
            g = g / count
        return (g.copy(),)

    out = Tensor(value, (a,))
    out._backward = backward
    return out


def sum_(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    return _reduce(as_tensor(a), "sum", axis, keepdims)


def mean(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    return _reduce(as_tensor(a), "mean", axis, keepdims)


def grl(a: ArrayLike, scale: float = 1.0) -> Tensor:
    """Gradient reversal: identity forward, adjoint times -scale backward."""
    if not (math.isfinite(scale) and scale > 0):
        raise ValueError(f"grl scale must be finite and > 0, got {scale}")
    a = as_tensor(a)
    out = Tensor(a.value, (a,))
    out._backward = lambda g: (-scale * g,)
    return out
