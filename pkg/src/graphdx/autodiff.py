"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the convolution forwards and ranking losses used
here: dense float64 tensors, a handful of ops, and tape-based backward
accumulation.  Constants (masks, reciprocals, index arrays) enter ops as
plain ndarrays or scalars and receive no gradient.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the computation tape."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g: np.ndarray):
        # grads are never mutated in place, so adopting the array is safe
        if self.grad is None:
            self.grad = g if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data + other.data, (self, other))

            def back(g):
                self._accum(_unbroadcast(g, self.data.shape))
                other._accum(_unbroadcast(g, other.data.shape))

        else:
            const = np.asarray(other, dtype=np.float64)
            out = Tensor(self.data + const, (self,))

            def back(g):
                self._accum(_unbroadcast(g, self.data.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))

        def back(g):
            self._accum(-g)

        out._backward = back
        return out

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data * other.data, (self, other))

            def back(g):
                self._accum(_unbroadcast(g * other.data, self.data.shape))
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        else:
            const = np.asarray(other, dtype=np.float64)
            out = Tensor(self.data * const, (self,))

            def back(g):
                self._accum(_unbroadcast(g * const, self.data.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __matmul__(self, other):
        """``x @ w`` with ``w`` a 2-D parameter matrix; x may be batched."""
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=np.float64))
        x, w = self, other
        out = Tensor(np.matmul(x.data, w.data), (x, w))

        def back(g):
            x._accum(np.matmul(g, w.data.T))
            x2 = x.data.reshape(-1, x.data.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            w._accum(x2.T @ g2)

        out._backward = back
        return out

    # -- shape ------------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        src = self.data.shape

        def back(g):
            self._accum(g.reshape(src))

        out._backward = back
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        src = self.data.shape

        def back(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, src).copy())

        out._backward = back
        return out

    # -- autodiff ---------------------------------------------------------

    def backward(self):
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


# -- elementwise functions -------------------------------------------------


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    out = Tensor(y, (t,))

    def back(g):
        t._accum(g * (1.0 - y * y))

    out._backward = back
    return out


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y, (t,))

    def back(g):
        t._accum(g * y * (1.0 - y))

    out._backward = back
    return out


def log(t: Tensor) -> Tensor:
    out = Tensor(np.log(t.data), (t,))

    def back(g):
        t._accum(g / t.data)

    out._backward = back
    return out


def logsigmoid(t: Tensor) -> Tensor:
    """Numerically stable log(sigmoid(x)); gradient is 1 - sigmoid(x)."""
    x = t.data
    y = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y, (t,))

    def back(g):
        t._accum(g * (1.0 - sig))

    out._backward = back
    return out


def relu(t: Tensor) -> Tensor:
    y = np.maximum(t.data, 0.0)
    out = Tensor(y, (t,))

    def back(g):
        t._accum(g * (t.data > 0))

    out._backward = back
    return out


def gather(t: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup ``t[idx]`` with scatter-add backward."""
    idx = np.asarray(idx)
    out = Tensor(t.data[idx], (t,))

    def back(g):
        gt = np.zeros_like(t.data)
        np.add.at(gt, idx, g)
        t._accum(gt)

    out._backward = back
    return out


def sum_squares(t: Tensor) -> Tensor:
    out = Tensor(np.array((t.data * t.data).sum()), (t,))

    def back(g):
        t._accum(2.0 * g * t.data)

    out._backward = back
    return out
