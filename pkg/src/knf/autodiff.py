"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Small on purpose: only the ops the forecaster's forward pass needs.
Every Tensor wraps an ndarray; ops record a backward closure and the
graph is walked once, in reverse topological order, by ``backward()``.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # collapse extra leading axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in self._parents
        )

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------ graph

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tracked node."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        # iterative topo sort; recursion would overflow on long rollouts
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.asarray(seed, dtype=np.float64).reshape(self.data.shape)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------ arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g, other.data.shape)

        out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))

        def bwd(g):
            if self.requires_grad:
                self.grad += -g

        out._backward = bwd
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g * other.data, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g * self.data, other.data.shape)

        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data / other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g / other.data, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(
                    -g * self.data / (other.data**2), other.data.shape
                )

        out._backward = bwd
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only constant exponents are supported")
        out = Tensor(self.data**p, (self,))

        def bwd(g):
            if self.requires_grad:
                self.grad += g * p * self.data ** (p - 1)

        out._backward = bwd
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        out = Tensor(a @ b, (self, other))

        def bwd(g):
            if a.ndim == 1 and b.ndim == 1:  # dot product
                if self.requires_grad:
                    self.grad += g * b
                if other.requires_grad:
                    other.grad += g * a
            elif a.ndim == 1:  # (m,) @ (m,p)
                if self.requires_grad:
                    self.grad += b @ g
                if other.requires_grad:
                    other.grad += np.outer(a, g)
            elif b.ndim == 1:  # (..., n, m) @ (m,)
                if self.requires_grad:
                    self.grad += _unbroadcast(g[..., :, None] * b, a.shape)
                if other.requires_grad:
                    other.grad += _unbroadcast(
                        np.swapaxes(a, -1, -2) @ g[..., :, None], (b.shape[0], 1)
                    ).reshape(b.shape)
            else:  # general (possibly stacked) matrix product
                if self.requires_grad:
                    self.grad += _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)
                if other.requires_grad:
                    other.grad += _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)

        out._backward = bwd
        return out

    # -------------------------------------------------------------- elemwise

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), (self,))

        def bwd(g):
            if self.requires_grad:
                self.grad += g * (self.data > 0)

        out._backward = bwd
        return out

    def exp(self):
        if np.max(np.abs(self.data)) > 700.0:
            raise NumericError("exp argument out of range (|v| > 700)")
        out = Tensor(np.exp(self.data), (self,))

        def bwd(g):
            if self.requires_grad:
                self.grad += g * out.data

        out._backward = bwd
        return out

    def sin(self):
        out = Tensor(np.sin(self.data), (self,))

        def bwd(g):
            if self.requires_grad:
                self.grad += g * np.cos(self.data)

        out._backward = bwd
        return out

    # ------------------------------------------------------------ reductions

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def bwd(g):
            if not self.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, self.data.shape)

        out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    # ----------------------------------------------------------------- shape

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))

        def bwd(g):
            if self.requires_grad:
                self.grad += g.reshape(self.data.shape)

        out._backward = bwd
        return out

    def ravel(self):
        return self.reshape(-1)

    @property
    def T(self):
        out = Tensor(self.data.T, (self,))

        def bwd(g):
            if self.requires_grad:
                self.grad += g.T

        out._backward = bwd
        return out

    @property
    def mT(self):
        """Transpose of the last two axes (batched matrix transpose)."""
        out = Tensor(np.swapaxes(self.data, -1, -2), (self,))

        def bwd(g):
            if self.requires_grad:
                self.grad += np.swapaxes(g, -1, -2)

        out._backward = bwd
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], (self,))

        def bwd(g):
            if self.requires_grad:
                np.add.at(self.grad, idx, g)

        out._backward = bwd
        return out

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(y, (self,))

        def bwd(g):
            if self.requires_grad:
                dot = (g * y).sum(axis=axis, keepdims=True)
                self.grad += y * (g - dot)

        out._backward = bwd
        return out


# --------------------------------------------------------------- constructors


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def parameter(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def concatenate(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.grad += g[tuple(idx)]

    out._backward = bwd
    return out


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.grad += np.take(g, i, axis=axis)

    out._backward = bwd
    return out
