"""Minimal reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps a float64 ndarray and records the operations applied to
it; ``backward()`` walks the tape in reverse topological order and
accumulates gradients. Only the ops the denoiser and regression head need
are provided. Broadcasting follows numpy rules, with gradients summed back
over broadcast axes.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sums a gradient back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        other = Tensor.lift(other)
        out = Tensor(self.data + other.data, _parents=(self, other),
                     _backward=lambda g: (_unbroadcast(g, self.data.shape),
                                          _unbroadcast(g, other.data.shape)))
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor.lift(other)
        return Tensor(self.data - other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, self.data.shape),
                                           _unbroadcast(-g, other.data.shape)))

    def __rsub__(self, other):
        return Tensor.lift(other) - self

    def __mul__(self, other):
        other = Tensor.lift(other)
        return Tensor(self.data * other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g * other.data, self.data.shape),
                                           _unbroadcast(g * self.data, other.data.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor.lift(other)
        return Tensor(self.data / other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g / other.data, self.data.shape),
                                           _unbroadcast(-g * self.data / other.data ** 2,
                                                        other.data.shape)))

    def __rtruediv__(self, other):
        return Tensor.lift(other) / self

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __pow__(self, exponent: float):
        e = float(exponent)
        return Tensor(self.data ** e, _parents=(self,),
                      _backward=lambda g: (g * e * self.data ** (e - 1.0),))

    def __matmul__(self, other):
        other = Tensor.lift(other)

        def back(g):
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            return (_unbroadcast(ga, self.data.shape), _unbroadcast(gb, other.data.shape))

        return Tensor(self.data @ other.data, _parents=(self, other), _backward=back)

    # -- elementwise functions ---------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        return Tensor(out_data, _parents=(self,), _backward=lambda g: (g * out_data,))

    def tanh(self):
        out_data = np.tanh(self.data)
        return Tensor(out_data, _parents=(self,), _backward=lambda g: (g * (1.0 - out_data ** 2),))

    def sqrt(self):
        out_data = np.sqrt(self.data)
        return Tensor(out_data, _parents=(self,), _backward=lambda g: (g * 0.5 / out_data,))

    def gelu(self):
        """tanh-approximation GELU; smooth, so finite differences stay clean."""
        c = np.sqrt(2.0 / np.pi)
        inner = c * (self + 0.044715 * self * self * self)
        return 0.5 * self * (1.0 + inner.tanh())

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def back(g):
            g = np.asarray(g)
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            ax = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                g = np.expand_dims(g, ax)
            return (np.broadcast_to(g, self.data.shape).copy(),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _backward=back)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.data.shape[a] for a in ax]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int, keepdims: bool = False):
        """Max reduction; the gradient routes to the first argmax on ties."""
        out_data = self.data.max(axis=axis, keepdims=True)
        mask = self.data == out_data
        first = np.cumsum(mask, axis=axis) == 1
        sel = mask & first

        def back(g):
            g = np.asarray(g)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.where(sel, g, 0.0),)

        res = out_data if keepdims else np.squeeze(out_data, axis=axis)
        return Tensor(res, _parents=(self,), _backward=back)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        return Tensor(self.data.reshape(*shape), _parents=(self,),
                      _backward=lambda g: (g.reshape(self.data.shape),))

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(*axes), _parents=(self,),
                      _backward=lambda g: (g.transpose(*inv),))

    def __getitem__(self, key):
        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            return (full,)

        return Tensor(self.data[key], _parents=(self,), _backward=back)

    # -- backward pass ----------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._parents and node._backward is not None:
                parent_grads = node._backward(g)
                for p, pg in zip(node._parents, parent_grads):
                    if not p.requires_grad or pg is None:
                        continue
                    if id(p) in grads:
                        grads[id(p)] = grads[id(p)] + pg
                    else:
                        grads[id(p)] = pg
            else:
                node.grad = g if node.grad is None else node.grad + g


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor.lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-invariant softmax; the row max is treated as a constant."""
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def parameter(array, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """Creates a trainable tensor, optionally filled with scaled Gaussian noise."""
    if rng is not None:
        shape = tuple(array) if isinstance(array, (tuple, list)) else array.shape
        if scale is None:
            scale = 0.02
        data = rng.normal(0.0, scale, size=shape)
    else:
        data = np.array(array, dtype=np.float64)
    return Tensor(data, requires_grad=True)
