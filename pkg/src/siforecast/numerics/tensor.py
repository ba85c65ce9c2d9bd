"""Reverse-mode differentiation over float64 numpy arrays.

Every operation on :class:`Tensor` that involves at least one tensor with
``requires_grad`` records a closure on the tape.  Calling
:meth:`Tensor.backward` on a scalar replays the tape in reverse topological
order and then releases it, so each forward pass supports one backward.
"""
from __future__ import annotations

import contextlib

import numpy as np
from scipy import special

from ..exceptions import DimensionError, GraphError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (sampling, evaluation)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _unbroadcast(grad, shape):
    # sum out the axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._released = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self):
        self.grad = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            return Tensor(data, True, parents, backward)
        return Tensor(data)

    def _accumulate(self, grad):
        if not self.requires_grad:
            return
        if self.grad is None:
            # gradients are never updated in place, so views can be stored as is
            self.grad = np.asarray(grad, dtype=np.float64)
        else:
            self.grad = self.grad + grad

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: self._accumulate(-g))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is outside the supported vocabulary")
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def square(self):
        return Tensor._make(
            self.data**2, (self,), lambda g: self._accumulate(2.0 * self.data * g)
        )

    # -- linear algebra -----------------------------------------------------

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
        out_data = self.data @ other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor._make(out_data, (self, other), backward)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))

        return Tensor._make(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- activations --------------------------------------------------------

    def relu(self):
        mask = self.data > 0
        return Tensor._make(
            self.data * mask, (self,), lambda g: self._accumulate(g * mask)
        )

    def tanh(self):
        t = np.tanh(self.data)
        return Tensor._make(t, (self,), lambda g: self._accumulate(g * (1.0 - t * t)))

    def sigmoid(self):
        sig = _sigmoid(self.data)
        return Tensor._make(
            sig, (self,), lambda g: self._accumulate(g * sig * (1.0 - sig))
        )

    def silu(self):
        sig = _sigmoid(self.data)
        out_data = self.data * sig

        def backward(g):
            self._accumulate(g * (sig * (1.0 + self.data * (1.0 - sig))))

        return Tensor._make(out_data, (self,), backward)

    # -- shape manipulation -------------------------------------------------

    def __getitem__(self, index):
        out_data = self.data[index]

        def backward(g):
            full = np.zeros_like(self.data)
            if _is_basic_index(index):
                full[index] = g
            else:
                np.add.at(full, index, g)
            self._accumulate(full)

        return Tensor._make(out_data, (self,), backward)

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)
        return Tensor._make(
            out_data, (self,), lambda g: self._accumulate(g.reshape(self.shape))
        )

    # -- reverse pass -------------------------------------------------------

    def backward(self):
        """Write d(self)/d(leaf) into the ``grad`` slot of every reachable leaf."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar root, got shape {self.shape}")
        if self._released:
            raise GraphError("graph already released; run the forward pass again")
        if not self.requires_grad:
            raise GraphError("root does not depend on any tensor requiring grad")

        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        # reverse topological order: every consumer runs before its inputs
        for node in reversed(order):
            if node._backward is None:
                continue
            g, node.grad = node.grad, None
            if g is not None:
                node._backward(g)
            node._backward = None
            node._parents = ()
            node._released = True


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int)) or p is Ellipsis for p in parts)


def _sigmoid(x):
    return special.expit(x)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return Tensor._make(out_data, tuple(tensors), backward)
