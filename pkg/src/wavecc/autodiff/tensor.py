"""Tensor type and the reverse-mode tape.

A Tensor wraps a numpy array plus an optional gradient buffer.  Operations
record their parents and a closure mapping the output gradient onto parent
gradients.  ``backward`` walks the recorded graph in a deterministic
reverse topological order, so a fixed graph always produces bit-identical
gradients.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from wavecc.errors import ShapeError

_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def default_dtype():
    """dtype used for new constants: float32, or float64 inside ``shadow_precision``."""
    return _get("dtype", np.float32)


def grad_enabled():
    return _get("grad", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


@contextlib.contextmanager
def float64_mode():
    """Evaluate new constants in 64 bits.  Used only by gradient checking."""
    prev = default_dtype()
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    """N-dimensional real array with an optional gradient buffer.

    4D tensors use the (batch, channel, height, width) layout.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar; implementations live in ops ---------------------------
    def __add__(self, other):
        from wavecc.autodiff import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from wavecc.autodiff import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from wavecc.autodiff import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from wavecc.autodiff import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from wavecc.autodiff import ops
        return ops.div(self, other)

    def __neg__(self):
        from wavecc.autodiff import ops
        return ops.neg(self)

    # reverse mode ----------------------------------------------------------
    def backward(self):
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable leaf."""
        if self.data.size != 1:
            raise ShapeError("backward() needs a scalar loss", shape=self.shape)
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def make_result(data, parents, backward):
    """Wrap an op output, recording the graph edge when gradients are needed."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def parameter(data):
    """A leaf tensor that receives gradients."""
    return Tensor(np.array(data, dtype=default_dtype()), requires_grad=True)
