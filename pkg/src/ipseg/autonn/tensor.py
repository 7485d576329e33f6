"""Tensor type, graph recording and the reverse-mode sweep."""
from __future__ import annotations

import threading
import warnings
import weakref
from contextlib import contextmanager

import numpy as np

from ..errors import NotScalarLoss
from .memory import TRACKER

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class DisconnectedParameter(UserWarning):
    pass


class Node:
    """Backward rule of one recorded op.

    ``backward`` maps the output gradient to one gradient (or ``None``) per
    parent. Arrays listed in ``saved`` are accounted with the tracker for as
    long as the node is alive.
    """

    __slots__ = ("parents", "backward", "name", "_acct", "__weakref__")

    def __init__(self, parents, backward, name="", saved=()):
        self.parents = tuple(parents)
        self.backward = backward
        self.name = name
        nbytes = sum(a.nbytes for a in saved)
        self._acct = [nbytes]
        if nbytes:
            TRACKER.alloc(nbytes)
            weakref.finalize(self, TRACKER.release, self._acct)


class Tensor:
    __slots__ = ("data", "_grad", "requires_grad", "node", "name", "_acct", "__weakref__")

    def __init__(self, data, requires_grad=False, node=None, name=None):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float32)
        self.data = data
        self._grad = None
        self.requires_grad = bool(requires_grad)
        self.node = node
        self.name = name
        self._acct = [data.nbytes, 0]
        TRACKER.alloc(data.nbytes)
        weakref.finalize(self, TRACKER.release, self._acct)

    # -- gradient buffer, accounted like data
    @property
    def grad(self):
        return self._grad

    @grad.setter
    def grad(self, value):
        old = self._acct[1]
        if value is None:
            self._grad = None
            self._acct[1] = 0
            TRACKER.free(old)
            return
        value = np.asarray(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise ValueError(f"grad shape {value.shape} != data shape {self.data.shape}")
        self._grad = value
        self._acct[1] = value.nbytes
        TRACKER.alloc(value.nbytes)
        TRACKER.free(old)

    def zero_grad(self):
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def backward(self, params=None):
        backward(self, params)

    # -- arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return Tensor(arr)


def _pair(a, b):
    """Promote a raw operand to the dtype of the tensor it meets."""
    if isinstance(a, Tensor):
        return a, as_tensor(b, a.dtype)
    if isinstance(b, Tensor):
        return as_tensor(a, b.dtype), b
    return as_tensor(a), as_tensor(b)


def make_output(data, parents, backward_fn, name="", saved=()):
    """Wrap ``data`` and record a node when any parent needs a gradient."""
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, node=Node(parents, backward_fn, name, saved))
    return Tensor(data)


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_output(a.data + b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_output(a.data - b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_output(ad * bd, (a, b), backward, "mul")


def div(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return make_output(ad / bd, (a, b), backward, "div")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_output(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return make_output(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a, index):
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return make_output(np.array(a.data[index]), (a,), backward, "getitem")


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return make_output(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    a = as_tensor(a)
    x = a.data
    return make_output(np.log(x), (a,), lambda g: (g / x,), "log")


# ---------------------------------------------------------------------------
# reverse sweep


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor, params=None, retain_graph=False) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Interior nodes are released as the sweep passes them unless
    ``retain_graph`` is set. When ``params`` is given, parameters the loss
    does not reach get a zero gradient and a :class:`DisconnectedParameter`
    warning.
    """
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    TRACKER.alloc(loss.data.nbytes)
    reached = set()
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        TRACKER.free(g.nbytes)
        if t.node is None:
            reached.add(id(t))
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            continue
        node = t.node
        pgrads = node.backward(g)
        del g
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                TRACKER.free(grads[key].nbytes)
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg if pg.dtype == p.dtype else pg.astype(p.dtype)
            TRACKER.alloc(grads[key].nbytes)
        del pgrads
        if not retain_graph:
            t.node = None
    if params is not None:
        for p in params:
            if id(p) not in reached and p.requires_grad:
                warnings.warn(f"parameter {p.name or p.shape} does not influence the loss",
                              DisconnectedParameter, stacklevel=2)
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
