"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and, when gradients are enabled, records the
operation that produced it.  backward() on a scalar walks the recorded
graph once in reverse topological order, accumulates gradients into every
reachable tensor with requires_grad=True, and frees the graph.  Ops keep
the dtype of their inputs, so a float64 forward pass yields float64
gradients (used by the finite-difference oracles); training runs in
float32.

One graph is built and differentiated by one thread at a time; tensors
themselves may be handed between threads freely.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "matmul",
    "concat",
    "take",
    "take_rows",
    "softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "relu",
    "exp",
    "log",
]

_GRAD_ENABLED = [True]

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


@contextmanager
def no_grad():
    """Disable tape recording inside the block (frozen/eval forward passes)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _unbroadcast(grad, shape):
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _make(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


class Tensor:
    """An n-d array of reals, optionally participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def randn(rng, shape, std=0.02, dtype=np.float32, requires_grad=True):
        """Gaussian init; the default std follows the MAE-lineage convention."""
        data = (rng.standard_normal(shape) * std).astype(dtype)
        return Tensor(data, requires_grad=requires_grad)

    # ---- basic introspection ---------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- autodiff ---------------------------------------------------------

    def backward(self):
        """Reverse-mode pass from a scalar; accumulates into leaf .grad.

        Repeated calls (over freshly built graphs) accumulate; zero_grad()
        between steps.  Interior nodes are freed afterwards, so the graph is
        single-use.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise ValueError("backward on a tensor that is not on the tape")

        topo = []
        visited = set()
        stack = [(self, False)]
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
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            if node._parents:
                # interior node: release graph refs and transient grad
                node._parents = ()
                node._backward = None
                if node is not self:
                    node.grad = None

    # ---- arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bw(g):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(g, b.data.shape))

        return _make(a.data + b.data, (a, b), bw)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bw(g):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(-g, b.data.shape))

        return _make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bw(g):
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

        return _make(a.data * b.data, (a, b), bw)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        a = self

        def bw(g):
            _accum(a, -g)

        return _make(-a.data, (a,), bw)

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data / b.data

        def bw(g):
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
            _accum(b, _unbroadcast(-g * out_data / b.data, b.data.shape))

        return _make(out_data, (a, b), bw)

    def __matmul__(self, other):
        return matmul(self, other)

    # ---- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape

        def bw(g):
            _accum(a, g.reshape(old))

        return _make(a.data.reshape(shape), (a,), bw)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = tuple(np.argsort(axes))

        def bw(g):
            _accum(a, g.transpose(inv))

        return _make(a.data.transpose(axes), (a,), bw)

    # ---- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape))

        return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims=False):
        a = self
        n = a.data.size if axis is None else a.data.shape[axis]

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g, a.data.shape) / n)

        return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw)

    def max(self, axis, keepdims=False):
        """Max along one axis; gradient routes to the first maximal entry."""
        a = self
        moved = np.moveaxis(a.data, axis, -1)
        idx = moved.argmax(axis=-1)
        out = np.take_along_axis(moved, idx[..., None], axis=-1)[..., 0]

        def bw(g):
            if keepdims:
                g = np.squeeze(g, axis=axis)
            gt = np.zeros_like(a.data)
            gt_m = np.moveaxis(gt, axis, -1)
            np.put_along_axis(gt_m, idx[..., None], g[..., None], axis=-1)
            _accum(a, gt)

        if keepdims:
            out = np.expand_dims(out, axis)
        return _make(out, (a,), bw)


# ---- free-function ops ------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Run reverse mode from a scalar loss (alias of Tensor.backward)."""
    loss.backward()


def matmul(a, b):
    """Matrix product with stacked leading dims (both operands ndim >= 2)."""
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul needs matrices, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul dimension mismatch: {a.data.shape} @ {b.data.shape}"
        )

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(np.matmul(a.data, b.data), (a, b), bw)


def concat(tensors, axis):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def take(t, indices, axis):
    """Select rows along an axis with a 1-d index array; backward scatter-adds."""
    if not isinstance(t, Tensor):
        t = Tensor(t)
    idx = np.asarray(indices, dtype=np.intp)

    def bw(g):
        gt = np.zeros_like(t.data)
        np.add.at(np.moveaxis(gt, axis, 0), idx, np.moveaxis(g, axis, 0))
        _accum(t, gt)

    return _make(np.take(t.data, idx, axis=axis), (t,), bw)


def take_rows(t, indices):
    """Per-sample gather on axis 1: out[b, i] = t[b, indices[b, i]].

    `indices` is (B, V) with one row of indices per batch element; used for
    per-sample mask plans inside a batch.
    """
    if not isinstance(t, Tensor):
        t = Tensor(t)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 2 or idx.shape[0] != t.data.shape[0]:
        raise ValueError(
            f"take_rows needs (B, V) indices for batch {t.data.shape[0]}, got {idx.shape}"
        )
    rows = np.arange(t.data.shape[0])[:, None]

    def bw(g):
        gt = np.zeros_like(t.data)
        np.add.at(gt, (rows, idx), g)
        _accum(t, gt)

    return _make(t.data[rows, idx], (t,), bw)


def softmax(t, axis=-1):
    """Softmax along an axis, stabilized by max subtraction."""
    if not isinstance(t, Tensor):
        t = Tensor(t)
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(t, (g - dot) * y)

    return _make(y, (t,), bw)


def log_softmax(t, axis=-1):
    if not isinstance(t, Tensor):
        t = Tensor(t)
    z = t.data - t.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        _accum(t, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (t,), bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine.

    Population variance; a constant row maps to beta exactly (eps absorbs
    the zero variance).
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    c = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, c).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, c).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _make(out, (x, gamma, beta), bw)


def gelu(t):
    """x * Phi(x), tanh approximation."""
    if not isinstance(t, Tensor):
        t = Tensor(t)
    x = t.data
    u = _GELU_C * (x + _GELU_A * x**3)
    th = np.tanh(u)

    def bw(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        _accum(t, g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du))

    return _make(0.5 * x * (1.0 + th), (t,), bw)


def relu(t):
    if not isinstance(t, Tensor):
        t = Tensor(t)
    mask = t.data > 0

    def bw(g):
        _accum(t, g * mask)

    return _make(t.data * mask, (t,), bw)


def exp(t):
    if not isinstance(t, Tensor):
        t = Tensor(t)
    out_data = np.exp(t.data)

    def bw(g):
        _accum(t, g * out_data)

    return _make(out_data, (t,), bw)


def log(t):
    if not isinstance(t, Tensor):
        t = Tensor(t)

    def bw(g):
        _accum(t, g / t.data)

    return _make(np.log(t.data), (t,), bw)
