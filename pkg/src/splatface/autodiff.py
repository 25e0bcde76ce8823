"""Reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable quantity in the pipeline lives in a Tensor node.  The
graph is built eagerly during the forward pass; backward() walks nodes in
reverse creation order (a valid topological order, and a fixed one, so
gradient accumulation is bitwise reproducible).
"""

from __future__ import annotations

import itertools

import numpy as np

_node_counter = itertools.count()


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph: value, lazy grad, parent closures."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_idx", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self._idx = next(_node_counter)
        self.name = name

    # -- basics --------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every reachable node.

        `self` must be scalar.  Deterministic: traversal order is fixed by
        node creation index.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss, got shape %s" % (self.data.shape,))
        # collect reachable subgraph
        seen = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._idx in seen:
                continue
            seen[node._idx] = node
            stack.extend(node._parents)
        order = sorted(seen.values(), key=lambda n: n._idx, reverse=True)
        self._accum(np.ones_like(self.data))
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            if self.requires_grad:
                self._accum(-g)

        return Tensor(-self.data, parents=(self,), backward=bwd)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data - other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=bwd)

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data / other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / other.data ** 2, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=bwd)

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, p):
        assert isinstance(p, (int, float))
        out_data = self.data ** p

        def bwd(g):
            if self.requires_grad:
                self._accum(g * p * self.data ** (p - 1))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data @ other.data

        def bwd(g):
            a, b = self.data, other.data
            if self.requires_grad:
                if b.ndim == 1 and a.ndim == 1:
                    self._accum(g * b)
                elif b.ndim == 1:
                    self._accum(np.outer(g, b) if a.ndim == 2 else g[..., None] * b)
                elif a.ndim == 1:
                    self._accum(b @ g)
                else:
                    self._accum(g @ b.T)
            if other.requires_grad:
                if a.ndim == 1 and b.ndim == 1:
                    other._accum(g * a)
                elif a.ndim == 1:
                    other._accum(np.outer(a, g))
                elif b.ndim == 1:
                    other._accum(a.T @ g)
                else:
                    other._accum(a.T @ g)

        return Tensor(out_data, parents=(self, other), backward=bwd)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def bwd(g):
            if self.requires_grad:
                self._accum(g.reshape(self.data.shape))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def transpose(self, *axes):
        axes = axes or None
        out_data = self.data.transpose(axes)
        inv = np.argsort(axes) if axes else None

        def bwd(g):
            if self.requires_grad:
                self._accum(g.transpose(inv) if inv is not None else g.transpose())

        return Tensor(out_data, parents=(self,), backward=bwd)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, key):
        out_data = self.data[key]

        def bwd(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, key, g)
                self._accum(full)

        return Tensor(out_data, parents=(self,), backward=bwd)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accum(np.broadcast_to(g, self.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor(out_data, parents=(self,), backward=bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accum(g * out_data)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def log(self):
        out_data = np.log(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accum(g / self.data)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accum(g * 0.5 / out_data)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def abs(self):
        out_data = np.abs(self.data)
        sign = np.sign(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accum(g * sign)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def relu(self):
        mask = self.data > 0
        out_data = np.where(mask, self.data, 0.0)

        def bwd(g):
            if self.requires_grad:
                self._accum(g * mask)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def leaky_relu(self, slope=0.02):
        mask = self.data > 0
        out_data = np.where(mask, self.data, slope * self.data)

        def bwd(g):
            if self.requires_grad:
                self._accum(g * np.where(mask, 1.0, slope))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def bwd(g):
            if self.requires_grad:
                self._accum(g * out_data * (1.0 - out_data))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g):
            if self.requires_grad:
                self._accum(g * (1.0 - out_data ** 2))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def bwd(g):
            if self.requires_grad:
                dot = (g * out_data).sum(axis=axis, keepdims=True)
                self._accum(out_data * (g - dot))

        return Tensor(out_data, parents=(self,), backward=bwd)

    def detach(self):
        return Tensor(self.data.copy())


def concat(tensors, axis=0):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


def stack(tensors, axis=0):
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        slices = np.moveaxis(g, axis, 0)
        for t, gs in zip(tensors, slices):
            if t.requires_grad:
                t._accum(gs)

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


def custom_op(out_data, parents, backward, name=None):
    """Build a graph node for a hand-derived composite operation.

    `backward(g)` receives the upstream gradient and must call `_accum`
    on the parents that require grad.
    """
    return Tensor(out_data, parents=tuple(parents), backward=backward, name=name)


def finite_diff_check(f, x, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `f` maps a plain float64 array to a scalar Tensor built on a Tensor leaf
    the function creates itself -- here we instead pass the leaf in: `f`
    takes a Tensor and returns a scalar Tensor.
    """
    x = np.asarray(x, dtype=np.float64)
    leaf = Tensor(x.copy(), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise ValueError("finite_diff_check expects a scalar-valued function")
    out.backward()
    g_analytic = leaf.grad.copy() if leaf.grad is not None else np.zeros_like(x)

    g_fd = np.zeros_like(x)
    flat = x.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(x.copy())).data)
        flat[i] = orig - eps
        fm = float(f(Tensor(x.copy())).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("non-finite function value during finite differencing")
        fd_flat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(g_fd))
    return float(np.max(np.abs(g_analytic - g_fd) / denom))
