"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps a float64 ndarray and records, per operation, a backward
closure and its parent tensors; calling ``backward()`` on a scalar result
walks the recorded graph in reverse topological order. There is no global
tape, so independent training sessions never share state.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DataError, ShapeError


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _result(data, parents, backward_fn):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    @staticmethod
    def _coerce(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = Tensor._coerce(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other):
        return Tensor._coerce(other) + (-self)

    def __mul__(self, other):
        other = Tensor._coerce(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._result(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._coerce(other)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / other.data**2, other.data.shape)
                )

        return Tensor._result(out_data, (self, other), backward)

    def pow(self, exponent: float):
        out_data = self.data**exponent

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._result(out_data, (self,), backward)

    def __matmul__(self, other):
        other = Tensor._coerce(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(
                f"matmul requires 2-D+ operands, got {a.shape} @ {b.shape}"
            )
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        out_data = np.matmul(a, b)

        def backward(g):
            if self.requires_grad:
                da = np.matmul(g, b.swapaxes(-1, -2))
                self._accumulate(_unbroadcast(da, a.shape))
            if other.requires_grad:
                db = np.matmul(a.swapaxes(-1, -2), g)
                other._accumulate(_unbroadcast(db, b.shape))

        return Tensor._result(out_data, (self, other), backward)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.data.shape
        out_data = self.data.reshape(shape)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(src_shape))

        return Tensor._result(out_data, (self,), backward)

    def transpose(self, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out_data = np.transpose(self.data, axes)

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.transpose(g, inv))

        return Tensor._result(out_data, (self,), backward)

    def broadcast_to(self, shape):
        shape = tuple(shape)
        src_shape = self.data.shape
        out_data = np.broadcast_to(self.data, shape).copy()

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, src_shape))

        return Tensor._result(out_data, (self,), backward)

    def __getitem__(self, key):
        out_data = self.data[key]

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, key, g)
                self._accumulate(full)

        return Tensor._result(out_data, (self,), backward)

    @staticmethod
    def concat(tensors, axis: int = 0):
        tensors = [Tensor._coerce(t) for t in tensors]
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
        sizes = [t.data.shape[axis] for t in tensors]

        def backward(g):
            offset = 0
            for t, size in zip(tensors, sizes):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(offset, offset + size)
                    t._accumulate(g[tuple(idx)])
                offset += size

        return Tensor._result(out_data, tensors, backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        src_shape = self.data.shape

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, src_shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, src_shape).copy())

        return Tensor._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- nonlinearities ----------------------------------------------------------

    def relu(self):
        mask = self.data > 0
        out_data = np.where(mask, self.data, 0.0)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * mask)

        return Tensor._result(out_data, (self,), backward)

    def gelu(self):
        out_data = kernels.gelu_fwd(np.ascontiguousarray(self.data))

        def backward(g):
            if self.requires_grad:
                self._accumulate(
                    kernels.gelu_bwd(
                        np.ascontiguousarray(g), np.ascontiguousarray(self.data)
                    )
                )

        return Tensor._result(out_data, (self,), backward)

    def softmax(self, axis: int = -1):
        """Stable softmax along `axis`; each output slice sums to 1."""
        nd = self.data.ndim
        ax = axis % nd if nd else 0
        if nd == 0:
            raise ShapeError("softmax requires at least a 1-D tensor")
        moved = np.moveaxis(self.data, ax, -1)
        flat = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
        y_flat = kernels.softmax_fwd(flat)
        out_data = np.moveaxis(y_flat.reshape(moved.shape), -1, ax)

        def backward(g):
            if not self.requires_grad:
                return
            g_flat = np.ascontiguousarray(
                np.moveaxis(g, ax, -1).reshape(-1, flat.shape[-1])
            )
            dx_flat = kernels.softmax_bwd(g_flat, y_flat)
            self._accumulate(np.moveaxis(dx_flat.reshape(moved.shape), -1, ax))

        return Tensor._result(out_data, (self,), backward)

    def backward(self, grad=None):
        """Accumulate gradients of this (scalar) tensor into the graph."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer norm over the last axis: zero mean, unit variance, then affine."""
    gain = Tensor._coerce(gain)
    bias = Tensor._coerce(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.data.shape} and {bias.data.shape}"
        )
    flat = np.ascontiguousarray(x.data.reshape(-1, d))
    y_flat, xhat, rstd = kernels.layer_norm_fwd(flat, gain.data, bias.data, eps)
    out_data = y_flat.reshape(x.data.shape)

    def backward(g):
        g_flat = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = kernels.layer_norm_bwd(g_flat, xhat, gain.data, rstd)
        if x.requires_grad:
            x._accumulate(dx.reshape(x.data.shape))
        if gain.requires_grad:
            gain._accumulate(dgain)
        if bias.requires_grad:
            bias._accumulate(dbias)

    return Tensor._result(out_data, (x, gain, bias), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax of the target class over the batch."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, C) logits, got {logits.data.shape}")
    batch, n_classes = logits.data.shape
    if targets.shape != (batch,):
        raise ShapeError(
            f"cross_entropy targets must have shape ({batch},), got {targets.shape}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise DataError(
            f"target labels must lie in [0, {n_classes}), got range "
            f"[{targets.min()}, {targets.max()}]"
        )
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    losses = lse - x[np.arange(batch), targets]
    out_data = np.array(losses.mean())

    def backward(g):
        if logits.requires_grad:
            probs = kernels.softmax_fwd(np.ascontiguousarray(x))
            probs[np.arange(batch), targets] -= 1.0
            logits._accumulate(probs * (float(g) / batch))

    return Tensor._result(out_data, (logits,), backward)


def grad_check(f, inputs, h: float = 1e-4) -> float:
    """Worst relative error between reverse-mode and central-difference grads.

    `f` must be a deterministic function of `inputs` (leaf tensors with
    requires_grad=True) returning a scalar Tensor.
    """
    for x in inputs:
        x.grad = None
    out = f(*inputs)
    out.backward()
    worst = 0.0
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(*inputs).data)
            flat[i] = orig - h
            f_minus = float(f(*inputs).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > worst:
                worst = rel
    return worst
