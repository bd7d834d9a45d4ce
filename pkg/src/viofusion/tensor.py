"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient and a backward rule.
Ops build an acyclic graph eagerly; ``backward(loss)`` walks it in reverse
topological order. Only the kernels the odometry model needs are provided:
matmul, elementwise arithmetic, the usual activations, reductions, concat /
reshape / basic slicing, a numerically stable softmax, and dilated causal
1-D / strided 2-D convolutions.

Gradients do not accumulate across backward passes: calling ``backward``
while a reachable parameter still holds a gradient raises, and
``zero_grads`` (or an optimizer step) must clear them first.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, GradientStateError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _FLOAT_DTYPES:
        return arr.astype(np.float64)
    return arr


class Tensor:
    """Node in a differentiable computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        """Value as a plain array, detached from the graph."""
        return np.array(self.data, copy=True)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers -------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad)
        else:
            self.grad = self.grad + grad

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        try:
            data = self.data + other.data
        except ValueError:
            raise ShapeError(f"add: shapes {self.shape} and {other.shape} do not broadcast")
        a, b = self, other

        def backward(grad):
            if a.requires_grad:
                a._accumulate(_unbroadcast(grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(grad, b.shape))

        return Tensor._result(data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(grad):
            if a.requires_grad:
                a._accumulate(-grad)

        return Tensor._result(-self.data, (a,), backward)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        try:
            data = self.data * other.data
        except ValueError:
            raise ShapeError(f"multiply: shapes {self.shape} and {other.shape} do not broadcast")
        a, b = self, other

        def backward(grad):
            if a.requires_grad:
                a._accumulate(_unbroadcast(grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(grad * a.data, b.shape))

        return Tensor._result(data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        try:
            data = self.data / other.data
        except ValueError:
            raise ShapeError(f"divide: shapes {self.shape} and {other.shape} do not broadcast")
        a, b = self, other

        def backward(grad):
            if a.requires_grad:
                a._accumulate(_unbroadcast(grad / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-grad * a.data / (b.data * b.data), b.shape))

        return Tensor._result(data, (a, b), backward)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        data = self.data[index]
        if not isinstance(data, np.ndarray):
            data = np.asarray(data)
        a = self

        def backward(grad):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[index] += grad
                a._accumulate(full)

        return Tensor._result(data, (a,), backward)

    # -- elementwise functions --------------------------------------------

    def relu(self):
        a = self
        data = np.maximum(self.data, 0)

        def backward(grad):
            if a.requires_grad:
                a._accumulate(grad * (a.data > 0))

        return Tensor._result(data, (a,), backward)

    def tanh(self):
        a = self
        data = np.tanh(self.data)

        def backward(grad):
            if a.requires_grad:
                a._accumulate(grad * (1.0 - data * data))

        return Tensor._result(data, (a,), backward)

    def sigmoid(self):
        a = self
        data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(grad):
            if a.requires_grad:
                a._accumulate(grad * data * (1.0 - data))

        return Tensor._result(data, (a,), backward)

    def exp(self):
        a = self
        data = np.exp(self.data)

        def backward(grad):
            if a.requires_grad:
                a._accumulate(grad * data)

        return Tensor._result(data, (a,), backward)

    def sqrt(self):
        a = self
        data = np.sqrt(self.data)

        def backward(grad):
            if a.requires_grad:
                a._accumulate(grad * 0.5 / data)

        return Tensor._result(data, (a,), backward)

    def square(self):
        return self * self

    def sin(self):
        a = self
        data = np.sin(self.data)

        def backward(grad):
            if a.requires_grad:
                a._accumulate(grad * np.cos(a.data))

        return Tensor._result(data, (a,), backward)

    def cos(self):
        a = self
        data = np.cos(self.data)

        def backward(grad):
            if a.requires_grad:
                a._accumulate(-grad * np.sin(a.data))

        return Tensor._result(data, (a,), backward)

    def asin(self):
        a = self
        data = np.arcsin(self.data)

        def backward(grad):
            if a.requires_grad:
                a._accumulate(grad / np.sqrt(1.0 - a.data * a.data))

        return Tensor._result(data, (a,), backward)

    # -- reductions & reshapes ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        data = self.data.sum(axis=axis, keepdims=keepdims)
        if not isinstance(data, np.ndarray):
            data = np.asarray(data)

        def backward(grad):
            if not a.requires_grad:
                return
            g = grad
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
            a._accumulate(np.broadcast_to(g, a.shape).copy())

        return Tensor._result(data, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for ax in axes:
                count *= self.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = self.data.reshape(shape)

        def backward(grad):
            if a.requires_grad:
                a._accumulate(grad.reshape(a.shape))

        return Tensor._result(data, (a,), backward)

    def transpose(self):
        if self.ndim != 2:
            raise ShapeError(f"transpose: expected rank-2 tensor, got shape {self.shape}")
        a = self

        def backward(grad):
            if a.requires_grad:
                a._accumulate(grad.T)

        return Tensor._result(self.data.T.copy(), (a,), backward)

    def backward(self):
        backward(self)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for rank-1/rank-2 operands with numpy semantics."""
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul: ranks must be 1 or 2, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ for shapes {a.shape} and {b.shape}")

    a2 = a.data if a.ndim == 2 else a.data[None, :]
    b2 = b.data if b.ndim == 2 else b.data[:, None]
    out2 = a2 @ b2
    data = out2
    if a.ndim == 1:
        data = data[0]
    if b.ndim == 1:
        data = data[..., 0]

    def backward(grad):
        g2 = grad
        if a.ndim == 1:
            g2 = g2[None, ...]
        if b.ndim == 1:
            g2 = g2[..., None]
        if a.requires_grad:
            ga = g2 @ b2.T
            a._accumulate(ga[0] if a.ndim == 1 else ga)
        if b.requires_grad:
            gb = a2.T @ g2
            b._accumulate(gb[:, 0] if b.ndim == 1 else gb)

    return Tensor._result(np.asarray(data), (a, b), backward)


def concat(tensors, axis=0):
    """Concatenate along one axis; all other dims must agree."""
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat: empty tensor list")
    first = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(first):
            raise ShapeError(f"concat: ranks differ, {first} vs {t.shape}")
        for ax, (m, n) in enumerate(zip(first, t.shape)):
            if ax != axis % len(first) and m != n:
                raise ShapeError(f"concat: shapes {first} and {t.shape} differ off axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(grad):
        start = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * grad.ndim
                index[axis] = slice(start, start + size)
                t._accumulate(grad[tuple(index)])
            start += size

    return Tensor._result(data, tuple(tensors), backward)


def atan2(y: Tensor, x: Tensor) -> Tensor:
    """Elementwise arctan2 with gradients to both arguments."""
    if not isinstance(y, Tensor):
        y = Tensor(y)
    x = y._coerce(x)
    data = np.arctan2(y.data, x.data)

    def backward(grad):
        denom = x.data * x.data + y.data * y.data
        if y.requires_grad:
            y._accumulate(_unbroadcast(grad * x.data / denom, y.shape))
        if x.requires_grad:
            x._accumulate(_unbroadcast(-grad * y.data / denom, x.shape))

    return Tensor._result(data, (y, x), backward)


def softmax(x: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim == 0 or axis >= x.ndim or axis < -x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(grad):
        if x.requires_grad:
            inner = (grad * data).sum(axis=axis, keepdims=True)
            x._accumulate(data * (grad - inner))

    return Tensor._result(data, (x,), backward)


def conv1d_causal(x: Tensor, weight: Tensor, bias=None, dilation=1) -> Tensor:
    """Dilated causal 1-D convolution, length preserving.

    ``x`` is (channels_in, time), ``weight`` is (channels_out, channels_in,
    kernel). The input is zero-padded on the left by (kernel-1)*dilation so
    output step t only sees input steps <= t.
    """
    if dilation < 1:
        raise ConfigError(f"conv1d: dilation must be >= 1, got {dilation}")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if not isinstance(weight, Tensor):
        weight = Tensor(weight)
    if x.ndim != 2 or weight.ndim != 3:
        raise ShapeError(
            f"conv1d: expected x (C_in, T) and weight (C_out, C_in, K), got {x.shape} and {weight.shape}"
        )
    c_out, c_in, kernel = weight.shape
    if kernel < 1:
        raise ConfigError(f"conv1d: kernel size must be >= 1, got {kernel}")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv1d: input has {x.shape[0]} channels, weight expects {c_in}")
    t_len = x.shape[1]
    pad = (kernel - 1) * dilation
    xp = np.concatenate([np.zeros((c_in, pad), dtype=x.dtype), x.data], axis=1)
    out = np.zeros((c_out, t_len), dtype=xp.dtype)
    for k in range(kernel):
        out += weight.data[:, :, k] @ xp[:, k * dilation : k * dilation + t_len]
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"conv1d: bias shape {bias.shape} != ({c_out},)")
        out = out + bias.data[:, None]
        parents.append(bias)

    def backward(grad):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(kernel):
                gxp[:, k * dilation : k * dilation + t_len] += weight.data[:, :, k].T @ grad
            x._accumulate(gxp[:, pad:])
        if weight.requires_grad:
            gw = np.zeros_like(weight.data)
            for k in range(kernel):
                gw[:, :, k] = grad @ xp[:, k * dilation : k * dilation + t_len].T
            weight._accumulate(gw)
        if bias is not None and bias.requires_grad:
            bias._accumulate(grad.sum(axis=1))

    return Tensor._result(out, tuple(parents), backward)


_COL_INDEX_CACHE = {}


def _conv2d_indices(c_in, h_pad, w_pad, kh, kw, stride):
    key = (c_in, h_pad, w_pad, kh, kw, stride)
    cached = _COL_INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    h_out = (h_pad - kh) // stride + 1
    w_out = (w_pad - kw) // stride + 1
    c_idx = np.repeat(np.arange(c_in), kh * kw).reshape(-1, 1)
    i0 = np.tile(np.repeat(np.arange(kh), kw), c_in).reshape(-1, 1)
    j0 = np.tile(np.arange(kw), kh * c_in).reshape(-1, 1)
    i1 = stride * np.repeat(np.arange(h_out), w_out).reshape(1, -1)
    j1 = stride * np.tile(np.arange(w_out), h_out).reshape(1, -1)
    result = (c_idx, i0 + i1, j0 + j1, h_out, w_out)
    _COL_INDEX_CACHE[key] = result
    return result


def conv2d(x: Tensor, weight: Tensor, bias=None, stride=1, padding=0) -> Tensor:
    """2-D convolution on a single (C, H, W) image via im2col."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(
            f"conv2d: expected x (C, H, W) and weight (O, C, KH, KW), got {x.shape} and {weight.shape}"
        )
    c_out, c_in, kh, kw = weight.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, weight expects {c_in}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    c_idx, i_idx, j_idx, h_out, w_out = _conv2d_indices(
        c_in, xp.shape[1], xp.shape[2], kh, kw, stride
    )
    cols = xp[c_idx, i_idx, j_idx]  # (C*KH*KW, H_out*W_out)
    w_mat = weight.data.reshape(c_out, -1)
    out = w_mat @ cols
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
        out = out + bias.data[:, None]
        parents.append(bias)
    out = out.reshape(c_out, h_out, w_out)

    def backward(grad):
        g_mat = grad.reshape(c_out, -1)
        if weight.requires_grad:
            weight._accumulate((g_mat @ cols.T).reshape(weight.shape))
        if x.requires_grad:
            g_cols = w_mat.T @ g_mat
            gxp = np.zeros_like(xp)
            np.add.at(gxp, (c_idx, i_idx, j_idx), g_cols)
            if padding:
                gxp = gxp[:, padding:-padding, padding:-padding]
            x._accumulate(gxp)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g_mat.sum(axis=1))

    return Tensor._result(out, tuple(parents), backward)


def _toposort(root: Tensor):
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
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """Populate gradients of every reachable requires_grad tensor.

    ``loss`` must be scalar. Leaf tensors must have empty gradients; call
    ``zero_grads`` first (or let the optimizer clear them).
    """
    if loss.data.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any requires_grad tensor")
    order = _toposort(loss)
    for node in order:
        if not node._parents and node.grad is not None:
            raise GradientStateError(
                "backward: a reachable leaf already holds a gradient; call zero_grads first"
            )
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(tensors):
    """Clear gradients on tensors or Parameter-like objects."""
    for t in tensors:
        if hasattr(t, "tensor"):
            t.tensor.grad = None
        else:
            t.grad = None
