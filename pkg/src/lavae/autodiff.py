"""Minimal reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ndarray and records enough of the computation graph to
backpropagate a scalar loss.  Only the operations the models here need are
implemented: elementwise arithmetic, matmul, strided conv / transposed conv
(via im2col / col2im), activations, reductions, concat and column slicing.

The graph is rebuilt on every forward pass; leaves created with
``requires_grad=True`` accumulate into ``.grad``.  All ops preserve the dtype
of their inputs, so the same code runs in float32 for training and float64
for finite-difference checks.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        # out-of-place: backward functions may hand back views of shared buffers
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Backpropagate from this tensor (scalar unless `grad` is given)."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar tensor")
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _tracked(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _make(data, parents, backward):
    if _tracked(*parents):
        return Tensor(data, parents=parents, backward=backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    """Sum `g` down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, dtype=a.dtype)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), backward)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, dtype=a.dtype)
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), backward)


def square(a):
    return mul(a, a)


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = _as_tensor(a)
    out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,))


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)
    return _make(out, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a):
    a = _as_tensor(a)
    # split by sign to avoid exp overflow
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clamp(a, lo, hi):
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def backward(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _make(out, (a,), backward)


# -- shape ops -----------------------------------------------------------


def reshape(a, shape):
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.data.shape),))


def concat_cols(a, b):
    """Concatenate two 2-D tensors along axis 1."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = np.concatenate([a.data, b.data], axis=1)
    na = a.data.shape[1]
    return _make(out, (a, b), lambda g: (g[:, :na], g[:, na:]))


def narrow_cols(a, start, length):
    """Slice columns [start, start+length) of a 2-D tensor."""
    a = _as_tensor(a)
    out = a.data[:, start:start + length]

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:start + length] = g
        return (full,)

    return _make(out, (a,), backward)


def sum_(a, axis=None):
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True),)
        g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True),)

    return _make(out, (a,), backward)


def mean_over_axis0(a):
    """Mean over the leading (batch) axis of a 1-D per-sample tensor."""
    a = _as_tensor(a)
    n = a.data.shape[0]
    return mul(sum_(a), 1.0 / n)


# -- linear algebra ------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), backward)


def linear(x, w, b):
    """x @ w + b with x (N, in), w (in, out), b (out,)."""
    return add(matmul(x, w), b)


# -- convolutions ---------------------------------------------------------
#
# Both ops use 3x3-style im2col lowering; weights follow the usual layouts
# conv: (Cout, Cin, kh, kw), transposed conv: (Cin, Cout, kh, kw).


def _im2col(x, kh, kw, stride, pad):
    """(N, C, H, W) -> columns (N, OH, OW, C, kh, kw), padded with zeros."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride].transpose(0, 2, 3, 1, 4, 5)


def _col2im(cols, xshape, stride, pad):
    """Adjoint of _im2col: scatter-add columns back to (N, C, H, W)."""
    n, c, h, w = xshape
    _, oh, ow, _, kh, kw = cols.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def conv2d(x, w, b, stride=2, pad=1):
    """Strided 2-D convolution; x (N,Cin,H,W), w (Cout,Cin,kh,kw), b (Cout,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    n, cin, h, wi = x.data.shape
    cout, _, kh, kw = w.data.shape
    cols = _im2col(x.data, kh, kw, stride, pad)
    oh, ow = cols.shape[1], cols.shape[2]
    cols2 = np.ascontiguousarray(cols).reshape(n * oh * ow, cin * kh * kw)
    w2 = w.data.reshape(cout, cin * kh * kw)
    out = (cols2 @ w2.T).reshape(n, oh, ow, cout).transpose(0, 3, 1, 2) \
        + b.data.reshape(1, cout, 1, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
        gw = (g2.T @ cols2).reshape(w.data.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcols = (g2 @ w2).reshape(n, oh, ow, cin, kh, kw)
        gx = _col2im(gcols, x.data.shape, stride, pad)
        return gx, gw, gb

    return _make(out, (x, w, b), backward)


def conv_transpose2d(x, w, b, stride=2, pad=1, output_pad=1):
    """Transposed 2-D convolution; x (N,Cin,H,W), w (Cin,Cout,kh,kw), b (Cout,).

    Output spatial size is (H-1)*stride - 2*pad + kh + output_pad.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    n, cin, h, wi = x.data.shape
    _, cout, kh, kw = w.data.shape
    oh = (h - 1) * stride - 2 * pad + kh + output_pad
    ow = (wi - 1) * stride - 2 * pad + kw + output_pad
    full_h = (h - 1) * stride + kh + output_pad
    full_w = (wi - 1) * stride + kw + output_pad

    x2 = x.data.transpose(0, 2, 3, 1).reshape(n * h * wi, cin)
    w2 = w.data.reshape(cin, cout * kh * kw)
    cols = (x2 @ w2).reshape(n, h, wi, cout, kh, kw)
    full = np.zeros((n, cout, full_h, full_w), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + stride * h:stride, j:j + stride * wi:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    out = full[:, :, pad:pad + oh, pad:pad + ow] + b.data.reshape(1, cout, 1, 1)

    def backward(g):
        gfull = np.zeros((n, cout, full_h, full_w), dtype=g.dtype)
        gfull[:, :, pad:pad + oh, pad:pad + ow] = g
        win = np.lib.stride_tricks.sliding_window_view(gfull, (kh, kw), axis=(2, 3))
        gcols = win[:, :, ::stride, ::stride].transpose(0, 2, 3, 1, 4, 5)
        gcols2 = np.ascontiguousarray(gcols).reshape(n * h * wi, cout * kh * kw)
        gx = (gcols2 @ w2.T).reshape(n, h, wi, cin).transpose(0, 3, 1, 2)
        gw = (x2.T @ gcols2).reshape(w.data.shape)
        gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _make(out, (x, w, b), backward)
