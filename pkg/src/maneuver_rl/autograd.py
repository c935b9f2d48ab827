"""A small reverse-mode autodiff engine over numpy arrays (float64).

Each op records its parents and a closure that pushes the output gradient
back to them. ``Tensor.backward`` walks the graph in reverse topological
order. Only the ops the networks in this package need are provided.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEBUG = False


def set_debug(flag: bool) -> None:
    """Check every op output for non-finite values."""
    global _DEBUG
    _DEBUG = bool(flag)


class ShapeError(ValueError):
    pass


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        if _DEBUG and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite value produced")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=np.float64).copy()
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic -------------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))
    return Tensor(a.data + b.data, _parents=(a, b), _backward=back)


def neg(a) -> Tensor:
    return Tensor(-a.data, _parents=(a,), _backward=lambda g: a._accum(-g))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))
    return Tensor(a.data * b.data, _parents=(a, b), _backward=back)


def power(a, p: float) -> Tensor:
    out = a.data ** p
    return Tensor(out, _parents=(a,), _backward=lambda g: a._accum(g * p * a.data ** (p - 1)))


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any number of leading dims."""
    a, b = _wrap(a), _wrap(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")

    def back(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
    return Tensor(a.data @ b.data, _parents=(a, b), _backward=back)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))
    return Tensor(out, _parents=(a,), _backward=back)


def reshape(a, shape) -> Tensor:
    return Tensor(a.data.reshape(shape), _parents=(a,),
                  _backward=lambda g: a._accum(g.reshape(a.shape)))


def getitem(a, idx) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accum(full)
    return Tensor(a.data[idx], _parents=(a,), _backward=back)


def take_along(a, indices, axis=-1) -> Tensor:
    """Pick one entry per row along ``axis`` (e.g. Q-values of taken actions)."""
    idx = np.expand_dims(np.asarray(indices, dtype=np.int64), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        a._accum(full)
    return Tensor(out, _parents=(a,), _backward=back)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            t._accum(piece)
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=back)


# elementwise nonlinearities -----------------------------------------------------------

def tanh(a) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: a._accum(g * (1.0 - out * out)))


def relu(a) -> Tensor:
    mask = a.data > 0
    return Tensor(a.data * mask, _parents=(a,), _backward=lambda g: a._accum(g * mask))


def sigmoid(a) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out, _parents=(a,), _backward=lambda g: a._accum(g * out * (1.0 - out)))


def exp(a) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: a._accum(g * out))


def log(a) -> Tensor:
    return Tensor(np.log(a.data), _parents=(a,), _backward=lambda g: a._accum(g / a.data))


def sqrt(a) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: a._accum(g * 0.5 / out))


def clip(a, lo, hi) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return Tensor(np.clip(a.data, lo, hi), _parents=(a,), _backward=lambda g: a._accum(g * mask))


def softmax(a, axis=-1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return Tensor(out, _parents=(a,), _backward=back)


def huber(err, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty: err^2/2 inside +-delta, linear beyond."""
    e = err.data
    small = np.abs(e) <= delta
    out = np.where(small, 0.5 * e * e, delta * (np.abs(e) - 0.5 * delta))
    return Tensor(out, _parents=(err,),
                  _backward=lambda g: err._accum(g * np.where(small, e, delta * np.sign(e))))


# convolution and pooling, channels-last (batch, height, width, channels) ---------------

def conv2d(x, w, b=None, padding=(0, 0)) -> Tensor:
    """2-D cross-correlation, stride 1. ``w`` has shape (kh, kw, c_in, c_out)."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d shapes incompatible: x {x.shape}, w {w.shape}")
    kh, kw = w.shape[:2]
    ph, pw = padding
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # B, Ho, Wo, C, kh, kw
    B, Ho, Wo = win.shape[:3]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * w.shape[2])
    wm = w.data.reshape(-1, w.shape[3])
    out = (cols @ wm).reshape(B, Ho, Wo, w.shape[3])
    parents = (x, w)
    if b is not None:
        b = _wrap(b)
        out = out + b.data
        parents = (x, w, b)

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        w._accum((cols.T @ g2).reshape(w.shape))
        if b is not None:
            b._accum(g2.sum(axis=0))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + Ho, j:j + Wo, :] += g @ w.data[i, j].T
            x._accum(dxp[:, ph:ph + x.shape[1], pw:pw + x.shape[2], :])
    return Tensor(out, _parents=parents, _backward=back)


def maxpool2d(x, size=(2, 1)) -> Tensor:
    """Non-overlapping max pool; trailing rows/cols that do not fill a window are dropped."""
    ph, pw = size
    B, H, W, C = x.shape
    Ho, Wo = H // ph, W // pw
    crop = x.data[:, :Ho * ph, :Wo * pw, :]
    blocks = crop.reshape(B, Ho, ph, Wo, pw, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, Ho, Wo, C, ph * pw)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, Ho, Wo, C, ph, pw).transpose(0, 1, 4, 2, 5, 3).reshape(B, Ho * ph, Wo * pw, C)
        full = np.zeros_like(x.data)
        full[:, :Ho * ph, :Wo * pw, :] = gb
        x._accum(full)
    return Tensor(out, _parents=(x,), _backward=back)


def numerical_grad(f, array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = array[i]
        array[i] = old + eps
        fp = f()
        array[i] = old - eps
        fm = f()
        array[i] = old
        grad[i] = (fp - fm) / (2 * eps)
    return grad
