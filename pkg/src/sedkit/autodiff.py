"""Reverse-mode automatic differentiation on numpy buffers.

Define-by-run: every operation records its parents and a backward closure
on the output tensor; ``Tensor.backward()`` runs the closures in reverse
topological order. Gradients accumulate, so a tensor feeding several
consumers receives the sum of all path gradients.
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "no_grad",
    "add",
    "mul",
    "matmul",
    "conv2d",
    "max_pool2d",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "cast",
    "concat",
    "softmax",
    "tensor_sum",
    "tensor_mean",
    "reshape",
    "transpose",
    "gru_sequence",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names both shapes."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (teacher passes, inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """An n-dimensional value node: data buffer, lazily allocated grad,
    and (when produced by an op) the provenance needed for backward."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate dLoss/dTensor on every reachable requires_grad tensor.

        The receiver must be scalar (size 1).
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn()

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __sub__(self, other):
        return add(self, -_wrap(other, self.dtype))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), -self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tensor_slice(self, key)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn(out)
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


# -- elementwise --------------------------------------------------------


def add(a, b):
    _check_broadcast(a, b, "add")

    def bwd(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return run

    return _make(a.data + b.data, (a, b), bwd)


def mul(a, b):
    _check_broadcast(a, b, "mul")

    def bwd(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return run

    return _make(a.data * b.data, (a, b), bwd)


def div(a, b):
    _check_broadcast(a, b, "div")

    def bwd(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return run

    return _make(a.data / b.data, (a, b), bwd)


def sigmoid(x):
    # tanh-based form is overflow-safe for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bwd(out):
        def run():
            x._accumulate(out.grad * (out.data * (1.0 - out.data)))

        return run

    return _make(y, (x,), bwd)


def tanh(x):
    def bwd(out):
        def run():
            x._accumulate(out.grad * (1.0 - out.data * out.data))

        return run

    return _make(np.tanh(x.data), (x,), bwd)


def exp(x):
    def bwd(out):
        def run():
            x._accumulate(out.grad * out.data)

        return run

    return _make(np.exp(x.data), (x,), bwd)


def log(x):
    def bwd(out):
        def run():
            x._accumulate(out.grad / x.data)

        return run

    return _make(np.log(x.data), (x,), bwd)


def sqrt(x):
    def bwd(out):
        def run():
            x._accumulate(out.grad * (0.5 / out.data))

        return run

    return _make(np.sqrt(x.data), (x,), bwd)


def cast(x, dtype):
    def bwd(out):
        def run():
            x._accumulate(out.grad.astype(x.dtype))

        return run

    return _make(x.data.astype(dtype), (x,), bwd)


# -- linear algebra ------------------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not chain")

    def bwd(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        return run

    return _make(a.data @ b.data, (a, b), bwd)


def conv2d(x, w, bias=None):
    """2-D convolution, kernel 3x3, stride 1, padding 1 (shape-preserving).

    x: (N, C_in, H, W); w: (C_out, C_in, 3, 3); bias: (C_out,) or None.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input/kernel, got {x.shape} and {w.shape}")
    if w.shape[2:] != (3, 3) or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    n, c_in, h, wd = x.shape
    c_out = w.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.zeros((c_out, n, h, wd), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            # (c_out, c_in) @ (n, c_in, h, w) contracted over c_in
            y += np.tensordot(w.data[:, :, dy, dx], xp[:, :, dy : dy + h, dx : dx + wd], axes=([1], [1]))
    y = y.transpose(1, 0, 2, 3)
    if bias is not None:
        y += bias.data[None, :, None, None]

    parents = (x, w) if bias is None else (x, w, bias)

    def bwd(out):
        def run():
            g = out.grad  # (n, c_out, h, w)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2, 3)))
            if w.requires_grad:
                dw = np.empty_like(w.data)
                for dy in range(3):
                    for dx in range(3):
                        dw[:, :, dy, dx] = np.tensordot(
                            g, xp[:, :, dy : dy + h, dx : dx + wd], axes=([0, 2, 3], [0, 2, 3])
                        )
                w._accumulate(dw)
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for dy in range(3):
                    for dx in range(3):
                        dxp[:, :, dy : dy + h, dx : dx + wd] += np.tensordot(
                            g, w.data[:, :, dy, dx], axes=([1], [0])
                        ).transpose(0, 3, 1, 2)
                x._accumulate(dxp[:, :, 1 : 1 + h, 1 : 1 + wd])

        return run

    return _make(y, parents, bwd)


def max_pool2d(x, pool):
    """Non-overlapping max pooling; `pool` = (ph, pw) must divide the dims.

    Backward routes the gradient to the (first) max cell of each window.
    """
    ph, pw = pool
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d: expected 4-d input, got {x.shape}")
    n, c, h, wd = x.shape
    if h % ph or wd % pw:
        raise ShapeError(f"max_pool2d: pool {pool} does not divide input {x.shape}")
    ho, wo = h // ph, wd // pw
    windows = (
        x.data.reshape(n, c, ho, ph, wo, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, ph * pw)
    )
    idx = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def bwd(out):
        def run():
            gw = np.zeros((n, c, ho, wo, ph * pw), dtype=x.dtype)
            np.put_along_axis(gw, idx[..., None], out.grad[..., None], axis=-1)
            g = gw.reshape(n, c, ho, wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, wd)
            x._accumulate(g)

        return run

    return _make(y, (x,), bwd)


# -- shape manipulation --------------------------------------------------


def concat(tensors, axis):
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != axis % len(base) and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]

    def bwd(out):
        def run():
            pieces = np.split(out.grad, np.cumsum(sizes)[:-1], axis=axis)
            for t, g in zip(tensors, pieces):
                if t.requires_grad:
                    t._accumulate(g)

        return run

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def reshape(x, shape):
    def bwd(out):
        def run():
            x._accumulate(out.grad.reshape(x.shape))

        return run

    return _make(x.data.reshape(shape), (x,), bwd)


def transpose(x, axes):
    inverse = np.argsort(axes)

    def bwd(out):
        def run():
            x._accumulate(out.grad.transpose(inverse))

        return run

    return _make(x.data.transpose(axes), (x,), bwd)


def tensor_slice(x, key):
    def bwd(out):
        def run():
            g = np.zeros_like(x.data)
            g[key] = out.grad
            x._accumulate(g)

        return run

    return _make(x.data[key], (x,), bwd)


# -- reductions and normalizers ------------------------------------------


def tensor_sum(x, axis=None, keepdims=False):
    def bwd(out):
        def run():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.shape).copy())

        return run

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), bwd)


def tensor_mean(x, axis=None, keepdims=False):
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def bwd(out):
        def run():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.shape) / count)

        return run

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), bwd)


def softmax(x, axis):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(out):
        def run():
            g = out.grad
            gs = g * out.data
            x._accumulate(gs - out.data * gs.sum(axis=axis, keepdims=True))

        return run

    return _make(s, (x,), bwd)


# -- fused recurrent layer -----------------------------------------------


def gru_sequence(x, w_x, w_h, b, h0=None, reverse=False):
    """One GRU direction over a whole sequence as a single graph node.

    x: (T, N, D); w_x: (D, 3H); w_h: (H, 3H); b: (3H,). Gate slices are
    ordered [z | r | n]:

        z = sig(x Wxz + h Whz + bz)
        r = sig(x Wxr + h Whr + br)
        n = tanh(x Wxn + (r * h) Whn + bn)
        h' = z * h + (1 - z) * n

    Returns the hidden-state sequence (T, N, H), aligned to input steps
    (for ``reverse=True`` the recurrence runs from the last step back).
    """
    if x.data.ndim != 3:
        raise ShapeError(f"gru_sequence: expected (T, N, D) input, got {x.shape}")
    t_len, n, d = x.shape
    h_units = w_h.shape[0]
    if w_x.shape != (d, 3 * h_units) or w_h.shape != (h_units, 3 * h_units):
        raise ShapeError(f"gru_sequence: input ({d}) vs weights {w_x.shape}/{w_h.shape}")
    dtype = x.dtype
    h_prev = np.zeros((n, h_units), dtype=dtype) if h0 is None else h0

    xw = x.data.reshape(t_len * n, d) @ w_x.data + b.data  # all input projections at once
    xw = xw.reshape(t_len, n, 3 * h_units)

    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    hs = np.empty((t_len, n, h_units), dtype=dtype)
    cache_z = np.empty_like(hs)
    cache_r = np.empty_like(hs)
    cache_n = np.empty_like(hs)
    cache_hprev = np.empty_like(hs)
    wh = w_h.data
    h = h_prev
    for t in steps:
        gates = h @ wh
        z = 0.5 * (1.0 + np.tanh(0.5 * (xw[t][:, :h_units] + gates[:, :h_units])))
        r = 0.5 * (1.0 + np.tanh(0.5 * (xw[t][:, h_units : 2 * h_units] + gates[:, h_units : 2 * h_units])))
        rh = r * h
        cand = np.tanh(xw[t][:, 2 * h_units :] + rh @ wh[:, 2 * h_units :])
        cache_hprev[t] = h
        cache_z[t] = z
        cache_r[t] = r
        cache_n[t] = cand
        h = z * h + (1.0 - z) * cand
        hs[t] = h

    def bwd(out):
        def run():
            g_out = out.grad
            dwx = np.zeros_like(w_x.data)
            dwh = np.zeros_like(w_h.data)
            db = np.zeros_like(b.data)
            dx = np.zeros((t_len, n, d), dtype=dtype) if x.requires_grad else None
            dh = np.zeros((n, h_units), dtype=dtype)
            whz = wh[:, :h_units]
            whr = wh[:, h_units : 2 * h_units]
            whn = wh[:, 2 * h_units :]
            for t in (range(t_len) if reverse else range(t_len - 1, -1, -1)):
                dh = dh + g_out[t]
                z, r, cand, hp = cache_z[t], cache_r[t], cache_n[t], cache_hprev[t]
                dz = dh * (hp - cand)
                daz = dz * z * (1.0 - z)
                dn = dh * (1.0 - z)
                dan = dn * (1.0 - cand * cand)
                drh = dan @ whn.T
                dr = drh * hp
                dar = dr * r * (1.0 - r)
                dh_next = dh * z + drh * r + daz @ whz.T + dar @ whr.T
                da = np.concatenate([daz, dar, dan], axis=1)
                rh = r * hp
                dwh[:, :h_units] += hp.T @ daz
                dwh[:, h_units : 2 * h_units] += hp.T @ dar
                dwh[:, 2 * h_units :] += rh.T @ dan
                db += da.sum(axis=0)
                if x.requires_grad:
                    dx[t] = da @ w_x.data.T
                dwx += x.data[t].T @ da
                dh = dh_next
            if x.requires_grad:
                x._accumulate(dx)
            if w_x.requires_grad:
                w_x._accumulate(dwx)
            if w_h.requires_grad:
                w_h._accumulate(dwh)
            if b.requires_grad:
                b._accumulate(db)

        return run

    return _make(hs, (x, w_x, w_h, b), bwd)
