"""Minimal reverse-mode autodiff over numpy arrays.

Supports exactly the operator set the two models need: matmul, add,
elementwise sigmoid/tanh/exp/log, softmax, concat, slice, embedding lookup,
sum, dot, plus a fused LSTM cell step backed by the selected kernel backend.
Tensors are plain vectors/matrices; batching is done by looping episodes, so
keeping per-node overhead low matters more than generality.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def backward(self):
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar")
        order = _toposort(self)
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    return order


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.array(g)
    else:
        t.grad += g


def constant(value, dtype=None):
    arr = np.asarray(value)
    if dtype is not None or not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(dtype or np.float64)
    return Tensor(arr)


def _node(data, parents, backward):
    for p in parents:
        if p.requires_grad:
            return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


# -- arithmetic --------------------------------------------------------------

def add(a, b):
    def bwd(g):
        _accum(a, g)
        _accum(b, g)
    return _node(a.data + b.data, (a, b), bwd)


def sub(a, b):
    def bwd(g):
        _accum(a, g)
        _accum(b, -g)
    return _node(a.data - b.data, (a, b), bwd)


def mul(a, b):
    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)
    return _node(a.data * b.data, (a, b), bwd)


def scale(a, s):
    s = float(s)

    def bwd(g):
        _accum(a, g * s)
    return _node(a.data * np.asarray(s, dtype=a.data.dtype), (a,), bwd)


def shift(a, s):
    """Add a plain scalar (no gradient on the scalar)."""
    def bwd(g):
        _accum(a, g)
    return _node(a.data + np.asarray(s, dtype=a.data.dtype), (a,), bwd)


def matmul(a, b):
    """matmul for the 2D@1D, 2D@2D and 1D@2D cases."""
    ad, bd = a.data, b.data

    def bwd(g):
        if ad.ndim == 2 and bd.ndim == 1:
            _accum(a, g[:, None] * bd[None, :])
            _accum(b, ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 2:
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)
        else:  # 1D @ 2D
            _accum(a, bd @ g)
            _accum(b, ad[:, None] * g[None, :])
    return _node(ad @ bd, (a, b), bwd)


def matmul_tv(a, v):
    """``a.T @ v`` without materializing the transpose (attention readouts)."""
    ad, vd = a.data, v.data

    def bwd(g):
        _accum(a, vd[:, None] * g[None, :])
        _accum(v, ad @ g)
    return _node(ad.T @ vd, (a, v), bwd)


def dot(a, b):
    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)
    return _node(np.asarray(a.data @ b.data), (a, b), bwd)


def tsum(a):
    def bwd(g):
        _accum(a, np.full_like(a.data, g))
    return _node(np.asarray(a.data.sum()), (a,), bwd)


# -- elementwise nonlinearities ----------------------------------------------

def sigmoid(a):
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))
    return _node(out, (a,), bwd)


def tanh(a):
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))
    return _node(out, (a,), bwd)


def exp(a):
    out = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out)
    return _node(out, (a,), bwd)


def log(a):
    def bwd(g):
        _accum(a, g / a.data)
    return _node(np.log(a.data), (a,), bwd)


def softmax(a):
    """Stable softmax over a vector."""
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def bwd(g):
        _accum(a, out * (g - np.dot(g, out)))
    return _node(out, (a,), bwd)


# -- structure ---------------------------------------------------------------

def concat(parts):
    bounds = []
    off = 0
    for p in parts:
        bounds.append((p, off, off + p.data.shape[0]))
        off = bounds[-1][2]

    def bwd(g):
        for p, s, e in bounds:
            if p.requires_grad:
                _accum(p, g[s:e])
    return _node(np.concatenate([p.data for p in parts]), tuple(parts), bwd)


def stack_rows(parts):
    """Stack equal-length vectors into a matrix (one row per part)."""
    def bwd(g):
        for k, p in enumerate(parts):
            _accum(p, g[k])
    return _node(np.stack([p.data for p in parts]), tuple(parts), bwd)


def transpose(a):
    def bwd(g):
        _accum(a, g.T)
    return _node(a.data.T, (a,), bwd)


def tslice(a, start, stop):
    def bwd(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[start:stop] += g
    return _node(a.data[start:stop], (a,), bwd)


def pick(a, index):
    """Select one element of a vector as a scalar."""
    index = int(index)

    def bwd(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[index] += g
    return _node(np.asarray(a.data[index]), (a,), bwd)


def embed_row(table, index):
    """Row lookup in an embedding matrix."""
    index = int(index)

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            table.grad[index] += g
    return _node(table.data[index], (table,), bwd)


# -- fused LSTM cell ----------------------------------------------------------

def lstm_cell(W, b, inputs, c_prev):
    """Fused LSTM step via the active kernel backend.

    ``inputs`` are the vectors forming the cell input (h_prev last by
    convention); they are concatenated outside the tape so forward and
    backward each cross the Python boundary once.  Returns (h, c).
    """
    bounds = []
    off = 0
    for p in inputs:
        bounds.append((p, off, off + p.data.shape[0]))
        off = bounds[-1][2]
    z = np.concatenate([p.data for p in inputs])
    hc_data, cache = kernels.lstm_forward(W.data, b.data, z, c_prev.data)

    def bwd(g):
        dW, db, dz, dc_prev = kernels.lstm_backward(W.data, cache, g)
        _accum(W, dW)
        _accum(b, db)
        for p, s, e in bounds:
            if p.requires_grad:
                _accum(p, dz[s:e])
        _accum(c_prev, dc_prev)
    hc = _node(hc_data, (W, b, *inputs, c_prev), bwd)
    H = c_prev.data.shape[0]
    return tslice(hc, 0, H), tslice(hc, H, 2 * H)


def lstm_cell_ref(W, b, inputs, c_prev):
    """LSTM step composed from primitive ops; the independent reference the
    fused kernels are checked against."""
    H = c_prev.data.shape[0]
    z = concat(inputs) if len(inputs) > 1 else inputs[0]
    pre = add(matmul(W, z), b)
    i = sigmoid(tslice(pre, 0, H))
    f = sigmoid(tslice(pre, H, 2 * H))
    o = sigmoid(tslice(pre, 2 * H, 3 * H))
    g = tanh(tslice(pre, 3 * H, 4 * H))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def log_softmax_pick(logits, index):
    """log softmax(logits)[index], numerically stable (shift by max)."""
    m = float(logits.data.max())
    shifted = shift(logits, -m)
    return sub(pick(shifted, index), log(tsum(exp(shifted))))


# -- driver ------------------------------------------------------------------

def forward_backward(builder, params):
    """Evaluate ``builder(params) -> scalar loss Tensor`` and return
    ``(loss_value, grads)`` with grads keyed like the parameter set.

    Aborts with a diagnostic naming the offending parameter when the loss or
    any gradient is non-finite.
    """
    for t in params.values():
        t.grad = None
    loss = builder(params)
    value = float(loss.data)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    loss.backward()
    grads = {}
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        grads[name] = g
    return value, grads


def finite_difference_check(builder, params, *, step=1e-5, samples_per_param=4,
                            rng=None):
    """Compare autodiff gradients with centered finite differences on sampled
    coordinates of every parameter; returns the max relative error."""
    rng = rng or np.random.default_rng(0)
    _, grads = forward_backward(builder, params)

    def loss_at():
        for t in params.values():
            t.grad = None
        return float(builder(params).data)

    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.shape[0]
        idxs = rng.choice(n, size=min(samples_per_param, n), replace=False)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_at()
            flat[idx] = orig - step
            down = loss_at()
            flat[idx] = orig
            fd = (up - down) / (2.0 * step)
            ad = grads[name].reshape(-1)[idx]
            rel = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
            worst = max(worst, rel)
    return worst
