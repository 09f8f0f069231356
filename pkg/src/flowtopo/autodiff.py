"""Minimal reverse-mode automatic differentiation on numpy float64 arrays.

A Tensor records the primitive that produced it together with a backward
closure; backward() walks the recorded graph once in reverse topological
order and accumulates gradients into the leaves. Only the operations the
flows and losses need are provided. Gradients themselves are plain numpy
arrays and are not differentiable (no higher-order derivatives).
"""

import numpy as np

from .errors import UsageError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def _as_array(x):
    a = np.asarray(x, dtype=np.float64)
    return a


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, _parents=(), _bwd=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or not g.flags.owndata else g
        else:
            self.grad = self.grad + g

    # ---- arithmetic -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_const(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return mul(pow_const(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data, parents, bwd):
    """Create an op output; records the closure only when grads are live."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _bwd=bwd)
    return Tensor(data)


# ---- primitive ops ------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def pow_const(a, exponent: float):
    a = as_tensor(a)
    e = float(exponent)
    out_data = a.data**e

    def bwd(g):
        if a.requires_grad:
            a._accum(unbroadcast(g * e * a.data ** (e - 1.0), a.data.shape))

    return _make(out_data, (a,), bwd)


def texp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * out_data)

    return _make(out_data, (a,), bwd)


def tlog(a):
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g / a.data)

    return _make(out_data, (a,), bwd)


def ttanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd)


def tsigmoid(a):
    a = as_tensor(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(out_data, (a, b), bwd)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accum(np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(gg, a.data.shape))

    return _make(out_data, (a,), bwd)


def tmean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accum(g.reshape(a.data.shape))

    return _make(out_data, (a,), bwd)


def logsumexp(a, axis=-1):
    """Max-shifted log-sum-exp along `axis` (axis removed from the result)."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all -inf row stays -inf without nan
    shifted = texp(add(a, Tensor(-m)))
    s = tsum(shifted, axis=axis)
    return add(tlog(s), Tensor(np.squeeze(m, axis=axis)))


def select_cols(a, cols):
    """Pick the given column indices of a 2-D tensor."""
    a = as_tensor(a)
    cols = np.asarray(cols, dtype=np.intp)
    out_data = a.data[:, cols]

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[:, cols] = g
            a._accum(ga)

    return _make(out_data, (a,), bwd)


def merge_cols(d, cols_a, a, cols_b, b):
    """Assemble an (n, d) tensor from two disjoint column groups."""
    a, b = as_tensor(a), as_tensor(b)
    n = a.data.shape[0]
    out_data = np.empty((n, d), dtype=np.float64)
    out_data[:, np.asarray(cols_a, dtype=np.intp)] = a.data
    out_data[:, np.asarray(cols_b, dtype=np.intp)] = b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(g[:, np.asarray(cols_a, dtype=np.intp)])
        if b.requires_grad:
            b._accum(g[:, np.asarray(cols_b, dtype=np.intp)])

    return _make(out_data, (a, b), bwd)


def take_rows(a, idx):
    """Row gather: out[i] = a[idx[i]]; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            a._accum(ga)

    return _make(out_data, (a,), bwd)


def gather_index(a, idx):
    """Per-row element gather from a 2-D tensor: out[i] = a[i, idx[i]]."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, idx]

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, (rows, idx), g)
            a._accum(ga)

    return _make(out_data, (a,), bwd)


def stack_cols(tensors):
    """Stack 1-D tensors of length n into an (n, len(tensors)) tensor."""
    ts = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in ts], axis=1)

    def bwd(g):
        for j, t in enumerate(ts):
            if t.requires_grad:
                t._accum(g[:, j])

    return _make(out_data, tuple(ts), bwd)


def kernel_op(out_datas, parents, bwd_fns):
    """Wrap a fused-kernel result (several outputs, one backward family).

    `bwd_fns[i]` receives the i-th output's incoming gradient and accumulates
    into the parents; heavy shared work should be cached by the caller via a
    closure so the first invocation pays for it once.
    """
    parents = tuple(as_tensor(p) for p in parents)
    outs = []
    for data, bwd in zip(out_datas, bwd_fns):
        outs.append(_make(data, parents, bwd))
    return outs


# ---- backward engine ----------------------------------------------------


def backward(loss: Tensor):
    """Accumulate d loss / d leaf into every reachable leaf's `.grad`."""
    if not isinstance(loss, Tensor):
        raise UsageError("backward() expects a Tensor")
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad or (loss._bwd is None and not loss._parents):
        raise UsageError("loss is not recorded on the tape (no graph attached)")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
        if node._parents:
            node.grad = None  # free interior gradients immediately
