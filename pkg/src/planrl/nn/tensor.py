"""Dense float64 tensors with tape-based reverse-mode differentiation.

Conventions:
  * every value is a float64 ndarray; scalars are 0-d arrays
  * ops executed while a Tape is active are recorded in execution order,
    and execution order is already a topological order of the graph, so
    the backward pass is a single reverse sweep over the tape
  * with no active tape the same numpy expressions run without recording;
    this is the inference path used by the planner and rollout collection,
    and it is bit-identical to the taped forward because both paths issue
    the same numpy calls in the same order
  * tensor data is never mutated in place by ops; optimizers are the only
    writers, and they run between tapes
"""

from __future__ import annotations

import numpy as np

from planrl.errors import UsageError

_TAPES: list["Tape"] = []

_LOG_2PI = float(np.log(2.0 * np.pi))


class Tape:
    """Ordered record of ops; reused as the unit of one backward pass."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._nodes)


def _active_tape():
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """A value in the graph plus a gradient slot filled by backward()."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape})"

    # sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self):
        return tmean(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x, name=None):
    return Tensor(x, requires_grad=False, name=name)


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape = _active_tape()
        if tape is not None:
            out._parents = parents
            out._backward = backward
            tape._nodes.append(out)
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), bw)


def neg(a):
    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw)


def pow_const(a, p):
    p = float(p)

    def bw(g):
        _accum(a, g * p * np.power(a.data, p - 1.0))

    return _make(np.power(a.data, p), (a,), bw)


def square(a):
    def bw(g):
        _accum(a, g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), bw)


def exp(a):
    out_data = np.exp(a.data)

    def bw(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), bw)


def log(a):
    def bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def tanh(a):
    out_data = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bw)


# BLAS dispatches different kernels for different row counts (a one-row
# product takes a gemv path, an out-width-1 product shifts with the row
# count), which perturbs low bits. Issuing every product at exactly this
# many rows keeps a row's result a function of its content alone, so
# vectorized and sequential execution agree bit for bit at any batch size.
MATMUL_BLOCK = 256


def blocked_matmul(x, w):
    m, k = x.shape
    n = w.shape[1]
    if m == 0:
        return np.zeros((0, n))
    nb, rem = divmod(m, MATMUL_BLOCK)
    pieces = []
    if nb:
        head = np.ascontiguousarray(x[:nb * MATMUL_BLOCK])
        pieces.append((head.reshape(nb, MATMUL_BLOCK, k) @ w).reshape(nb * MATMUL_BLOCK, n))
    if rem:
        tail = np.zeros((MATMUL_BLOCK, k))
        tail[:rem] = x[nb * MATMUL_BLOCK:]
        pieces.append((tail @ w)[:rem])
    return pieces[0] if len(pieces) == 1 else np.concatenate(pieces, axis=0)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise UsageError("matmul expects 2-D operands")

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(blocked_matmul(a.data, b.data), (a, b), bw)


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes through inside the interval
    (boundaries inclusive) and is exactly zero outside."""
    lo = float(lo)
    hi = float(hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        _accum(a, g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), bw)


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first operand."""
    take_a = a.data <= b.data

    def bw(g):
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _make(np.minimum(a.data, b.data), (a, b), bw)


def maximum(a, b):
    take_a = a.data >= b.data

    def bw(g):
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _make(np.maximum(a.data, b.data), (a, b), bw)


def tsum(a, axis=None):
    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(a.data.sum(axis=axis), (a,), bw)


def tmean(a):
    n = float(a.data.size)

    def bw(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _make(a.data.mean(), (a,), bw)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    widths = [t.data.shape[axis] for t in tensors]
    edges = np.cumsum([0] + widths)

    def bw(g):
        for t, j0, j1 in zip(tensors, edges[:-1], edges[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(j0, j1)
            _accum(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def slice_cols(a, start, stop):
    if a.data.ndim != 2:
        raise UsageError("slice_cols expects a 2-D tensor")

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    return _make(a.data[:, start:stop], (a,), bw)


def gather_rows(table, idx):
    """Row lookup table[idx]; the backward pass scatter-adds into the
    touched rows only, so untouched rows keep an exactly zero gradient."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, idx, g)
        _accum(table, acc)

    return _make(table.data[idx], (table,), bw)


def backward(tape, loss, params):
    """Reverse sweep over the tape from a scalar loss.

    Returns a dict keyed by parameter identity. Parameters the loss does not
    reach get an exact zero gradient. Accumulators are zero-initialized per
    call, so a tape can be swept more than once.
    """
    if loss.data.shape != ():
        raise UsageError("loss must be a scalar")
    params = list(params)
    for node in tape._nodes:
        node.grad = None
    for p in params:
        p.grad = None
    loss.grad = np.ones(())
    for node in reversed(tape._nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)
    return {p: (p.grad if p.grad is not None else np.zeros_like(p.data)) for p in params}


def gaussian_log_prob_np(action, mean, sigma, mask):
    """Diagonal Gaussian log-density summed over unmasked dims, numpy path.

    Mirrors the taped formula op for op so a recomputation at unchanged
    parameters is bit-identical to the stored value.
    """
    xi = (action - mean) / sigma
    s1 = np.sum(xi * xi * mask, axis=-1)
    s2 = np.sum(np.log(sigma) * mask, axis=-1)
    n_valid = np.sum(mask, axis=-1)
    return -0.5 * s1 - s2 - 0.5 * _LOG_2PI * n_valid


def gaussian_log_prob_t(action_const, mean, sigma, mask_const):
    """Taped twin of gaussian_log_prob_np; gradients flow through mean/sigma."""
    xi = div(sub(action_const, mean), sigma)
    s1 = tsum(mul(mul(xi, xi), mask_const), axis=1)
    s2 = tsum(mul(log(sigma), mask_const), axis=1)
    n_valid = constant(np.sum(mask_const.data, axis=-1))
    return sub(sub(mul(s1, constant(-0.5)), s2), mul(n_valid, constant(0.5 * _LOG_2PI)))
