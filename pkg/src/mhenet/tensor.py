"""Dense rank-4 tensor engine with reverse-mode differentiation.

Every value is a (N, C, H, W) array; scalars are (1, 1, 1, 1).  Operations
that see a grad-requiring input append a tape entry holding the inputs and a
backward rule.  ``backward`` replays the entries in exact reverse execution
order (tracked by a global sequence counter) and accumulates adjoints
additively, so a tensor consumed k times receives the sum of k adjoints.
"""

import contextlib
import itertools

import numpy as np

DEFAULT_DTYPE = np.float64

_seq = itertools.count(1)
_grad_enabled = True
_stats_updates_enabled = True


class ShapeMismatch(ValueError):
    """Raised when operand shapes cannot be combined; names both shapes."""


class TapeEntry:
    """One executed operation: inputs and the rule mapping the output adjoint
    to input adjoints (returned aligned with ``parents``, None for
    non-differentiable slots)."""

    __slots__ = ("seq", "parents", "backward_rule", "op_name")

    def __init__(self, parents, backward_rule, op_name):
        self.seq = next(_seq)
        self.parents = parents
        self.backward_rule = backward_rule
        self.op_name = op_name


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim != 4:
            raise ShapeMismatch(
                f"tensors are rank-4 (N,C,H,W); got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def scalar(value, dtype=DEFAULT_DTYPE):
        return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype))

    @staticmethod
    def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad)

    @staticmethod
    def ones(shape, dtype=DEFAULT_DTYPE, requires_grad=False):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- arithmetic sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def frozen_stats():
    """Suppress running-statistic updates (for finite-difference passes)."""
    global _stats_updates_enabled
    prev = _stats_updates_enabled
    _stats_updates_enabled = False
    try:
        yield
    finally:
        _stats_updates_enabled = prev


def grad_enabled():
    return _grad_enabled


def stats_updates_enabled():
    return _stats_updates_enabled


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    if np.isscalar(value):
        return Tensor.scalar(value, dtype=dtype)
    return Tensor(np.asarray(value, dtype=dtype))


def record(out, parents, backward_rule, op_name):
    """Attach a tape entry to ``out`` if recording is on and any parent
    requires grad."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeEntry(parents, backward_rule, op_name)
    return out


def backward(loss):
    """Populate ``grad`` for every grad-requiring ancestor of ``loss``.

    ``loss`` must be a scalar tensor.  Entries replay strictly in reverse
    execution order; fan-out adjoints accumulate by addition.
    """
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; nothing to differentiate")

    entries = []
    seen_nodes = set()
    tensors = {id(loss): loss}
    owner = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        node = t.node
        if node is None or id(node) in seen_nodes:
            continue
        seen_nodes.add(id(node))
        entries.append(node)
        owner[id(node)] = t
        for p in node.parents:
            tensors.setdefault(id(p), p)
            stack.append(p)
    entries.sort(key=lambda e: e.seq, reverse=True)

    adjoint = {id(loss): np.ones_like(loss.data)}
    for entry in entries:
        out_t = owner[id(entry)]
        gy = adjoint.pop(id(out_t), None)
        if gy is None:
            continue
        _deposit(out_t, gy)
        grads = entry.backward_rule(gy)
        for parent, g in zip(entry.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            acc = adjoint.get(id(parent))
            adjoint[id(parent)] = g if acc is None else acc + g
    # whatever adjoints remain belong to leaves
    for t_id, g in adjoint.items():
        _deposit(tensors[t_id], g)


def _deposit(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    axes = tuple(i for i in range(4) if shape[i] == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True)


def _broadcast_check(a, b, op_name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(
            f"{op_name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise operations ----------------------------------------------------

def add(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_check(a, b, "add")
    out = Tensor(a.data + b.data)

    def rule(gy):
        return _unbroadcast(gy, a.shape), _unbroadcast(gy, b.shape)

    return record(out, (a, b), rule, "add")


def sub(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_check(a, b, "sub")
    out = Tensor(a.data - b.data)

    def rule(gy):
        return _unbroadcast(gy, a.shape), _unbroadcast(-gy, b.shape)

    return record(out, (a, b), rule, "sub")


def mul(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_check(a, b, "mul")
    out = Tensor(a.data * b.data)

    def rule(gy):
        return (_unbroadcast(gy * b.data, a.shape),
                _unbroadcast(gy * a.data, b.shape))

    return record(out, (a, b), rule, "mul")


def div(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_check(a, b, "div")
    out = Tensor(a.data / b.data)

    def rule(gy):
        return (_unbroadcast(gy / b.data, a.shape),
                _unbroadcast(-gy * a.data / (b.data * b.data), b.shape))

    return record(out, (a, b), rule, "div")


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0))

    def rule(gy):
        return (gy * (x.data > 0.0),)

    return record(out, (x,), rule, "relu")


def sigmoid(x):
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def rule(gy):
        return (gy * y * (1.0 - y),)

    return record(out, (x,), rule, "sigmoid")


def log(x):
    out = Tensor(np.log(x.data))

    def rule(gy):
        return (gy / x.data,)

    return record(out, (x,), rule, "log")


def sqrt_eps(x, eps=1e-6):
    """sqrt(x + eps); the epsilon keeps the derivative finite at zero."""
    y = np.sqrt(x.data + eps)
    out = Tensor(y)

    def rule(gy):
        return (gy * (0.5 / y),)

    return record(out, (x,), rule, "sqrt_eps")


def clamp(x, lo, hi):
    out = Tensor(np.clip(x.data, lo, hi))

    def rule(gy):
        inside = (x.data > lo) & (x.data < hi)
        return (gy * inside,)

    return record(out, (x,), rule, "clamp")


def sum_all(x):
    out = Tensor(np.full((1, 1, 1, 1), x.data.sum(), dtype=x.dtype))

    def rule(gy):
        return (np.full(x.shape, float(gy.reshape(())), dtype=x.dtype),)

    return record(out, (x,), rule, "sum_all")


def mean_all(x):
    n = x.data.size
    out = Tensor(np.full((1, 1, 1, 1), x.data.mean(), dtype=x.dtype))

    def rule(gy):
        return (np.full(x.shape, float(gy.reshape(())) / n, dtype=x.dtype),)

    return record(out, (x,), rule, "mean_all")


def concat_channels(tensors):
    sizes = [t.shape[1] for t in tensors]
    base = tensors[0]
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (base.shape[0], base.shape[2], base.shape[3]):
            raise ShapeMismatch(
                f"concat_channels: shapes {base.shape} and {t.shape} differ off-channel")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))

    def rule(gy):
        grads = []
        start = 0
        for s in sizes:
            grads.append(gy[:, start:start + s])
            start += s
        return tuple(grads)

    return record(out, tuple(tensors), rule, "concat_channels")


def split_channels(x, sizes):
    if sum(sizes) != x.shape[1]:
        raise ShapeMismatch(
            f"split_channels: sizes {sizes} do not sum to channels of {x.shape}")
    outs = []
    start = 0
    for s in sizes:
        lo = start
        piece = Tensor(x.data[:, lo:lo + s].copy())

        def rule(gy, lo=lo, s=s):
            g = np.zeros_like(x.data)
            g[:, lo:lo + s] = gy
            return (g,)

        outs.append(record(piece, (x,), rule, "split_channels"))
        start += s
    return tuple(outs)
