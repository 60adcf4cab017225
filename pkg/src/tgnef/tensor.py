"""Dense float64 arrays with reverse-mode automatic differentiation.

Every differentiable op creates a new :class:`Tensor` holding references to its
inputs and a closure that maps the output gradient to input gradients. Each
tensor gets a creation sequence number, so the recorded graph is a tape in
execution order; :meth:`Tensor.backward` replays the reachable part of it in
exact reverse.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> (x * x).sum().backward()
    >>> x.grad
    array([2., 4., 6.])
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_seq = itertools.count()
_grad_enabled = True


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._seq = next(_seq)
        self.op = "leaf"

    # construction -----------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        # a single reduction catches any nan/inf (or overflow) in the output
        if not np.isfinite(np.add.reduce(data, axis=None)):
            raise NonFiniteError(f"non-finite value produced by {op}")
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        out.op = op
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # autodiff ---------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        # collect the reachable tape, then replay it newest-first
        nodes, stack, seen = [], [self], {id(self)}
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda n: n._seq, reverse=True)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic -------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other) -> "Tensor":
        return add(as_tensor(other), neg(self))

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# primitive ops --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b),
                        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return Tensor._make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., k] @ b[k, n]``; ``a`` may carry leading batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), backward, "matmul")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise DimensionError("concat of an empty list")
    parts = [as_tensor(p) for p in parts]
    ndim = parts[0].ndim
    ax = axis % ndim
    for p in parts:
        if p.ndim != ndim or any(p.shape[d] != parts[0].shape[d] for d in range(ndim) if d != ax):
            raise DimensionError(f"concat shape mismatch: {[q.shape for q in parts]}")
    if len(parts) == 1:
        return parts[0]
    sizes = [p.shape[ax] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=ax))

    return Tensor._make(np.concatenate([p.data for p in parts], axis=ax), parts, backward, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    expanded = [reshape(p, p.shape[:axis % (p.ndim + 1)] + (1,) + p.shape[axis % (p.ndim + 1):]) for p in parts]
    return concat(expanded, axis=axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor) -> Tensor:
    return Tensor._make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


def scatter_add_rows(n: int, idx: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``out[idx[r]] += g[r]`` for an ``[n, ...]`` output, without ``np.add.at``."""
    idx = np.asarray(idx).reshape(-1)
    out = np.zeros((n,) + g.shape[1:])
    if len(idx) == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
    out[sidx[starts]] = np.add.reduceat(g[order], starts, axis=0)
    return out


def take(a: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; backward scatter-adds into the source."""
    shape = a.shape

    def backward(g):
        if _is_basic(index):
            out = np.zeros(shape)
            out[index] = g
        elif isinstance(index, np.ndarray) and index.dtype != bool:
            rows = g.reshape((index.size,) + shape[1:])
            out = scatter_add_rows(shape[0], index, rows)
        else:
            out = np.zeros(shape)
            np.add.at(out, index, g)
        return (out,)

    return Tensor._make(a.data[index], (a,), backward, "take")


def segment_sum(a: Tensor, segment_ids: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``n_segments`` buckets by ``segment_ids``."""
    segment_ids = np.asarray(segment_ids)
    out = scatter_add_rows(n_segments, segment_ids, a.data)
    return Tensor._make(out, (a,), lambda g: (g[segment_ids],), "segment_sum")


def scatter_rows(base: np.ndarray, index: np.ndarray, rows: Tensor) -> Tensor:
    """Copy of constant ``base`` with ``base[index] = rows``; gradient flows to ``rows`` only."""
    out = np.array(base, dtype=np.float64, copy=True)
    out[index] = rows.data
    return Tensor._make(out, (rows,), lambda g: (g[index],), "scatter_rows")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._make(np.log(x), (a,), lambda g: (g / x,), "log")


def cos(a: Tensor) -> Tensor:
    x = a.data
    return Tensor._make(np.cos(x), (a,), lambda g: (-g * np.sin(x),), "cos")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.exp(x - out)
    return Tensor._make(out, (a,), lambda g: (g * sig,), "softplus")


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; masked-out entries get probability 0.

    Rows with every entry masked come out all-zero.
    """
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    z = e.sum(axis=axis, keepdims=True)
    out = e / np.where(z > 0, z, 1.0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    out = x - lse
    p = np.exp(out)
    return Tensor._make(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, keep)


# losses ----------------------------------------------------------------------


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 labels."""
    labels = np.asarray(labels, dtype=np.float64)
    return (softplus(logits) - logits * labels).mean()


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    lp = log_softmax(logits, axis=-1)
    return -(lp[np.arange(len(labels)), labels]).mean()


def attention(query: Tensor, keys: Tensor, values: Tensor) -> Tensor:
    """Scaled dot-product attention of one query over ``n`` key/value rows."""
    if keys.shape[0] == 0:
        raise DimensionError("attention over an empty neighborhood")
    d = query.shape[-1]
    scores = (keys @ reshape(query, (d, 1))).reshape(keys.shape[0]) * (1.0 / np.sqrt(d))
    w = softmax(scores, axis=0)
    return (values * reshape(w, (-1, 1))).sum(axis=0)


def masked_attention(query: Tensor, keys: Tensor, values: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """Batched attention: ``query[B,d]``, ``keys[B,n,d]``, ``values[B,n,v]``.

    Returns the attended values ``[B,v]`` and the weights ``[B,n]``; rows whose
    mask is all False yield zeros.
    """
    d = query.shape[-1]
    scores = (keys * reshape(query, (query.shape[0], 1, d))).sum(axis=-1) * (1.0 / np.sqrt(d))
    w = softmax(scores, axis=-1, mask=mask)
    out = (values * reshape(w, w.shape + (1,))).sum(axis=1)
    return out, w


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]


def lstm_scan(x: Tensor, mask: np.ndarray, W: Tensor, U: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Fused masked LSTM over ``x[B, L, d]``; returns the final hidden state ``[B, h]``.

    Gate layout along the last axis of ``W``/``U``/``b`` is ``(i, f, g, o)``.
    Where ``mask[:, t]`` is False the state is carried through unchanged.
    """
    xd, Wd, Ud, bd = x.data, W.data, U.data, b.data
    B, L, _ = xd.shape
    H = Ud.shape[0]
    steps = range(L - 1, -1, -1) if reverse else range(L)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    saved = []
    xw = xd @ Wd  # input projections for all steps at once
    for t in steps:
        z = xw[:, t, :] + h @ Ud + bd
        i = 0.5 * (1.0 + np.tanh(0.5 * z[:, :H]))
        f = 0.5 * (1.0 + np.tanh(0.5 * z[:, H:2 * H]))
        g = np.tanh(z[:, 2 * H:3 * H])
        o = 0.5 * (1.0 + np.tanh(0.5 * z[:, 3 * H:]))
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t:t + 1]
        saved.append((t, i, f, g, o, c, tc, h, m))
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)

    def backward(gh):
        gx = np.zeros_like(xd)
        gW = np.zeros_like(Wd)
        gU = np.zeros_like(Ud)
        gb = np.zeros_like(bd)
        gc = np.zeros((B, H))
        gh = gh.copy()
        for t, i, f, g, o, c_prev, tc, h_prev, m in reversed(saved):
            mf = m.astype(np.float64)
            gh_new, gc_carry = gh * mf, gc * mf
            go = gh_new * tc
            gc_new = gc_carry + gh_new * o * (1.0 - tc * tc)
            dz = np.concatenate([gc_new * g * i * (1.0 - i),
                                 gc_new * c_prev * f * (1.0 - f),
                                 gc_new * i * (1.0 - g * g),
                                 go * o * (1.0 - o)], axis=1)
            gx[:, t, :] = dz @ Wd.T
            gW += xd[:, t, :].T @ dz
            gU += h_prev.T @ dz
            gb += dz.sum(axis=0)
            gh = gh * (1.0 - mf) + dz @ Ud.T
            gc = gc * (1.0 - mf) + gc_new * f
        return gx, gW, gU, gb

    return Tensor._make(h, (x, W, U, b), backward, "lstm_scan")
