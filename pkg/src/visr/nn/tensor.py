"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional backward closure; forward
ops record a tape implicitly through parent links and `backward()` walks
it in reverse topological order. Everything is float64 and single-threaded
per graph. Broadcasting is limited to what the layers need: equal shapes,
a trailing-axis bias vector, and scalars.
"""

from __future__ import annotations

import math

import numpy as np

from visr import backend as _bk
from visr.errors import ContractError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording (first-pass decoding)."""

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


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants may be python scalars
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Populate grads of every tensor this scalar loss depends on.

        Frees the tape as it goes; a graph can be backpropagated once.
        """
        if self.data.shape != ():
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._bwd is not None:
                node._bwd(node.grad)
                node._bwd = None
                node._parents = ()
                if not node.requires_grad:
                    node.grad = None


def backward(loss: Tensor, parameters=()) -> None:
    """Run reverse-mode on `loss`, then zero-fill grads of unreached params."""
    loss.backward()
    for p in parameters:
        t = p.tensor if hasattr(p, "tensor") else p
        if t.requires_grad and t.grad is None:
            t.grad = np.zeros_like(t.data)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _node(data, parents, bwd) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._bwd = bwd
    return out


def _accum(t: Tensor, g: np.ndarray, fresh: bool = False) -> None:
    """Add g into t.grad. fresh=True means g is owned by the caller."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if fresh else np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def bwd(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    return _node(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def bwd(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(-g, b.data.shape), fresh=True)

    return _node(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def bwd(g):
        _accum(a, _reduce_to(g * b.data, a.data.shape), fresh=True)
        _accum(b, _reduce_to(g * a.data, b.data.shape), fresh=True)

    return _node(data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data / b.data

    def bwd(g):
        _accum(a, _reduce_to(g / b.data, a.data.shape), fresh=True)
        _accum(b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape), fresh=True)

    return _node(data, (a, b), bwd)


def _unary(a, fn, dfn) -> Tensor:
    a = _wrap(a)
    data = fn(a.data)

    def bwd(g):
        _accum(a, g * dfn(a.data, data), fresh=True)

    return _node(data, (a,), bwd)


def relu(a) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def sigmoid(a) -> Tensor:
    return _unary(a, lambda x: 1.0 / (1.0 + np.exp(-x)), lambda x, y: y * (1.0 - y))


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda x, y: y)


def log(a) -> Tensor:
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def absval(a) -> Tensor:
    return _unary(a, np.abs, lambda x, y: np.sign(x))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(a, axis=None) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return _node(data, (a,), bwd)


def tmean(a, axis=None) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(data, (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _node(data, (a,), bwd)


def rows(a, start, stop) -> Tensor:
    """Slice along axis 0, keeping the axis."""
    a = _wrap(a)
    data = a.data[start:stop].copy()

    def bwd(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[start:stop] += g

    return _node(data, (a,), bwd)


def row(a, i) -> Tensor:
    """Extract row i of a 2-D tensor as a 1-D tensor."""
    a = _wrap(a)
    data = a.data[i].copy()

    def bwd(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[i] += g

    return _node(data, (a,), bwd)


def cat0(parts) -> Tensor:
    parts = [_wrap(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def bwd(g):
        off = 0
        for p, s in zip(parts, sizes):
            _accum(p, g[off:off + s])
            off += s

    return _node(data, tuple(parts), bwd)


def stack_rows(vecs) -> Tensor:
    """Stack 1-D tensors into a [B, d] tensor."""
    vecs = [_wrap(v) for v in vecs]
    data = np.stack([v.data for v in vecs], axis=0)

    def bwd(g):
        for i, v in enumerate(vecs):
            _accum(v, g[i])

    return _node(data, tuple(vecs), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    inner_b = b.data.shape[0] if b.data.ndim == 1 else b.data.shape[-2]
    if a.data.shape[-1] != inner_b:
        raise ShapeError(
            f"matmul inner axes differ: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def bwd(g):
        if a.data.ndim == 1 and b.data.ndim >= 2:
            ga = g @ b.data.swapaxes(-1, -2)
            gb = np.outer(a.data, g)
        elif b.data.ndim == 1 and a.data.ndim >= 2:
            ga = np.outer(g, b.data)
            gb = a.data.swapaxes(-1, -2) @ g
        elif a.data.ndim == 1 and b.data.ndim == 1:
            ga = g * b.data
            gb = g * a.data
        else:
            ga = g @ b.data.swapaxes(-1, -2)
            gb = a.data.swapaxes(-1, -2) @ g
        _accum(a, _reduce_to(ga, a.data.shape), fresh=True)
        _accum(b, _reduce_to(gb, b.data.shape), fresh=True)

    return _node(data, (a, b), bwd)


def embedding(table, ids) -> Tensor:
    """Gather rows of `table` by an int index array."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractError(
            f"token id out of range [0, {table.data.shape[0]}): {ids.min()}..{ids.max()}"
        )
    data = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _node(data, (table,), bwd)


# ---------------------------------------------------------------------------
# fused layer math
# ---------------------------------------------------------------------------

def softmax_last(a) -> Tensor:
    """Softmax over the last axis; rows sum to 1, entries strictly positive."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, data * (g - dot), fresh=True)

    return _node(data, (a,), bwd)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shape {gain.data.shape} does not match last axis {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=lead), fresh=True)
        _accum(bias, g.sum(axis=lead), fresh=True)
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accum(x, dx, fresh=True)

    return _node(data, (x, gain, bias), bwd)


def cross_entropy_rows(logits, ids) -> Tensor:
    """Mean negative log-likelihood of `ids` under row-softmax of logits."""
    logits = _wrap(logits)
    ids = np.asarray(ids, dtype=np.int64)
    n, v = logits.data.shape
    if ids.shape != (n,):
        raise ShapeError(f"cross_entropy targets shape {ids.shape} != ({n},)")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    data = np.float64(-logp[np.arange(n), ids].mean())

    def bwd(g):
        soft = np.exp(logp)
        soft[np.arange(n), ids] -= 1.0
        _accum(logits, soft * (float(g) / n), fresh=True)

    return _node(data, (logits,), bwd)


def normalize_rows(a, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit L2 norm (eps floor keeps it total)."""
    a = _wrap(a)
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    safe = np.maximum(norm, eps)
    data = a.data / safe

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, (g - data * dot) / safe, fresh=True)

    return _node(data, (a,), bwd)


def cosine_rows(a, b, eps: float = 1e-12) -> Tensor:
    """Cosine similarity of each row of `a` [K, d] against vector `b` [d].

    Zero-norm rows (or a zero-norm b) yield similarity 0; the returned
    tensor carries the count in `zero_norm_count` as a diagnostic.
    """
    a, b = _wrap(a), _wrap(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(
            f"cosine_rows last axis {a.data.shape[-1]} != vector length {b.data.shape[0]}"
        )
    na = np.sqrt((a.data * a.data).sum(axis=-1))
    nb = math.sqrt(float(b.data @ b.data))
    denom = na * nb
    dead = denom < eps
    safe = np.where(dead, 1.0, denom)
    dots = a.data @ b.data
    data = np.where(dead, 0.0, dots / safe)

    def bwd(g):
        live = np.where(dead, 0.0, g)
        ga = (live / safe)[..., None] * b.data - (
            live * data / np.where(dead, 1.0, na * na)
        )[..., None] * a.data
        gb = (a.data * (live / safe)[..., None]).sum(axis=0)
        if nb > 0.0:
            gb -= (live * data).sum() / (nb * nb) * b.data
        _accum(a, ga, fresh=True)
        _accum(b, gb, fresh=True)

    out = _node(data, (a, b), bwd)
    return out, int(dead.sum())


def rowscale(x, s) -> Tensor:
    """Scale row k of x [K, d] by scalar s[k]; exact elementwise product."""
    x, s = _wrap(x), _wrap(s)
    if x.data.shape[0] != s.data.shape[0]:
        raise ShapeError(
            f"rowscale rows {x.data.shape[0]} != scale length {s.data.shape[0]}"
        )
    data = x.data * s.data[:, None]

    def bwd(g):
        _accum(x, g * s.data[:, None], fresh=True)
        _accum(s, (g * x.data).sum(axis=1), fresh=True)

    return _node(data, (x, s), bwd)


# ---------------------------------------------------------------------------
# backend-kernel ops (compiled extension or numpy fallback)
# ---------------------------------------------------------------------------

def cif_fire(h, alpha, beta: float = 1.0, residue_threshold: float = 0.5,
             force_count: int | None = None):
    """Integrate-and-fire over frames; returns (fired [N, d], weights [N, T]).

    With force_count set (training), exactly that many vectors fire; the
    caller pre-scales alpha so its sum matches. Without it, a trailing
    accumulation of at least `residue_threshold` fires one final vector.
    """
    h, alpha = _wrap(h), _wrap(alpha)
    fired, weights, per_frame = _bk.cif_forward(
        np.ascontiguousarray(h.data), np.ascontiguousarray(alpha.data),
        float(beta), float(residue_threshold),
        -1 if force_count is None else int(force_count),
    )

    def bwd(g):
        dh, dalpha = _bk.cif_backward(np.ascontiguousarray(g), h.data, weights, per_frame)
        _accum(h, dh, fresh=True)
        _accum(alpha, dalpha, fresh=True)

    return _node(fired, (h, alpha), bwd), weights


def lstm_seq(x, w_ih, w_hh, b) -> Tensor:
    """Single-layer unidirectional LSTM over x [K, Din]; returns states [K, H]."""
    x, w_ih, w_hh, b = _wrap(x), _wrap(w_ih), _wrap(w_hh), _wrap(b)
    H = w_hh.data.shape[1]
    if w_ih.data.shape[0] != 4 * H or b.data.shape[0] != 4 * H:
        raise ShapeError(f"lstm gate stack must be 4*H={4 * H} rows")
    if x.data.shape[1] != w_ih.data.shape[1]:
        raise ShapeError(
            f"lstm input width {x.data.shape[1]} != weight width {w_ih.data.shape[1]}"
        )
    xw = x.data @ w_ih.data.T + b.data
    hs, cs, acts = _bk.lstm_forward(np.ascontiguousarray(xw),
                                    np.ascontiguousarray(w_hh.data))

    def bwd(g):
        dz = _bk.lstm_backward(np.ascontiguousarray(g), w_hh.data, hs, cs, acts)
        _accum(x, dz @ w_ih.data, fresh=True)
        _accum(w_ih, dz.T @ x.data, fresh=True)
        _accum(w_hh, dz[1:].T @ hs[:-1] if len(hs) > 1 else np.zeros_like(w_hh.data),
               fresh=True)
        _accum(b, dz.sum(axis=0), fresh=True)

    return _node(hs, (x, w_ih, w_hh, b), bwd)


def dfsmn_fir(x, kern) -> Tensor:
    """Depthwise centered FIR filter over the time axis of x [T, D]."""
    x, kern = _wrap(x), _wrap(kern)
    if x.data.shape[1] != kern.data.shape[0]:
        raise ShapeError(
            f"dfsmn feature axis {x.data.shape[1]} != kernel rows {kern.data.shape[0]}"
        )
    data = _bk.dfsmn_forward(np.ascontiguousarray(x.data),
                             np.ascontiguousarray(kern.data))

    def bwd(g):
        dx, dk = _bk.dfsmn_backward(np.ascontiguousarray(g), x.data, kern.data)
        _accum(x, dx, fresh=True)
        _accum(kern, dk, fresh=True)

    return _node(data, (x, kern), bwd)


# ---------------------------------------------------------------------------
# contrastive objective
# ---------------------------------------------------------------------------

def info_nce(left, right, temperature: float = 0.07) -> Tensor:
    """Symmetric InfoNCE over row-paired embeddings.

    Cross-entropy toward the diagonal of the B x B cosine matrix scaled by
    1/temperature, averaged over both retrieval directions.
    """
    left, right = _wrap(left), _wrap(right)
    if left.data.ndim != 2 or left.data.shape != right.data.shape:
        raise ShapeError(
            f"info_nce expects matching [B, d] inputs, got {left.data.shape} vs {right.data.shape}"
        )
    b = left.data.shape[0]
    if b < 2:
        raise ContractError(f"info_nce needs a batch of at least 2 pairs, got {b}")
    ln = normalize_rows(left)
    rn = normalize_rows(right)
    logits = mul(matmul(ln, transpose(rn, (1, 0))), 1.0 / temperature)
    targets = np.arange(b)
    loss_lr = cross_entropy_rows(logits, targets)
    loss_rl = cross_entropy_rows(transpose(logits, (1, 0)), targets)
    return mul(add(loss_lr, loss_rl), 0.5)
