"""Layer modules with a named-parameter registry.

Modules register child modules and parameter tensors automatically on
attribute assignment; `named_parameters()` yields dotted-path names that
are stable across runs and round-trip through checkpoints.
"""

from __future__ import annotations

import math

import numpy as np

from visr.errors import ShapeError
from visr.nn import init as tinit
from visr.nn import tensor as T
from visr.nn.tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for k, t in self._params.items():
            yield prefix + k, t
        for k, m in self._children.items():
            yield from m.named_parameters(prefix + k + ".")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


class ModuleList(Module):
    def __init__(self, mods):
        super().__init__()
        self._items = list(mods)
        for i, m in enumerate(self._items):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True,
                 label: str | None = None):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.label = label or f"Linear({d_in}->{d_out})"
        self.w = _param(tinit.xavier_uniform(rng, d_in, d_out))
        self.b = _param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(
                f"{self.label}: input last axis is {x.shape[-1]}, expected {self.d_in}"
            )
        y = T.matmul(x, self.w)
        return T.add(y, self.b) if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, label: str | None = None):
        super().__init__()
        self.d = d
        self.label = label or f"LayerNorm({d})"
        self.gain = _param(np.ones(d))
        self.bias = _param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d:
            raise ShapeError(
                f"{self.label}: input last axis is {x.shape[-1]}, expected {self.d}"
            )
        return T.layer_norm(x, self.gain, self.bias)


class Embedding(Module):
    def __init__(self, rng, vocab: int, d: int, label: str | None = None):
        super().__init__()
        self.vocab = vocab
        self.d = d
        self.label = label or f"Embedding({vocab},{d})"
        self.table = _param(tinit.normal(rng, (vocab, d), 1.0 / math.sqrt(d)))

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.table, ids)


class MultiHeadAttention(Module):
    """Scaled-dot-product attention, optionally with a depthwise FIR memory
    branch added to the pooled context before the output projection.

    Self-attention when called with one argument; cross-attention when a
    separate key/value sequence is passed. The memory branch filters the
    full value projection along time, so it requires query length == key
    length (it is only enabled for self-attention blocks). After every call
    `last_probs` holds the per-head attention matrix [heads, Tq, Tk].
    """

    def __init__(self, rng, d_model: int, heads: int, fir_kernel: int = 0,
                 label: str | None = None):
        super().__init__()
        if d_model % heads:
            raise ShapeError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.label = label or f"MultiHeadAttention(d={d_model},h={heads})"
        self.wq = Linear(rng, d_model, d_model, label=self.label + ".wq")
        self.wk = Linear(rng, d_model, d_model, label=self.label + ".wk")
        self.wv = Linear(rng, d_model, d_model, label=self.label + ".wv")
        self.wo = Linear(rng, d_model, d_model, label=self.label + ".wo")
        if fir_kernel:
            if fir_kernel % 2 == 0:
                raise ShapeError(f"{self.label}: FIR kernel must be odd, got {fir_kernel}")
            self.fir = _param(
                tinit.xavier_uniform(rng, fir_kernel, fir_kernel, (d_model, fir_kernel))
            )
        else:
            self.fir = None
        self.last_probs: np.ndarray | None = None

    def _split(self, x: Tensor, length: int) -> Tensor:
        return T.transpose(T.reshape(x, (length, self.heads, self.d_head)), (1, 0, 2))

    def __call__(self, x: Tensor, kv: Tensor | None = None) -> Tensor:
        mem_in = x if kv is None else kv
        tq, tk = x.shape[0], mem_in.shape[0]
        if self.fir is not None and tq != tk:
            raise ShapeError(f"{self.label}: FIR memory branch requires self-attention")
        q = self._split(self.wq(x), tq)
        k = self._split(self.wk(mem_in), tk)
        v_full = self.wv(mem_in)
        v = self._split(v_full, tk)
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.d_head))
        probs = T.softmax_last(scores)
        self.last_probs = probs.data.copy()
        ctx = T.reshape(T.transpose(T.matmul(probs, v), (1, 0, 2)), (tq, self.d_model))
        if self.fir is not None:
            ctx = T.add(ctx, T.dfsmn_fir(v_full, self.fir))
        return self.wo(ctx)


class FeedForward(Module):
    def __init__(self, rng, d_model: int, hidden: int, label: str | None = None):
        super().__init__()
        self.label = label or f"FeedForward({d_model}->{hidden})"
        self.lin1 = Linear(rng, d_model, hidden, label=self.label + ".lin1")
        self.lin2 = Linear(rng, hidden, d_model, label=self.label + ".lin2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(T.relu(self.lin1(x)))


class EncoderBlock(Module):
    """Pre-norm transformer block: self-attention with an additive FIR
    memory branch, then feed-forward, each behind a residual."""

    def __init__(self, rng, d_model: int, heads: int, hidden: int,
                 fir_kernel: int = 11, label: str | None = None):
        super().__init__()
        self.label = label or "EncoderBlock"
        self.norm1 = LayerNorm(d_model, label=self.label + ".norm1")
        self.attn = MultiHeadAttention(rng, d_model, heads, fir_kernel=fir_kernel,
                                       label=self.label + ".attn")
        self.norm2 = LayerNorm(d_model, label=self.label + ".norm2")
        self.ffn = FeedForward(rng, d_model, hidden, label=self.label + ".ffn")

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self.attn(self.norm1(x)))
        return T.add(x, self.ffn(self.norm2(x)))


class DecoderBlock(Module):
    """Pre-norm decoder block: bidirectional self-attention, cross-attention
    over a memory sequence, an optional standalone depthwise FIR branch,
    feed-forward."""

    def __init__(self, rng, d_model: int, heads: int, hidden: int,
                 fir_kernel: int = 11, label: str | None = None):
        super().__init__()
        self.label = label or "DecoderBlock"
        self.norm1 = LayerNorm(d_model, label=self.label + ".norm1")
        self.self_attn = MultiHeadAttention(rng, d_model, heads,
                                            label=self.label + ".self_attn")
        self.norm2 = LayerNorm(d_model, label=self.label + ".norm2")
        self.cross_attn = MultiHeadAttention(rng, d_model, heads,
                                             label=self.label + ".cross_attn")
        if fir_kernel:
            self.norm3 = LayerNorm(d_model, label=self.label + ".norm3")
            self.fir = _param(
                tinit.xavier_uniform(rng, fir_kernel, fir_kernel,
                                     (d_model, fir_kernel))
            )
        else:
            self.norm3 = None
            self.fir = None
        self.norm4 = LayerNorm(d_model, label=self.label + ".norm4")
        self.ffn = FeedForward(rng, d_model, hidden, label=self.label + ".ffn")

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        x = T.add(x, self.self_attn(self.norm1(x)))
        x = T.add(x, self.cross_attn(self.norm2(x), memory))
        if self.fir is not None:
            x = T.add(x, T.dfsmn_fir(self.norm3(x), self.fir))
        return T.add(x, self.ffn(self.norm4(x)))


class Lstm(Module):
    """Single-layer unidirectional LSTM returning the full state sequence."""

    def __init__(self, rng, d_in: int, hidden: int, label: str | None = None):
        super().__init__()
        self.d_in = d_in
        self.hidden = hidden
        self.label = label or f"Lstm({d_in}->{hidden})"
        self.w_ih = _param(np.concatenate(
            [tinit.xavier_uniform(rng, d_in, hidden, (hidden, d_in)) for _ in range(4)],
            axis=0))
        self.w_hh = _param(tinit.orthogonal_stack(rng, 4, hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias opens the memory path early
        self.b = _param(b)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(
                f"{self.label}: input last axis is {x.shape[-1]}, expected {self.d_in}"
            )
        return T.lstm_seq(x, self.w_ih, self.w_hh, self.b)
