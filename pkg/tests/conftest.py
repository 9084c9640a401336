"""Shared fixtures and the finite-difference gradient oracle.

The gradient suite below is the single source of truth for "every layer type
passes a finite-difference check": the per-layer tests and the acceptance
gate both call into GRAD_SUITE so they can never drift apart.
"""

from __future__ import annotations

import numpy as np
import pytest

import visr.nn.tensor as T
from visr.config import RunConfig
from visr.corpus import generate_corpus, load_corpus
from visr.nn.layers import (EncoderBlock, LayerNorm, Linear, Lstm,
                            MultiHeadAttention)
from visr.nn.tensor import Tensor


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def fd_check(build_loss, params, h: float = 1e-5, rtol: float = 1e-4,
             floor: float = 1e-7, max_coords: int = 6,
             rng: np.random.Generator | None = None) -> float:
    """Worst relative error between reverse-mode and central differences.

    `build_loss()` must rebuild the graph from `params` on every call (a
    graph can only be backpropagated once).  Parameters with more than
    `max_coords` entries are spot-checked on a random coordinate subset.

    The relative error of a coordinate is |fd - an| / denom where denom is
    max(|fd|, |an|, rtol * (1 + gmax), floor) and gmax is the largest
    analytic-gradient magnitude of that parameter.  Central differences on
    a float64 loss of size L carry ~1e-16*L/h of roundoff, so entries that
    are negligible against their own parameter's gradient scale can only be
    compared absolutely; a genuine backward bug perturbs gradients at the
    scale of gmax and still trips the ratio.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = build_loss()
    T.backward(loss, params)
    grads = [np.array(p.grad) for p in params]
    worst = 0.0
    for p, grad in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        scale = rtol * (1.0 + float(np.abs(gflat).max(initial=0.0)))
        if flat.size <= max_coords:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            keep = flat[i]
            flat[i] = keep + h
            with T.no_grad():
                up = build_loss().item()
            flat[i] = keep - h
            with T.no_grad():
                dn = build_loss().item()
            flat[i] = keep
            fd = (up - dn) / (2.0 * h)
            err = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), scale, floor)
            worst = max(worst, err)
    return worst


def sos(x: Tensor) -> Tensor:
    """Sum of squares: a dense scalar loss that reaches every output entry."""
    return T.tsum(T.mul(x, x))


# ---------------------------------------------------------------------------
# tiny model configuration used across the unit tests
# ---------------------------------------------------------------------------

def tiny_config(**overrides) -> RunConfig:
    base = dict(feat_dim=5, d_model=8, d_vision=8, heads=2, ffn_hidden=16,
                encoder_blocks=1, decoder_blocks=1, vision_blocks=1,
                fir_kernel=3, grid=2, patch_len=8, batch_size=4, epochs=1)
    base.update(overrides)
    return RunConfig(**base).validate()


@pytest.fixture
def tiny_cfg() -> RunConfig:
    return tiny_config()


# ---------------------------------------------------------------------------
# gradient suite: one entry per layer type
# ---------------------------------------------------------------------------

def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _params_of(module, *extra):
    return module.parameters() + list(extra)


def _suite_linear(seed: int) -> float:
    rng = np.random.default_rng(seed)
    lin = Linear(rng, 5, 3)
    x = _leaf(rng, 4, 5)
    return fd_check(lambda: sos(lin(x)), _params_of(lin, x), rng=rng)


def _suite_layer_norm(seed: int) -> float:
    rng = np.random.default_rng(seed)
    ln = LayerNorm(6)
    x = _leaf(rng, 3, 6)
    return fd_check(lambda: sos(ln(x)), _params_of(ln, x), rng=rng)


def _suite_self_attention(seed: int) -> float:
    # fir_kernel=3 also exercises the FIR memory branch inside attention
    rng = np.random.default_rng(seed)
    att = MultiHeadAttention(rng, 8, 2, fir_kernel=3)
    x = _leaf(rng, 5, 8)
    return fd_check(lambda: sos(att(x)), _params_of(att, x), rng=rng)


def _suite_cross_attention(seed: int) -> float:
    rng = np.random.default_rng(seed)
    att = MultiHeadAttention(rng, 8, 2, fir_kernel=0)
    q = _leaf(rng, 4, 8)
    kv = _leaf(rng, 7, 8)
    return fd_check(lambda: sos(att(q, kv)), _params_of(att, q, kv), rng=rng)


def _suite_dfsmn(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, 6, 4)
    kern = _leaf(rng, 4, 3)      # [feature dims, taps]
    return fd_check(lambda: sos(T.dfsmn_fir(x, kern)), [x, kern], rng=rng)


def _suite_lstm(seed: int) -> float:
    rng = np.random.default_rng(seed)
    lstm = Lstm(rng, 3, 4)
    x = _leaf(rng, 5, 3)
    return fd_check(lambda: sos(lstm(x)), _params_of(lstm, x), rng=rng)


def _suite_cif_weight_net(seed: int) -> float:
    # weight predictor + length-scaled integrate-and-fire, end to end
    from visr.asr import AsrStream
    rng = np.random.default_rng(seed)
    asr = AsrStream(rng, tiny_config(), vocab=6)
    h = _leaf(rng, 6, 8)

    def loss():
        alpha = asr.fire_weights(h)
        fired, _ = asr.align_train(h, alpha, 3)
        return sos(fired)

    params = _params_of(asr.pred_hidden) + _params_of(asr.pred_out) + [h]
    return fd_check(loss, params, rng=rng)


def _suite_adapters(seed: int) -> float:
    # vision adapter, audio pooling block, and the cosine reweighting path
    from visr.vision import VisionStream
    rng = np.random.default_rng(seed)
    vs = VisionStream(rng, tiny_config(), vocab=6)
    hot = _leaf(rng, 4, 8)
    cls_vec = _leaf(rng, 8)
    h_enc = _leaf(rng, 5, 8)

    def loss():
        pooled = vs.pool_audio(h_enc)
        weighted, adapted_cls, _, _ = vs.adapt_and_weight(cls_vec, hot, pooled)
        return T.add(sos(weighted), T.add(sos(adapted_cls), sos(pooled)))

    params = (_params_of(vs.vision_adapter) + _params_of(vs.speech_adapter)
              + [vs.speech_cls, hot, cls_vec, h_enc])
    return fd_check(loss, params, rng=rng)


def _suite_output_heads(seed: int) -> float:
    from visr.asr import AsrStream
    rng = np.random.default_rng(seed)
    asr = AsrStream(rng, tiny_config(), vocab=6)
    hidden = _leaf(rng, 4, 8)
    ids = rng.integers(0, 6, size=4)

    def loss():
        return T.cross_entropy_rows(asr.out_head(hidden), ids)

    return fd_check(loss, _params_of(asr.out_head, hidden), rng=rng)


def _suite_embedding(seed: int) -> float:
    rng = np.random.default_rng(seed)
    table = _leaf(rng, 6, 4)
    ids = rng.integers(0, 6, size=5)
    return fd_check(lambda: sos(T.embedding(table, ids)), [table], rng=rng)


def _suite_decoder_stack(seed: int) -> float:
    # full decode pass: blocks, final norm, head, cross entropy
    from visr.asr import AsrStream
    rng = np.random.default_rng(seed)
    asr = AsrStream(rng, tiny_config(), vocab=6)
    h = _leaf(rng, 5, 8)
    rep = _leaf(rng, 3, 8)
    ids = rng.integers(0, 6, size=3)

    def loss():
        _, _, logits = asr.decode(h, rep)
        return T.cross_entropy_rows(logits, ids)

    params = ([p for _, p in asr.dec_blocks.named_parameters()]
              + _params_of(asr.dec_norm) + _params_of(asr.out_head) + [h, rep])
    return fd_check(loss, params, max_coords=4, rng=rng)


GRAD_SUITE = {
    "linear": _suite_linear,
    "layer_norm": _suite_layer_norm,
    "self_attention": _suite_self_attention,
    "cross_attention": _suite_cross_attention,
    "dfsmn": _suite_dfsmn,
    "lstm": _suite_lstm,
    "cif_weight_net": _suite_cif_weight_net,
    "adapters": _suite_adapters,
    "output_heads": _suite_output_heads,
    "embedding": _suite_embedding,
    "decoder_stack": _suite_decoder_stack,
}


# ---------------------------------------------------------------------------
# shared corpora / trained models (session scope; generated lazily)
# ---------------------------------------------------------------------------

SMALL_GEN = dict(seed=101, n_words=14, n_pairs=3, n_train=24, n_val=8,
                 homophone_fraction=0.5, feat_dim=5, patch_len=8, grid=2,
                 words_min=2, words_max=4)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_corpus")
    generate_corpus(root, **SMALL_GEN)
    return load_corpus(root)


@pytest.fixture(scope="session")
def tiny_trained(small_corpus, tmp_path_factory):
    """A briefly trained tiny model; enough structure for behavioural tests."""
    from visr.training import train
    out = tmp_path_factory.mktemp("tiny_run")
    cfg = tiny_config(epochs=3, seed=7, lr=3e-3)
    result = train(cfg, small_corpus, out)
    return result.model, cfg, small_corpus, result
