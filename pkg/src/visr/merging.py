"""Merge the two streams' hypotheses: M1 (weighted probabilities), M2
(image-token similarity selection), M3 (audio-image gating, then M2).

All merging is inference-only and pure: numpy in, numpy out.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from visr.config import RunConfig
from visr.errors import ContractError
from visr.nn import tensor as T
from visr.nn.layers import Embedding, EncoderBlock, Linear, Module
from visr.nn.tensor import Tensor


@dataclass
class HypothesisBundle:
    uid: str
    tokens_a: np.ndarray          # [N'] argmax of p_a
    tokens_v: np.ndarray          # [N'] argmax of p_v
    p_a: np.ndarray               # [N', vocab]
    p_v: np.ndarray               # [N', vocab]
    adapted_cls: np.ndarray       # [d_model] image embedding H^V'_CLS
    pooled_audio: np.ndarray      # [d_model] audio embedding H^E'
    empty: bool = False           # no CIF firings at inference
    attn_scores: dict | None = None   # hotword decoder cross-attention
    extras: dict = field(default_factory=dict)


class TextStream(Module):
    """Contextual per-token text embeddings for merge_m2: embedding table,
    one self-attention block, then a linear adapter into d_model space."""

    def __init__(self, rng: np.random.Generator, cfg: RunConfig, vocab: int):
        super().__init__()
        d = cfg.d_model
        self.embed = Embedding(rng, vocab, d, label="text.embed")
        self.block = EncoderBlock(rng, d, cfg.heads, cfg.ffn_hidden, fir_kernel=0,
                                  label="text.block")
        self.adapter = Linear(rng, d, d, label="text.adapter")

    def __call__(self, token_ids: np.ndarray) -> Tensor:
        if len(token_ids) < 1:
            raise ContractError("text encoder needs at least one token")
        return self.adapter(self.block(self.embed(np.asarray(token_ids))))


def cosine_vec(a: np.ndarray, b: np.ndarray, eps: float = 1e-12) -> float:
    """Cosine of two vectors; zero-norm input gives 0."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na < eps or nb < eps:
        return 0.0
    return float(a @ b) / (na * nb)


def cosine_rows_np(mat: np.ndarray, vec: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Cosine of each row of `mat` against `vec`; zero-norm rows give 0."""
    norms = np.linalg.norm(mat, axis=1)
    nv = float(np.linalg.norm(vec))
    dead = (norms < eps) | (nv < eps)
    safe = np.where(dead, 1.0, norms * max(nv, eps))
    return np.where(dead, 0.0, mat @ vec / safe)


def merge_m1(bundle: HypothesisBundle, cfg: RunConfig) -> np.ndarray:
    """Convex combination of the two (already normalized) probability grids:
    p = alpha * p_A + (1 - alpha) * p_V, then row-wise argmax."""
    if bundle.p_a.shape != bundle.p_v.shape:
        raise ContractError(
            f"{bundle.uid}: probability grids differ in shape: "
            f"{bundle.p_a.shape} vs {bundle.p_v.shape}"
        )
    merged = cfg.merge_alpha * bundle.p_a + (1.0 - cfg.merge_alpha) * bundle.p_v
    return merged.argmax(axis=1)


def merge_m2(bundle: HypothesisBundle, text: TextStream) -> np.ndarray:
    """Token-by-token selection by image similarity.

    Each candidate sequence is embedded contextually; position i keeps the
    ASR token when cosine(image CLS, embed(tokens_A)[i]) is at least the
    VH stream's value (ties go to ASR), else takes the VH token.
    """
    if bundle.empty or len(bundle.tokens_a) == 0:
        return bundle.tokens_a.copy()
    if len(bundle.tokens_a) != len(bundle.tokens_v):
        raise ContractError(
            f"{bundle.uid}: candidate lengths differ: "
            f"{len(bundle.tokens_a)} vs {len(bundle.tokens_v)}"
        )
    with T.no_grad():
        emb_a = text(bundle.tokens_a).data
        emb_v = text(bundle.tokens_v).data
    s_a = cosine_rows_np(emb_a, bundle.adapted_cls)
    s_v = cosine_rows_np(emb_v, bundle.adapted_cls)
    return np.where(s_a >= s_v, bundle.tokens_a, bundle.tokens_v)


def m3_gate(bundles: list[HypothesisBundle]) -> np.ndarray:
    """Batch-relative audio-image match: utterance i is matched iff the
    argmax over images of cosine(audio_i, image_j) lands on j = i."""
    audio = np.stack([b.pooled_audio for b in bundles])
    imgs = np.stack([b.adapted_cls for b in bundles])
    sims = np.zeros((len(bundles), len(bundles)))
    for i in range(len(bundles)):
        sims[i] = cosine_rows_np(imgs, audio[i])
    return sims.argmax(axis=1) == np.arange(len(bundles))


def merge_m3(bundles: list[HypothesisBundle], text: TextStream) -> list[np.ndarray]:
    """Gate each utterance on batch-relative audio-image matching.

    Matched utterances take their M2 merge; unmatched ones fall back to the
    ASR tokens verbatim. A batch of one cannot be matched relatively, so it
    degrades to M2 with a warning.
    """
    if not bundles:
        return []
    if len(bundles) == 1:
        warnings.warn("merge_m3 on a batch of 1 degrades to merge_m2",
                      stacklevel=2)
        out = [merge_m2(bundles[0], text)]
        bundles[0].extras["m3_gate"] = True
        return out
    matched = m3_gate(bundles)
    outputs = []
    for b, ok in zip(bundles, matched):
        b.extras["m3_gate"] = bool(ok)
        outputs.append(merge_m2(b, text) if ok else b.tokens_a.copy())
    return outputs
