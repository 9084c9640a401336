"""Dual-stream model assembly and the one-pass inference path."""

from __future__ import annotations

import numpy as np

from visr.asr import AsrStream
from visr.config import RunConfig
from visr.corpus import VOCAB_SIZE
from visr.merging import HypothesisBundle, TextStream
from visr.nn import tensor as T
from visr.nn.layers import Module
from visr.vision import VisionStream


class DualStreamModel(Module):
    """ASR stream + vision-hotword stream + text encoder for merging.

    Construction order is fixed so a given (seed, config) pair always
    produces the same parameters.
    """

    def __init__(self, rng: np.random.Generator, cfg: RunConfig,
                 vocab: int = VOCAB_SIZE):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.asr = AsrStream(rng, cfg, vocab)
        self.vh = VisionStream(rng, cfg, vocab)
        self.text = TextStream(rng, cfg, vocab)

    def trainable_parameters(self):
        """(name, tensor) pairs honoring the freeze flags."""
        frozen_prefixes: list[str] = []
        if self.cfg.freeze_vh:
            frozen_prefixes += ["vh.", "text."]
        elif self.cfg.freeze_vision:
            frozen_prefixes += ["vh.patch_proj.", "vh.pos", "vh.cls",
                                "vh.v_blocks.", "vh.v_norm."]
        return [(name, p) for name, p in self.named_parameters()
                if not any(name.startswith(pre) for pre in frozen_prefixes)]


def transcribe(model: DualStreamModel, feats: np.ndarray,
               image: np.ndarray, uid: str = "") -> HypothesisBundle:
    """One-pass inference over a single utterance.

    Reads only the features and image; never the reference tokens. If the
    integrate-and-fire predictor emits no vectors, the bundle is flagged
    empty with zero-length hypotheses.
    """
    vocab = model.vocab
    with T.no_grad():
        h = model.asr.encode(feats)
        alpha = model.asr.fire_weights(h)
        e_a, _ = model.asr.align_infer(h, alpha)

        cls_vec, hot = model.vh.encode_image(image)
        pooled = model.vh.pool_audio(h)
        weighted, adapted_cls, sims, dead = model.vh.adapt_and_weight(
            cls_vec, hot, pooled)

        n_fired = e_a.shape[0]
        if n_fired == 0:
            return HypothesisBundle(
                uid=uid,
                tokens_a=np.zeros(0, dtype=np.int64),
                tokens_v=np.zeros(0, dtype=np.int64),
                p_a=np.zeros((0, vocab)), p_v=np.zeros((0, vocab)),
                adapted_cls=adapted_cls.data.copy(),
                pooled_audio=pooled.data.copy(),
                empty=True,
                extras={"alpha_sum": float(alpha.data.sum()),
                        "zero_norm_sims": dead},
            )

        p_a, h_d, _ = model.asr.decode(h, e_a)
        hot_enc = model.vh.vh_encode(weighted)
        p_v, _, scores = model.vh.vh_decode(e_a, h_d, hot_enc)

    return HypothesisBundle(
        uid=uid,
        tokens_a=p_a.data.argmax(axis=1),
        tokens_v=p_v.data.argmax(axis=1),
        p_a=p_a.data.copy(), p_v=p_v.data.copy(),
        adapted_cls=adapted_cls.data.copy(),
        pooled_audio=pooled.data.copy(),
        empty=False,
        attn_scores=scores,
        extras={"alpha_sum": float(alpha.data.sum()),
                "similarities": sims.data.copy(),
                "zero_norm_sims": dead},
    )
