"""Vision-hotword pathway: patch encoder, adapters, similarity reweighting,
LSTM hotword encoder, and the shared hotword decoder with averaged output.

Each image patch is treated as one "hotword". Its influence on decoding is
scaled by the cosine similarity between its adapted embedding and a pooled
audio embedding, so patches unrelated to the utterance are damped while
related ones pass through — the mechanism that corrects homophone errors.
"""

from __future__ import annotations

import numpy as np

from visr.config import RunConfig
from visr.errors import ContractError
from visr.nn import init as tinit
from visr.nn import tensor as T
from visr.nn.layers import (DecoderBlock, EncoderBlock, LayerNorm, Linear,
                            Lstm, Module, ModuleList)
from visr.nn.tensor import Tensor


class VisionStream(Module):
    def __init__(self, rng: np.random.Generator, cfg: RunConfig, vocab: int):
        super().__init__()
        d = cfg.d_model
        dv = cfg.d_vision
        k = cfg.grid * cfg.grid
        self.cfg = cfg
        self.k_hotwords = k
        self.patch_proj = Linear(rng, cfg.patch_len, dv, label="vh.patch_proj")
        self.pos = Tensor(tinit.normal(rng, (k, dv), 1.0 / np.sqrt(dv)),
                          requires_grad=True)
        self.cls = Tensor(tinit.normal(rng, (dv,), 1.0 / np.sqrt(dv)),
                          requires_grad=True)
        self.v_blocks = ModuleList([
            EncoderBlock(rng, dv, cfg.heads, cfg.ffn_hidden, fir_kernel=0,
                         label=f"vh.v{i}")
            for i in range(cfg.vision_blocks)
        ])
        self.v_norm = LayerNorm(dv, label="vh.v_norm")
        self.vision_adapter = Linear(rng, dv, d, label="vh.vision_adapter")
        self.speech_cls = Tensor(tinit.normal(rng, (d,), 1.0 / np.sqrt(d)),
                                 requires_grad=True)
        self.speech_adapter = EncoderBlock(rng, d, cfg.heads, cfg.ffn_hidden,
                                           fir_kernel=0, label="vh.speech_adapter")
        self.vh_encoder = Lstm(rng, dv, d, label="vh.vh_encoder")
        self.vh_decoder = DecoderBlock(rng, d, cfg.heads, cfg.ffn_hidden,
                                       fir_kernel=0, label="vh.vh_decoder")
        if cfg.share_vh_decoder:
            self.vh_decoder_b = None
        else:
            self.vh_decoder_b = DecoderBlock(rng, d, cfg.heads, cfg.ffn_hidden,
                                             fir_kernel=0, label="vh.vh_decoder_b")
        self.vh_norm = LayerNorm(d, label="vh.vh_norm")
        self.out_head = Linear(rng, d, vocab, label="vh.out_head")

    # -- vision encoder -----------------------------------------------------

    def encode_image(self, patches: np.ndarray) -> tuple[Tensor, Tensor]:
        """K x patch_len grid -> (cls [d_vision], hotwords [K, d_vision])."""
        if patches.shape != (self.k_hotwords, self.cfg.patch_len):
            raise ContractError(
                f"image must be [{self.k_hotwords}, {self.cfg.patch_len}], "
                f"got {patches.shape}"
            )
        x = T.add(self.patch_proj(Tensor(patches)), self.pos)
        x = T.cat0([T.reshape(self.cls, (1, self.cfg.d_vision)), x])
        for block in self.v_blocks:
            x = block(x)
        x = self.v_norm(x)
        return T.row(x, 0), T.rows(x, 1, self.k_hotwords + 1)

    # -- adapters + similarity reweighting ----------------------------------

    def pool_audio(self, h_enc: Tensor) -> Tensor:
        """Pooled audio embedding: CLS row of one attention block over
        the CLS-prepended encoder states."""
        x = T.cat0([T.reshape(self.speech_cls, (1, self.cfg.d_model)), h_enc])
        return T.row(self.speech_adapter(x), 0)

    def adapt_and_weight(self, cls_vec: Tensor, hotwords: Tensor,
                         pooled_audio: Tensor):
        """Scale each ORIGINAL hotword by its adapted-space audio similarity.

        Returns (weighted hotwords [K, d_vision], adapted cls [d_model],
        similarities [K], zero-norm count).
        """
        adapted = self.vision_adapter(hotwords)
        adapted_cls = self.vision_adapter(cls_vec)
        sims, dead = T.cosine_rows(adapted, pooled_audio)
        if self.cfg.clamp_similarity:
            sims = T.relu(sims)
        weighted = T.rowscale(hotwords, sims)
        return weighted, adapted_cls, sims, dead

    # -- hotword encoder / decoder -------------------------------------------

    def vh_encode(self, weighted: Tensor) -> Tensor:
        """LSTM over the K weighted hotwords -> K x d_model states."""
        return self.vh_encoder(weighted)

    def vh_decode(self, e_a: Tensor, h_d: Tensor, hot_enc: Tensor):
        """Decode both acoustic inputs against the hotword memory and average.

        Returns (probs [N', vocab], logits, scores) where scores maps each
        application name to its per-head cross-attention matrix [heads, N', K].
        """
        if e_a.shape[0] != h_d.shape[0]:
            raise ContractError(
                f"acoustic and decoder-state row counts differ: "
                f"{e_a.shape[0]} vs {h_d.shape[0]}"
            )
        block_b = self.vh_decoder if self.vh_decoder_b is None else self.vh_decoder_b
        ea_out = self.vh_norm(self.vh_decoder(e_a, hot_enc))
        scores_a = self.vh_decoder.cross_attn.last_probs
        hd_out = self.vh_norm(block_b(h_d, hot_enc))
        scores_b = block_b.cross_attn.last_probs
        logits = self.out_head(T.mul(T.add(ea_out, hd_out), 0.5))
        return T.softmax_last(logits), logits, {"acoustic": scores_a,
                                                "decoder": scores_b}
