"""Unimodal ASR pathway: speech encoder, integrate-and-fire length predictor,
parameter-free sampler, and a non-autoregressive speech decoder.

Training is two-pass per utterance: the first decode (no gradients) only
counts token errors so the sampler can splash in that many target
embeddings; the second decode on the sampled features produces the loss.
Inference runs the first pass alone.
"""

from __future__ import annotations

import math

import numpy as np

from visr.config import RunConfig
from visr.errors import ContractError
from visr.nn import init as tinit
from visr.nn import tensor as T
from visr.nn.layers import (DecoderBlock, Embedding, EncoderBlock, Linear,
                            LayerNorm, Module, ModuleList)
from visr.nn.tensor import Tensor


class AsrStream(Module):
    def __init__(self, rng: np.random.Generator, cfg: RunConfig, vocab: int):
        super().__init__()
        d = cfg.d_model
        self.cfg = cfg
        self.vocab = vocab
        self.input_proj = Linear(rng, cfg.feat_dim, d, label="asr.input_proj")
        self.enc_blocks = ModuleList([
            EncoderBlock(rng, d, cfg.heads, cfg.ffn_hidden,
                         fir_kernel=cfg.fir_kernel, label=f"asr.enc{i}")
            for i in range(cfg.encoder_blocks)
        ])
        self.enc_norm = LayerNorm(d, label="asr.enc_norm")
        self.pred_hidden = Linear(rng, d, d, label="asr.pred_hidden")
        self.pred_out = Linear(rng, d, 1, label="asr.pred_out")
        self.embed = Embedding(rng, vocab, d, label="asr.embed")
        self.dec_blocks = ModuleList([
            DecoderBlock(rng, d, cfg.heads, cfg.ffn_hidden,
                         fir_kernel=cfg.fir_kernel, label=f"asr.dec{i}")
            for i in range(cfg.decoder_blocks)
        ])
        self.dec_norm = LayerNorm(d, label="asr.dec_norm")
        self.out_head = Linear(rng, d, vocab, label="asr.out_head")

    # -- encoder ------------------------------------------------------------

    def encode(self, feats) -> Tensor:
        """T x feat_dim features (array or leaf tensor) -> T x d_model states."""
        x_in = feats if isinstance(feats, Tensor) else Tensor(feats)
        if x_in.data.ndim != 2 or x_in.data.shape[0] < 1:
            raise ContractError(
                f"speech input must be a nonempty [T, {self.cfg.feat_dim}] matrix, "
                f"got shape {x_in.data.shape}"
            )
        x = self.input_proj(x_in)
        x = T.add(x, Tensor(tinit.sinusoid_positions(x_in.data.shape[0],
                                                     self.cfg.d_model)))
        for block in self.enc_blocks:
            x = block(x)
        return self.enc_norm(x)

    # -- predictor / aligner ------------------------------------------------

    def fire_weights(self, h: Tensor) -> Tensor:
        """Per-frame integrate weights alpha in (0,1), shape [T]."""
        a = T.sigmoid(self.pred_out(T.relu(self.pred_hidden(h))))
        return T.reshape(a, (h.shape[0],))

    def align_train(self, h: Tensor, alpha: Tensor, n_target: int):
        """Scale alpha to sum to the target length, then fire exactly that often."""
        scaled = T.mul(alpha, T.div(float(n_target), T.tsum(alpha)))
        fired, weights = T.cif_fire(h, scaled, beta=self.cfg.cif_threshold,
                                    residue_threshold=self.cfg.cif_residue,
                                    force_count=n_target)
        return fired, weights

    def align_infer(self, h: Tensor, alpha: Tensor):
        """Fire on raw alpha; trailing residue >= cif_residue emits one more."""
        fired, weights = T.cif_fire(h, alpha, beta=self.cfg.cif_threshold,
                                    residue_threshold=self.cfg.cif_residue,
                                    force_count=None)
        return fired, weights

    # -- decoder ------------------------------------------------------------

    def decode(self, h: Tensor, rep: Tensor):
        """Decode N' positions against encoder memory.

        Returns (probs [N', vocab], hidden [N', d_model], logits [N', vocab]).
        """
        if rep.shape[0] < 1:
            raise ContractError("decoder input must have at least one position")
        x = rep
        for block in self.dec_blocks:
            x = block(x, h)
        hidden = self.dec_norm(x)
        logits = self.out_head(hidden)
        return T.softmax_last(logits), hidden, logits


def sample_semantic(e_a: Tensor, target_ids: np.ndarray, first_pass_ids: np.ndarray,
                    lam: float, embed_table: Tensor,
                    rng: np.random.Generator) -> tuple[Tensor, int, int]:
    """Replace ceil(lam * e) erroneous acoustic rows with target embeddings.

    e counts positions where the first-pass token differs from the target;
    the replaced subset is drawn uniformly among those positions. Returns
    (semantic features, e, number replaced). With e = 0 the input tensor is
    returned unchanged (the identity case).
    """
    if len(target_ids) != e_a.shape[0] or len(first_pass_ids) != e_a.shape[0]:
        raise ContractError(
            f"sampler lengths disagree: acoustics {e_a.shape[0]}, "
            f"target {len(target_ids)}, first pass {len(first_pass_ids)}"
        )
    errors = np.flatnonzero(np.asarray(target_ids) != np.asarray(first_pass_ids))
    e = int(errors.size)
    if e == 0:
        return e_a, 0, 0
    k = math.ceil(lam * e)
    chosen = rng.choice(errors, size=k, replace=False)
    keep = np.ones(e_a.shape[0])
    keep[chosen] = 0.0
    replacements = T.embedding(embed_table, target_ids)
    sem = T.add(T.rowscale(e_a, Tensor(keep)),
                T.rowscale(replacements, Tensor(1.0 - keep)))
    return sem, e, k
