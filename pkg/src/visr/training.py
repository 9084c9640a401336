"""Two-pass joint training of both streams with per-step CSV logging."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from visr.asr import sample_semantic
from visr.config import RunConfig, save_config
from visr.corpus import Corpus, Utterance
from visr.errors import NanLossError
from visr.model import DualStreamModel
from visr.nn import checkpoint as ckpt
from visr.nn import tensor as T
from visr.nn.optim import Adam, clip_global_norm
from visr.nn.tensor import Tensor

LOG_COLUMNS = ["step", "epoch", "total", "ce_asr", "ce_vh", "quantity",
               "contrastive_va", "contrastive_vt", "grad_norm"]


@dataclass
class BatchItem:
    uid: str
    feats: np.ndarray
    image: np.ndarray
    tokens: np.ndarray


@dataclass
class TrainResult:
    model: DualStreamModel
    checkpoint_path: Path
    log_path: Path
    steps: int
    final_loss: float


def load_items(corpus: Corpus, split: str = "train") -> list[BatchItem]:
    return [BatchItem(uid=u.uid, feats=corpus.features(u),
                      image=corpus.image(u), tokens=u.tokens)
            for u in corpus.split(split)]


def batch_losses(model: DualStreamModel, items: list[BatchItem], cfg: RunConfig,
                 sampler_rng: np.random.Generator) -> tuple[Tensor, dict]:
    """Forward both streams over a batch and assemble the joint loss.

    Per utterance: two-pass ASR (no-grad first decode -> sampler -> decode)
    plus the hotword decode; per batch: the two contrastive terms over the
    pooled embeddings (skipped for batches of one, which cannot contrast).
    """
    ce_asr_terms: list[Tensor] = []
    ce_vh_terms: list[Tensor] = []
    quantity_terms: list[Tensor] = []
    img_embeds: list[Tensor] = []
    audio_embeds: list[Tensor] = []
    text_embeds: list[Tensor] = []
    use_vh = not cfg.freeze_vh

    for item in items:
        n = len(item.tokens)
        h = model.asr.encode(item.feats)
        alpha = model.asr.fire_weights(h)
        quantity_terms.append(T.absval(T.sub(T.tsum(alpha), float(n))))
        e_a, _ = model.asr.align_train(h, alpha, n)

        with T.no_grad():
            p1, _, _ = model.asr.decode(h, e_a)
        first_pass = p1.data.argmax(axis=1)
        sem, _, _ = sample_semantic(e_a, item.tokens, first_pass,
                                    cfg.sampler_lambda, model.asr.embed.table,
                                    sampler_rng)
        _, h_d, logits = model.asr.decode(h, sem)
        ce_asr_terms.append(T.cross_entropy_rows(logits, item.tokens))

        if use_vh:
            cls_vec, hot = model.vh.encode_image(item.image)
            pooled = model.vh.pool_audio(h)
            weighted, adapted_cls, _, _ = model.vh.adapt_and_weight(
                cls_vec, hot, pooled)
            hot_enc = model.vh.vh_encode(weighted)
            _, logits_v, _ = model.vh.vh_decode(e_a, h_d, hot_enc)
            ce_vh_terms.append(T.cross_entropy_rows(logits_v, item.tokens))
            img_embeds.append(adapted_cls)
            audio_embeds.append(pooled)
            text_embeds.append(T.tmean(model.text(item.tokens), axis=0))

    b = len(items)

    def mean_of(terms: list[Tensor]) -> Tensor:
        acc = terms[0]
        for t in terms[1:]:
            acc = T.add(acc, t)
        return T.mul(acc, 1.0 / b)

    ce_asr = mean_of(ce_asr_terms)
    quantity = mean_of(quantity_terms)
    loss = T.add(T.mul(ce_asr, cfg.w_asr), T.mul(quantity, cfg.w_quantity))
    parts = {"ce_asr": ce_asr.item(), "quantity": quantity.item(),
             "ce_vh": 0.0, "contrastive_va": 0.0, "contrastive_vt": 0.0}

    if use_vh:
        ce_vh = mean_of(ce_vh_terms)
        loss = T.add(loss, T.mul(ce_vh, cfg.w_vh))
        parts["ce_vh"] = ce_vh.item()
        if b >= 2:
            l_va = T.info_nce(T.stack_rows(img_embeds), T.stack_rows(audio_embeds),
                              cfg.temperature)
            l_vt = T.info_nce(T.stack_rows(img_embeds), T.stack_rows(text_embeds),
                              cfg.temperature)
            loss = T.add(loss, T.mul(T.add(l_va, l_vt), cfg.w_contrastive))
            parts["contrastive_va"] = l_va.item()
            parts["contrastive_vt"] = l_vt.item()

    parts["total"] = loss.item()
    return loss, parts


def train(cfg: RunConfig, corpus: Corpus, out_dir: str | Path,
          quiet: bool = True) -> TrainResult:
    """Run the full training loop; writes checkpoint, config and loss log.

    The checkpoint is (re)written after every epoch, so a NaN abort leaves
    the last completed epoch's parameters on disk.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.vhas"
    log_path = out / "train_log.csv"
    save_config(out / "config.txt", cfg)

    init_ss, order_ss, sampler_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    model = DualStreamModel(np.random.default_rng(init_ss), cfg)
    params = [p for _, p in model.trainable_parameters()]
    opt = Adam(params, lr=cfg.lr)
    order_rng = np.random.default_rng(order_ss)
    sampler_rng = np.random.default_rng(sampler_ss)

    items = load_items(corpus, "train")
    if not items:
        raise NanLossError("no training utterances")  # unreachable for valid corpora

    step = 0
    final_loss = math.nan
    with open(log_path, "w") as log:
        log.write(",".join(LOG_COLUMNS) + "\n")
        try:
            for epoch in range(cfg.epochs):
                order = order_rng.permutation(len(items))
                for start in range(0, len(order), cfg.batch_size):
                    batch = [items[i] for i in order[start:start + cfg.batch_size]]
                    loss, parts = batch_losses(model, batch, cfg, sampler_rng)
                    if not math.isfinite(parts["total"]):
                        raise NanLossError(
                            f"non-finite loss at step {step}: {parts}"
                        )
                    T.backward(loss, params)
                    grad_norm = clip_global_norm(params, cfg.grad_clip)
                    opt.step()
                    step += 1
                    final_loss = parts["total"]
                    log.write(",".join([str(step), str(epoch)] + [
                        f"{parts[c]:.6f}" for c in LOG_COLUMNS[2:-1]
                    ] + [f"{grad_norm:.6f}"]) + "\n")
                    if not quiet and step % 25 == 0:
                        print(f"step {step} epoch {epoch} loss {parts['total']:.4f}")
                    if cfg.max_steps and step >= cfg.max_steps:
                        raise StopIteration
                ckpt.save_module(ckpt_path, model)
        except StopIteration:
            pass
        finally:
            log.flush()
    ckpt.save_module(ckpt_path, model)
    return TrainResult(model=model, checkpoint_path=ckpt_path,
                       log_path=log_path, steps=step, final_loss=final_loss)
