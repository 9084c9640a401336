"""Evaluation over a corpus split: per-method WER table, hypothesis JSONL,
the audio-corruption suite, and the hotword-attention CSV export."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from visr.config import RunConfig
from visr.corpus import Corpus, Utterance, decode_ids
from visr.corruption import CorruptionSpec, corrupt_audio
from visr.errors import ContractError, DataError
from visr.merging import HypothesisBundle, merge_m1, merge_m2, merge_m3
from visr.model import DualStreamModel, transcribe
from visr.scoring import corpus_wer, recovered_mask, word_error_rate

METHODS = ("asr", "vh", "m1", "m2", "m3")


def _words(token_ids: np.ndarray) -> list[str]:
    return decode_ids(token_ids).split()


@dataclass
class EvalResult:
    wer: dict[str, float]            # method -> pooled WER
    records: list[dict]              # one JSON-ready record per utterance


def evaluate_split(model: DualStreamModel, corpus: Corpus, cfg: RunConfig,
                   split: str = "val", methods=METHODS,
                   m3_batch: int | None = None) -> EvalResult:
    """Transcribe a split and score every requested merge method.

    M3 gating is batch-relative; utterances are grouped in manifest order
    into batches of `m3_batch` (default: the training batch size).
    """
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ContractError(f"unknown evaluation methods {unknown}; "
                            f"choose from {list(METHODS)}")
    utts = corpus.split(split)
    if not utts:
        raise DataError(f"split {split!r} has no utterances")
    m3_batch = m3_batch or cfg.batch_size

    bundles: list[HypothesisBundle] = []
    for u in utts:
        bundles.append(transcribe(model, corpus.features(u), corpus.image(u),
                                  uid=u.uid))

    hyps: dict[str, list[np.ndarray]] = {}
    if "asr" in methods:
        hyps["asr"] = [b.tokens_a for b in bundles]
    if "vh" in methods:
        hyps["vh"] = [b.tokens_v for b in bundles]
    if "m1" in methods:
        hyps["m1"] = [merge_m1(b, cfg) for b in bundles]
    if "m2" in methods:
        hyps["m2"] = [merge_m2(b, model.text) for b in bundles]
    if "m3" in methods:
        hyps["m3"] = []
        for start in range(0, len(bundles), m3_batch):
            hyps["m3"].extend(merge_m3(bundles[start:start + m3_batch],
                                       model.text))

    wer = {m: corpus_wer([(u.words, _words(h)) for u, h in zip(utts, seq)])
           for m, seq in hyps.items()}

    records = []
    for i, (u, b) in enumerate(zip(utts, bundles)):
        rec = {
            "id": u.uid, "ref": u.text, "empty": b.empty,
            "tokens_asr": b.tokens_a.tolist(),
            "logprobs_asr": _token_logprobs(b.p_a, b.tokens_a),
            "tokens_vh": b.tokens_v.tolist(),
            "logprobs_vh": _token_logprobs(b.p_v, b.tokens_v),
        }
        for m in methods:
            rec[f"hyp_{m}"] = decode_ids(hyps[m][i])
        if "m3" in methods:
            rec["m3_gate"] = b.extras.get("m3_gate")
        records.append(rec)
    return EvalResult(wer=wer, records=records)


def _token_logprobs(grid: np.ndarray, tokens: np.ndarray) -> list[float]:
    if len(tokens) == 0:
        return []
    probs = grid[np.arange(len(tokens)), tokens]
    return [float(x) for x in np.log(np.maximum(probs, 1e-300))]


def write_eval_outputs(result: EvalResult, out_dir: str | Path,
                       methods=METHODS) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "metrics.csv"
    cols = [f"wer_{m}" for m in methods if m in result.wer]
    csv_path.write_text(
        ",".join(cols) + "\n" +
        ",".join(f"{result.wer[m]:.6f}" for m in methods if m in result.wer) + "\n"
    )
    jsonl_path = out / "hypotheses.jsonl"
    with open(jsonl_path, "w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return csv_path, jsonl_path


# ---------------------------------------------------------------------------
# audio-corruption suite
# ---------------------------------------------------------------------------

@dataclass
class CorruptionRow:
    ratio: float
    wer_asr: float
    rr_asr: float
    wer_m2: float
    rr_m2: float


def run_corruption_suite(model: DualStreamModel, corpus: Corpus, cfg: RunConfig,
                         ratios: list[float], seed: int, split: str = "val",
                         noise_sigma: float | None = None) -> list[CorruptionRow]:
    """Corrupt the evaluation split at each mask ratio and score ASR vs M2.

    Noise power defaults to the corpus feature sigma recorded at generation
    time. Recovery rate pools recovered/masked counts over the whole split;
    a ratio that masks nothing (e.g. 0) reports rate 1.0 with a warning.
    """
    sigma = noise_sigma if noise_sigma is not None \
        else float(corpus.header["feature_sigma"])
    utts = corpus.split(split)
    if not utts:
        raise DataError(f"split {split!r} has no utterances")

    rows: list[CorruptionRow] = []
    for ratio in ratios:
        spec = CorruptionSpec(mask_ratio=ratio, noise_sigma=sigma, seed=seed)
        pairs_asr: list[tuple[list[str], list[str]]] = []
        pairs_m2: list[tuple[list[str], list[str]]] = []
        recovered = {"asr": 0, "m2": 0}
        masked_total = 0
        for u in utts:
            corrupted, masked = corrupt_audio(corpus.features(u), u, spec)
            bundle = transcribe(model, corrupted, corpus.image(u), uid=u.uid)
            hyp_asr = _words(bundle.tokens_a)
            hyp_m2 = _words(merge_m2(bundle, model.text))
            ref = u.words
            pairs_asr.append((ref, hyp_asr))
            pairs_m2.append((ref, hyp_m2))
            masked_total += len(masked)
            for key, hyp in (("asr", hyp_asr), ("m2", hyp_m2)):
                hit = recovered_mask(word_error_rate(ref, hyp))
                recovered[key] += int(sum(hit[i] for i in masked))
        if masked_total == 0:
            warnings.warn(f"mask ratio {ratio} masked no words; "
                          "recovery rate defined as 1.0", stacklevel=2)
            rr_asr = rr_m2 = 1.0
        else:
            rr_asr = recovered["asr"] / masked_total
            rr_m2 = recovered["m2"] / masked_total
        rows.append(CorruptionRow(ratio=ratio,
                                  wer_asr=corpus_wer(pairs_asr), rr_asr=rr_asr,
                                  wer_m2=corpus_wer(pairs_m2), rr_m2=rr_m2))
    return rows


def write_corruption_outputs(rows: list[CorruptionRow],
                             out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "corruption.csv"
    lines = ["ratio,wer_asr,rr_asr,wer_m2,rr_m2"]
    for r in rows:
        lines.append(f"{r.ratio:.4f},{r.wer_asr:.4f},{r.rr_asr:.4f},"
                     f"{r.wer_m2:.4f},{r.rr_m2:.4f}")
    csv_path.write_text("\n".join(lines) + "\n")

    txt_path = out / "corruption.txt"
    widths = [8, 9, 9, 9, 9]
    headers = ["ratio", "wer_asr", "rr_asr", "wer_m2", "rr_m2"]
    table = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    for r in rows:
        cells = [f"{r.ratio:.4f}", f"{r.wer_asr:.4f}", f"{r.rr_asr:.4f}",
                 f"{r.wer_m2:.4f}", f"{r.rr_m2:.4f}"]
        table.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
    txt_path.write_text("\n".join(table) + "\n")
    return csv_path, txt_path


# ---------------------------------------------------------------------------
# attention export
# ---------------------------------------------------------------------------

def export_attention(bundle: HypothesisBundle, path: str | Path,
                     top_k: int = 5) -> Path:
    """Write the hotword-vs-token attention map of one utterance as CSV.

    Rows are hotword indices, columns are the hypothesis tokens; values are
    the mean-over-heads cross-attention weights of the acoustic decoder
    application. Extra `top{r}` rows list, per token, the r-th strongest
    hotword (ties broken toward the lower index).
    """
    if bundle.attn_scores is None:
        raise ContractError(
            f"{bundle.uid or 'utterance'}: no attention scores captured "
            "(empty hypothesis or capture disabled)"
        )
    scores = bundle.attn_scores["acoustic"].mean(axis=0)   # [N', K]
    matrix = scores.T                                      # [K, N']
    k, n = matrix.shape
    tokens = [decode_ids([t]) for t in bundle.tokens_a]
    lines = ["hotword," + ",".join(tokens)]
    for i in range(k):
        lines.append(str(i) + "," + ",".join(repr(float(v)) for v in matrix[i]))
    order = np.argsort(-scores, axis=1, kind="stable")     # [N', K]
    for r in range(min(top_k, k)):
        lines.append(f"top{r + 1}," + ",".join(str(int(order[j, r]))
                                               for j in range(n)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_attention_csv(path: str | Path) -> np.ndarray:
    """Re-parse an exported attention CSV back into the [K, N'] matrix."""
    lines = Path(path).read_text().splitlines()
    rows = []
    for line in lines[1:]:
        head, *cells = line.split(",")
        if head.startswith("top"):
            break
        rows.append([float(c) for c in cells])
    return np.array(rows)
