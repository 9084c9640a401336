"""Word error rate via Levenshtein alignment, plus masked-word recovery rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from visr import backend as bk
from visr.errors import ContractError


@dataclass
class ScoreReport:
    wer: float
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int
    ops: np.ndarray  # alignment trace (codes bk.OP_*), ref/hyp left to right


def _word_ids(words: list[str], table: dict[str, int]) -> np.ndarray:
    return np.array([table.setdefault(w, len(table)) for w in words], dtype=np.int64)


def word_error_rate(ref_words: list[str], hyp_words: list[str]) -> ScoreReport:
    """Levenshtein distance at word granularity divided by |ref|.

    The DP alignment is kept on the report so recovery_rate can reuse it.
    Empty hypothesis scores WER 1.0 as |ref| deletions; empty reference is a
    contract error.
    """
    if not ref_words:
        raise ContractError("word_error_rate: empty reference")
    table: dict[str, int] = {}
    dist, ops = bk.levenshtein_ops(_word_ids(ref_words, table),
                                   _word_ids(hyp_words, table))
    subs = int((ops == bk.OP_SUB).sum())
    dels = int((ops == bk.OP_DEL).sum())
    ins = int((ops == bk.OP_INS).sum())
    assert subs + dels + ins == dist
    return ScoreReport(wer=dist / len(ref_words), substitutions=subs,
                       deletions=dels, insertions=ins, ref_len=len(ref_words),
                       ops=ops)


def recovered_mask(report: ScoreReport) -> np.ndarray:
    """Boolean per reference word: aligned as an exact match in the hypothesis."""
    out = np.zeros(report.ref_len, dtype=bool)
    ri = 0
    for op in report.ops:
        if op == bk.OP_MATCH:
            out[ri] = True
            ri += 1
        elif op in (bk.OP_SUB, bk.OP_DEL):
            ri += 1
        # insertions consume no reference word
    assert ri == report.ref_len
    return out


def recovery_rate(report: ScoreReport, masked_indices) -> tuple[float, bool]:
    """Fraction of masked reference words aligned as exact matches.

    Returns (rate, defined); an empty masked set yields (1.0, False) so the
    caller can surface the diagnostic instead of dividing by zero.
    """
    masked = list(masked_indices)
    if not masked:
        return 1.0, False
    hit = recovered_mask(report)
    return float(sum(hit[i] for i in masked)) / len(masked), True


def corpus_wer(pairs: list[tuple[list[str], list[str]]]) -> float:
    """Pooled WER: total edit distance over total reference words."""
    errors = 0
    total = 0
    for ref, hyp in pairs:
        rep = word_error_rate(ref, hyp)
        errors += rep.substitutions + rep.deletions + rep.insertions
        total += rep.ref_len
    if total == 0:
        raise ContractError("corpus_wer: no reference words")
    return errors / total
