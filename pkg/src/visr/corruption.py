"""Audio corruption: replace word-aligned frame spans with white Gaussian noise.

Used only on evaluation data; the selection of masked words and the noise
itself are deterministic per (seed, utterance id).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from visr.corpus import Utterance
from visr.errors import ContractError


@dataclass
class CorruptionSpec:
    mask_ratio: float
    noise_sigma: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ContractError(f"mask_ratio must be in [0,1], got {self.mask_ratio}")
        if self.noise_sigma <= 0.0:
            raise ContractError(f"noise_sigma must be positive, got {self.noise_sigma}")


def _utt_rng(spec: CorruptionSpec, uid: str) -> np.random.Generator:
    digest = np.frombuffer(uid.encode(), dtype=np.uint8)
    return np.random.default_rng(
        np.random.SeedSequence([spec.seed, *digest.tolist()])
    )


def corrupt_audio(features: np.ndarray, utt: Utterance,
                  spec: CorruptionSpec) -> tuple[np.ndarray, list[int]]:
    """Mask floor(mask_ratio * W) uniformly chosen words with AWGN.

    Every frame inside a selected word's span becomes i.i.d. N(0, sigma^2);
    all other frames are returned bit-identical. Returns the corrupted copy
    and the sorted masked word indices.
    """
    if not utt.spans:
        raise ContractError(f"{utt.uid}: no alignment spans; cannot corrupt")
    words = utt.words
    n_mask = int(spec.mask_ratio * len(words))
    rng = _utt_rng(spec, utt.uid)
    chosen = sorted(rng.choice(len(words), size=n_mask, replace=False).tolist()) \
        if n_mask else []
    out = features.copy()
    word_spans = utt.word_frame_spans()
    for w in chosen:
        s, e = word_spans[w]
        out[s:e] = rng.standard_normal((e - s, features.shape[1])) * spec.noise_sigma
    return out, chosen
