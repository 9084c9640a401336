"""Word-aligned AWGN corruption: masks, determinism, noise statistics."""

import numpy as np
import pytest

from visr.corpus import load_corpus
from visr.corruption import CorruptionSpec, corrupt_audio
from visr.errors import ContractError


def get_case(corpus, idx=0):
    u = corpus.split("train")[idx]
    return u, corpus.features(u)


def frames_of(utt, word_indices):
    covered = np.zeros(utt.frames, dtype=bool)
    spans = utt.word_frame_spans()
    for w in word_indices:
        s, e = spans[w]
        covered[s:e] = True
    return covered


def test_spec_validation():
    with pytest.raises(ContractError):
        CorruptionSpec(mask_ratio=-0.1, noise_sigma=1.0, seed=0)
    with pytest.raises(ContractError):
        CorruptionSpec(mask_ratio=1.5, noise_sigma=1.0, seed=0)
    with pytest.raises(ContractError):
        CorruptionSpec(mask_ratio=0.5, noise_sigma=0.0, seed=0)


def test_ratio_zero_is_bit_identical(small_corpus):
    u, feats = get_case(small_corpus)
    out, chosen = corrupt_audio(feats, u, CorruptionSpec(0.0, 1.0, seed=3))
    assert chosen == []
    np.testing.assert_array_equal(out, feats)
    assert out is not feats  # still a defensive copy


def test_ratio_one_masks_every_word(small_corpus):
    u, feats = get_case(small_corpus)
    out, chosen = corrupt_audio(feats, u, CorruptionSpec(1.0, 1.0, seed=3))
    assert chosen == list(range(len(u.words)))
    covered = frames_of(u, chosen)
    # every word frame replaced (continuous noise collides with prob. 0)
    assert (out[covered] != feats[covered]).all()
    # silence frames untouched
    np.testing.assert_array_equal(out[~covered], feats[~covered])


def test_mask_count_is_floor_of_ratio(small_corpus):
    u, feats = get_case(small_corpus)
    w = len(u.words)
    for ratio in (0.25, 0.5, 0.75):
        _, chosen = corrupt_audio(feats, u, CorruptionSpec(ratio, 1.0, seed=5))
        assert len(chosen) == int(ratio * w)
        assert sorted(set(chosen)) == chosen  # sorted, no repeats


def test_unmasked_frames_bit_identical(small_corpus):
    u, feats = get_case(small_corpus)
    out, chosen = corrupt_audio(feats, u, CorruptionSpec(0.5, 2.0, seed=11))
    covered = frames_of(u, chosen)
    np.testing.assert_array_equal(out[~covered], feats[~covered])


def test_same_seed_and_uid_reproduce(small_corpus):
    u, feats = get_case(small_corpus)
    spec = CorruptionSpec(0.5, 1.0, seed=13)
    out1, c1 = corrupt_audio(feats, u, spec)
    out2, c2 = corrupt_audio(feats, u, spec)
    assert c1 == c2
    np.testing.assert_array_equal(out1, out2)


def test_different_uid_draws_differently(small_corpus):
    ua, fa = get_case(small_corpus, 0)
    ub, fb = get_case(small_corpus, 1)
    spec = CorruptionSpec(1.0, 1.0, seed=13)
    outa, _ = corrupt_audio(fa, ua, spec)
    outb, _ = corrupt_audio(fb, ub, spec)
    ka = frames_of(ua, range(len(ua.words)))
    kb = frames_of(ub, range(len(ub.words)))
    n = min(ka.sum(), kb.sum())
    assert not np.array_equal(outa[ka][:n], outb[kb][:n])


def test_no_spans_rejected(small_corpus):
    u, feats = get_case(small_corpus)
    import copy
    bare = copy.copy(u)
    bare.spans = []
    with pytest.raises(ContractError):
        corrupt_audio(feats, bare, CorruptionSpec(0.5, 1.0, seed=1))


def test_noise_moments_match_declared_sigma(small_corpus):
    # pool masked-span samples across utterances until T*D >= 1e4, then
    # z-test mean and variance against N(0, sigma^2) at significance 0.01
    sigma = 0.7
    samples = []
    total = 0
    for seed in range(17, 25):          # fresh independent draws per seed
        spec = CorruptionSpec(1.0, sigma, seed=seed)
        for u in small_corpus.utterances:
            feats = small_corpus.features(u)
            out, chosen = corrupt_audio(feats, u, spec)
            covered = frames_of(u, chosen)
            samples.append(out[covered].ravel())
            total += samples[-1].size
        if total >= 10_000:
            break
    x = np.concatenate(samples)
    n = x.size
    assert n >= 10_000
    z_mean = abs(x.mean()) / (sigma / np.sqrt(n))
    s2 = x.var()
    z_var = abs(s2 - sigma ** 2) / np.sqrt(2 * sigma ** 4 / (n - 1))
    crit = 2.5758  # two-sided normal quantile at p = 0.01
    assert z_mean < crit, f"mean z-score {z_mean:.2f}"
    assert z_var < crit, f"variance z-score {z_var:.2f}"
