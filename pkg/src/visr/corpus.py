"""Synthetic correlated corpus: concept lexicon, audio/image synthesis, manifests.

Each lexicon word owns a smooth audio feature template and an image patch
template. Homophone pairs share one audio template (so audio alone cannot
distinguish them) but keep distinct patch templates and spellings, which is
what lets the vision stream disambiguate. Utterances concatenate jittered
word templates with silence padding; the paired image places the patch
templates of (a subset of) the spoken words on a noise-filled grid.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from visr.errors import ContractError, DataError

VOCAB = "abcdefghijklmnopqrstuvwxyz "
SPACE_ID = VOCAB.index(" ")
VOCAB_SIZE = len(VOCAB)

FEAT_MAGIC = b"VISRFEAT"
IMG_MAGIC = b"VISRIMG\x00"

MANIFEST_NAME = "manifest.jsonl"

_JITTER_SIGMA = 0.1
_SILENCE_SIGMA = 0.05
_WORD_PLACE_PROB = 0.8


def encode_text(text: str) -> np.ndarray:
    try:
        return np.array([VOCAB.index(c) for c in text], dtype=np.int64)
    except ValueError:
        bad = sorted(set(text) - set(VOCAB))
        raise DataError(f"text contains out-of-vocabulary characters {bad}") from None


def decode_ids(ids) -> str:
    return "".join(VOCAB[int(i)] for i in ids)


# ---------------------------------------------------------------------------
# binary feature/image files: 16-byte header (8-byte magic + two u32), f64 LE
# ---------------------------------------------------------------------------

def write_matrix(path: Path, magic: bytes, arr: np.ndarray) -> None:
    header = magic + struct.pack("<II", arr.shape[0], arr.shape[1])
    path.write_bytes(header + np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_matrix(path: Path, magic: bytes) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:8] != magic:
        raise DataError(f"{path}: bad header (expected magic {magic!r})")
    rows, cols = struct.unpack_from("<II", blob, 8)
    expect = 16 + 8 * rows * cols
    if len(blob) != expect:
        raise DataError(f"{path}: size {len(blob)} != expected {expect} for [{rows},{cols}]")
    return np.frombuffer(blob, dtype="<f8", offset=16).reshape(rows, cols).copy()


# ---------------------------------------------------------------------------
# lexicon
# ---------------------------------------------------------------------------

@dataclass
class Word:
    text: str
    audio_template: np.ndarray          # [L, feat_dim] smooth trajectory
    patch_template: np.ndarray          # [patch_len]
    char_spans: list[tuple[int, int]]   # per character, partition of [0, L)
    partner: str | None = None          # homophone twin, if any


@dataclass
class Lexicon:
    words: dict[str, Word]
    pairs: list[tuple[str, str]]
    feat_dim: int
    patch_len: int

    @property
    def homophone_words(self) -> list[str]:
        return [w for pair in self.pairs for w in pair]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for text in sorted(self.words):
            w = self.words[text]
            h.update(text.encode())
            h.update(w.audio_template.astype("<f8").tobytes())
            h.update(w.patch_template.astype("<f8").tobytes())
            h.update(json.dumps(w.char_spans).encode())
        return h.hexdigest()


def _smooth_template(rng: np.random.Generator, length: int, dim: int) -> np.ndarray:
    """Low-frequency trajectory: white noise smoothed by a moving average."""
    raw = rng.standard_normal((length + 4, dim))
    kern = np.ones(5) / 5.0
    smooth = np.stack([np.convolve(raw[:, d], kern, mode="valid") for d in range(dim)],
                      axis=1)
    std = smooth.std()
    return smooth / (std if std > 0 else 1.0)


def _char_partition(rng: np.random.Generator, length: int, chars: int) -> list[tuple[int, int]]:
    """Split [0, length) into `chars` contiguous nonempty spans."""
    cuts = np.sort(rng.choice(np.arange(1, length), size=chars - 1, replace=False)) \
        if chars > 1 else np.array([], dtype=np.int64)
    edges = [0, *cuts.tolist(), length]
    return [(int(edges[i]), int(edges[i + 1])) for i in range(chars)]


def _random_word(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        n = int(rng.integers(3, 6))
        text = "".join(VOCAB[int(c)] for c in rng.integers(0, 26, size=n))
        if text not in taken:
            return text


def _mutate_word(rng: np.random.Generator, base: str, taken: set[str]) -> str:
    """Same-length twin differing in 1-3 character positions."""
    while True:
        k = int(rng.integers(1, min(3, len(base)) + 1))
        pos = rng.choice(len(base), size=k, replace=False)
        chars = list(base)
        for p in pos:
            chars[p] = VOCAB[int(rng.integers(0, 26))]
        text = "".join(chars)
        if text != base and text not in taken:
            return text


def build_lexicon(rng: np.random.Generator, n_words: int, n_pairs: int,
                  feat_dim: int, patch_len: int) -> Lexicon:
    if 2 * n_pairs > n_words:
        raise ContractError(
            f"lexicon of {n_words} words cannot hold {n_pairs} homophone pairs"
        )
    words: dict[str, Word] = {}
    pairs: list[tuple[str, str]] = []

    def add(text: str, template: np.ndarray, spans: list[tuple[int, int]]) -> Word:
        w = Word(text=text, audio_template=template,
                 patch_template=rng.standard_normal(patch_len),
                 char_spans=spans)
        words[text] = w
        return w

    for _ in range(n_pairs):
        base = _random_word(rng, set(words))
        twin = _mutate_word(rng, base, set(words) | {base})
        length = int(rng.integers(6, 13))
        template = _smooth_template(rng, length, feat_dim)
        spans = _char_partition(rng, length, len(base))
        wa = add(base, template, spans)
        wb = add(twin, template.copy(), [tuple(s) for s in spans])
        wa.partner, wb.partner = twin, base
        pairs.append((base, twin))
    while len(words) < n_words:
        text = _random_word(rng, set(words))
        length = int(rng.integers(6, 13))
        add(text, _smooth_template(rng, length, feat_dim),
            _char_partition(rng, length, len(text)))
    return Lexicon(words=words, pairs=pairs, feat_dim=feat_dim, patch_len=patch_len)


# ---------------------------------------------------------------------------
# utterances
# ---------------------------------------------------------------------------

@dataclass
class Utterance:
    uid: str
    split: str
    text: str
    feat_path: str
    image_path: str
    frames: int
    spans: list[tuple[int, int, int]]   # (token index, frame start, frame end)
    homophone: bool

    @property
    def tokens(self) -> np.ndarray:
        return encode_text(self.text)

    @property
    def words(self) -> list[str]:
        return self.text.split(" ")

    def word_frame_spans(self) -> list[tuple[int, int]]:
        """Frame span of each word = hull of its characters' spans."""
        out: list[tuple[int, int]] = []
        tok = 0
        for word in self.words:
            covered = [self.spans[tok + i] for i in range(len(word))]
            out.append((min(s for _, s, _ in covered), max(e for _, _, e in covered)))
            tok += len(word) + 1  # skip the following space token
        return out


@dataclass
class Corpus:
    root: Path
    header: dict
    utterances: list[Utterance] = field(default_factory=list)

    def split(self, name: str) -> list[Utterance]:
        return [u for u in self.utterances if u.split == name]

    def features(self, utt: Utterance) -> np.ndarray:
        return read_matrix(self.root / utt.feat_path, FEAT_MAGIC)

    def image(self, utt: Utterance) -> np.ndarray:
        return read_matrix(self.root / utt.image_path, IMG_MAGIC)


def _synthesize_audio(rng: np.random.Generator, lex: Lexicon,
                      words: list[str]) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """Concatenate jittered word templates with silence; emit per-token spans.

    Space tokens get an empty span at the word boundary, so every token has
    exactly one span while silence frames stay outside all spans.
    """
    dim = lex.feat_dim
    chunks: list[np.ndarray] = []
    spans: list[tuple[int, int, int]] = []
    cursor = 0
    tok = 0

    def silence(count: int) -> None:
        nonlocal cursor
        if count:
            chunks.append(rng.standard_normal((count, dim)) * _SILENCE_SIGMA)
            cursor += count

    silence(int(rng.integers(1, 4)))
    for k, text in enumerate(words):
        if k:
            spans.append((tok, cursor, cursor))  # the space token
            tok += 1
            silence(int(rng.integers(0, 3)))
        w = lex.words[text]
        jitter = rng.standard_normal(w.audio_template.shape) * _JITTER_SIGMA
        chunks.append(w.audio_template + jitter)
        for s, e in w.char_spans:
            spans.append((tok, cursor + s, cursor + e))
            tok += 1
        cursor += w.audio_template.shape[0]
    silence(int(rng.integers(1, 4)))
    return np.concatenate(chunks, axis=0), spans


def _synthesize_image(rng: np.random.Generator, lex: Lexicon, words: list[str],
                      grid: int) -> np.ndarray:
    """Noise-filled patch grid carrying the spoken words' patch templates.

    Homophone words always place their template (it is the only signal that
    can disambiguate them); other words place theirs with fixed probability.
    """
    k_slots = grid * grid
    placed: list[str] = []
    for text in dict.fromkeys(words):
        if lex.words[text].partner is not None or rng.random() < _WORD_PLACE_PROB:
            placed.append(text)
    placed = placed[:k_slots]
    image = rng.standard_normal((k_slots, lex.patch_len))
    slots = rng.permutation(k_slots)[:len(placed)]
    for slot, text in zip(slots, placed):
        image[slot] = lex.words[text].patch_template
    return image


def generate_corpus(out_dir: str | Path, seed: int, n_words: int = 40,
                    n_pairs: int = 8, n_train: int = 600, n_val: int = 200,
                    homophone_fraction: float = 0.5, feat_dim: int = 40,
                    patch_len: int = 32, grid: int = 4,
                    words_min: int = 3, words_max: int = 8) -> Corpus:
    """Generate lexicon + utterances + manifest under out_dir, deterministically.

    Each word slot draws from the homophone vocabulary with probability
    `homophone_fraction`, otherwise uniformly from the full lexicon.
    """
    if n_train < 1 or n_val < 1:
        raise ContractError("utterance counts must be >= 1")
    if homophone_fraction > 0 and n_pairs < 1:
        raise ContractError("homophone_fraction > 0 requires at least one pair")
    if not 0 <= homophone_fraction <= 1:
        raise ContractError("homophone_fraction must lie in [0, 1]")

    root = Path(out_dir)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(parents=True, exist_ok=True)

    master = np.random.SeedSequence(seed)
    total = n_train + n_val
    lex_ss, *utt_ss = master.spawn(1 + total)
    lex = build_lexicon(np.random.default_rng(lex_ss), n_words, n_pairs,
                        feat_dim, patch_len)
    all_words = sorted(lex.words)
    homo_words = sorted(lex.homophone_words)

    utterances: list[Utterance] = []
    for i in range(total):
        rng = np.random.default_rng(utt_ss[i])
        uid = f"utt-{i:06d}"
        split = "train" if i < n_train else "val"
        n = int(rng.integers(words_min, words_max + 1))
        words = []
        for _ in range(n):
            pool = homo_words if (homo_words and rng.random() < homophone_fraction) \
                else all_words
            words.append(pool[int(rng.integers(0, len(pool)))])
        feats, spans = _synthesize_audio(rng, lex, words)
        image = _synthesize_image(rng, lex, words, grid)
        feat_path = f"features/{uid}.bin"
        image_path = f"images/{uid}.bin"
        write_matrix(root / feat_path, FEAT_MAGIC, feats)
        write_matrix(root / image_path, IMG_MAGIC, image)
        utterances.append(Utterance(
            uid=uid, split=split, text=" ".join(words),
            feat_path=feat_path, image_path=image_path,
            frames=feats.shape[0], spans=spans,
            homophone=any(lex.words[w].partner is not None for w in words),
        ))

    # population std of all clean feature values (one pass; files are small)
    acc_sum = 0.0
    acc_sq = 0.0
    acc_n = 0
    for u in utterances:
        f = read_matrix(root / u.feat_path, FEAT_MAGIC)
        acc_sum += float(f.sum())
        acc_sq += float((f * f).sum())
        acc_n += f.size
    mean = acc_sum / acc_n
    sigma = float(np.sqrt(max(acc_sq / acc_n - mean * mean, 0.0)))

    header = {
        "type": "header", "version": 1, "seed": seed,
        "vocab": VOCAB, "feat_dim": feat_dim, "patch_len": patch_len,
        "grid": grid, "feature_sigma": sigma,
        "lexicon_hash": lex.content_hash(),
        "counts": {"train": n_train, "val": n_val},
        "homophone_words": homo_words,
        "homophone_fraction": homophone_fraction,
    }
    with open(root / MANIFEST_NAME, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for u in utterances:
            fh.write(json.dumps({
                "type": "utt", "id": u.uid, "split": u.split, "text": u.text,
                "feat": u.feat_path, "image": u.image_path, "frames": u.frames,
                "spans": [list(s) for s in u.spans], "homophone": u.homophone,
            }, sort_keys=True) + "\n")
    return Corpus(root=root, header=header, utterances=utterances)


# ---------------------------------------------------------------------------
# manifest loading + validation
# ---------------------------------------------------------------------------

_UTT_KEYS = {"type", "id", "split", "text", "feat", "image", "frames", "spans",
             "homophone"}


def load_corpus(root: str | Path, check_files: bool = True) -> Corpus:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"{path}: manifest not found")
    header: dict | None = None
    utterances: list[Utterance] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
        if lineno == 1:
            if rec.get("type") != "header":
                raise DataError(f"{path}:{lineno}: first record must be the header")
            if rec.get("vocab") != VOCAB:
                raise DataError(f"{path}:{lineno}: vocabulary mismatch")
            header = rec
            continue
        _validate_utt(rec, path, lineno)
        utt = Utterance(
            uid=rec["id"], split=rec["split"], text=rec["text"],
            feat_path=rec["feat"], image_path=rec["image"], frames=rec["frames"],
            spans=[tuple(s) for s in rec["spans"]], homophone=rec["homophone"],
        )
        if check_files:
            for rel in (utt.feat_path, utt.image_path):
                if not (root / rel).exists():
                    raise DataError(f"{path}:{lineno}: referenced file missing: {rel}")
        utterances.append(utt)
    if header is None:
        raise DataError(f"{path}: empty manifest")
    return Corpus(root=root, header=header, utterances=utterances)


def _validate_utt(rec: dict, path: Path, lineno: int) -> None:
    def bad(msg: str):
        return DataError(f"{path}:{lineno}: {msg}")

    if rec.get("type") != "utt":
        raise bad(f"unexpected record type {rec.get('type')!r}")
    missing = _UTT_KEYS - set(rec)
    if missing:
        raise bad(f"missing keys {sorted(missing)}")
    if rec["split"] not in ("train", "val"):
        raise bad(f"unknown split {rec['split']!r}")
    text = rec["text"]
    if not text or any(c not in VOCAB for c in text):
        raise bad("text empty or out of vocabulary")
    frames = rec["frames"]
    if not isinstance(frames, int) or frames < 1:
        raise bad(f"bad frame count {frames!r}")
    spans = rec["spans"]
    if len(spans) != len(text):
        raise bad(f"{len(spans)} spans for {len(text)} tokens")
    prev_end = 0
    for k, span in enumerate(spans):
        if len(span) != 3:
            raise bad(f"span {k} is not a triple")
        tok, s, e = span
        if tok != k:
            raise bad(f"span {k} tagged with token index {tok}")
        if not (0 <= s <= e <= frames):
            raise bad(f"span {k} out of range: ({s},{e}) with T={frames}")
        if s < prev_end:
            raise bad(f"span {k} overlaps its predecessor")
        prev_end = e
