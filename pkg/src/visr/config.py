"""Run configuration: a flat key=value text file mapped onto a dataclass."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from visr.errors import DataError


@dataclass
class RunConfig:
    # model dimensions
    feat_dim: int = 40
    d_model: int = 64
    d_vision: int = 64
    heads: int = 4
    ffn_hidden: int = 128
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    vision_blocks: int = 2
    fir_kernel: int = 11
    grid: int = 4            # image is grid x grid patches
    patch_len: int = 32
    # alignment / sampling / merging
    cif_threshold: float = 1.0
    cif_residue: float = 0.5
    sampler_lambda: float = 0.75
    merge_alpha: float = 0.5
    gate_mode: str = "batch_argmax"
    temperature: float = 0.07
    clamp_similarity: bool = False
    share_vh_decoder: bool = True
    # loss weights
    w_asr: float = 1.0
    w_vh: float = 1.0
    w_quantity: float = 1.0
    w_contrastive: float = 0.5
    # optimization
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    max_steps: int = 0       # 0 = no cap
    grad_clip: float = 5.0
    seed: int = 0
    # freezing
    freeze_vision: bool = False
    freeze_vh: bool = False

    def validate(self) -> "RunConfig":
        checks = [
            (self.feat_dim >= 1, "feat_dim must be >= 1"),
            (self.d_model >= self.heads and self.d_model % self.heads == 0,
             "d_model must be a positive multiple of heads"),
            (self.fir_kernel % 2 == 1, "fir_kernel must be odd"),
            (self.grid >= 1, "grid must be >= 1"),
            (0.0 < self.sampler_lambda < 1.0, "sampler_lambda must be in (0,1)"),
            (0.0 < self.merge_alpha < 1.0, "merge_alpha must be in (0,1)"),
            (self.cif_threshold > 0.0, "cif_threshold must be positive"),
            (self.temperature > 0.0, "temperature must be positive"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr > 0.0, "lr must be positive"),
            (self.gate_mode in ("batch_argmax",), f"unknown gate_mode {self.gate_mode!r}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise DataError(f"config: {msg}")
        return self


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise DataError(f"config: bad value {raw!r} for key {key!r} ({kind})") from exc


def load_config(path: str | Path) -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys rejected."""
    cfg = RunConfig()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise DataError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in _FIELDS:
            raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg.validate()


def save_config(path: str | Path, cfg: RunConfig) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    Path(path).write_text("\n".join(lines) + "\n")
