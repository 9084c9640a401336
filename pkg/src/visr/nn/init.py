"""Seeded parameter initializers (all take an np.random.Generator)."""

from __future__ import annotations

import math

import numpy as np


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape if shape is not None else (fan_in, fan_out))


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random n x n orthogonal matrix via QR with sign-fixed diagonal."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def orthogonal_stack(rng: np.random.Generator, blocks: int, n: int) -> np.ndarray:
    """Stack `blocks` independent orthogonal n x n matrices into [blocks*n, n]."""
    return np.concatenate([orthogonal(rng, n) for _ in range(blocks)], axis=0)


def normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    return rng.standard_normal(shape) * std


def sinusoid_positions(length: int, dim: int) -> np.ndarray:
    """Classic fixed sin/cos positional table [length, dim]; dim must be even."""
    if dim % 2:
        raise ValueError(f"positional dim must be even, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-math.log(10000.0) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div)
    return table
