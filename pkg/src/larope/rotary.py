"""RoPE and length-aware RoPE (LARoPE) rotation operators.

Both variants split a d-vector into d/2 consecutive pairs ``[x_2j, x_2j+1]`` and
rotate pair j counter-clockwise by an angle proportional to ``theta_j``:

* RoPE:   angle = p * theta_j
* LARoPE: angle = gamma * (p / L) * theta_j

Positions are 0-based and must lie inside the sequence for LARoPE, so the
normalised index spans ``[0, (L-1)/L]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .numkernel import Matrix, as_matrix


class Variant(str, enum.Enum):
    ROPE = "rope"
    LAROPE = "larope"


@dataclass(frozen=True)
class RotaryConfig:
    d: int
    base: float = 10000.0
    gamma: float = 10.0
    variant: Variant = Variant.LAROPE

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 2 or self.d % 2:
            raise ValueError(f"head dimension d must be an even integer >= 2, got {self.d!r}")
        if not self.base > 1:
            raise ValueError(f"frequency base must be > 1, got {self.base}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        object.__setattr__(self, "variant", Variant(self.variant))

    def with_(self, **changes) -> "RotaryConfig":
        fields = dict(d=self.d, base=self.base, gamma=self.gamma, variant=self.variant)
        fields.update(changes)
        return RotaryConfig(**fields)


@dataclass(frozen=True)
class EmbeddingSequence:
    """An L x d block of row vectors at positions 0..L-1."""

    values: Matrix

    def __post_init__(self):
        v = as_matrix(self.values, "sequence values")
        if v.shape[0] < 1:
            raise ValueError("an embedding sequence needs at least one position")
        object.__setattr__(self, "values", v)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def frequencies(cfg: RotaryConfig) -> np.ndarray:
    """theta_j = base ** (-2j/d) for j in 0..d/2-1."""
    j = np.arange(cfg.d // 2, dtype=np.float64)
    return cfg.base ** (-2.0 * j / cfg.d)


def normalized_positions(length: int, cfg: RotaryConfig) -> np.ndarray:
    """Effective position multiplier for each index 0..length-1 under ``cfg.variant``."""
    p = np.arange(length, dtype=np.float64)
    if cfg.variant is Variant.ROPE:
        return p
    return cfg.gamma * (p / length)


def rotate_pairs(x: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate each consecutive pair of the last axis of ``x`` by the matching angle.

    ``angles`` has the shape of ``x`` with the last axis halved. Rotating by
    ``-angles`` is the adjoint (and inverse) of rotating by ``angles``.
    """
    x = np.asarray(x, dtype=np.float64)
    c, s = np.cos(angles), np.sin(angles)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c
    return out


def _check_vector(x, cfg: RotaryConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.d,):
        raise ValueError(f"expected a vector of length {cfg.d}, got shape {x.shape}")
    return x


def _check_in_sequence(p, length) -> None:
    if length < 1:
        raise ValueError(f"sequence length must be >= 1, got {length}")
    if not 0 <= p < length:
        raise ValueError(f"position {p} outside sequence of length {length}")


def rotate_rope(x, p, cfg: RotaryConfig) -> np.ndarray:
    x = _check_vector(x, cfg)
    if p < 0:
        raise ValueError(f"position must be non-negative, got {p}")
    return rotate_pairs(x, p * frequencies(cfg))


def rotate_larope(x, p, length, cfg: RotaryConfig) -> np.ndarray:
    x = _check_vector(x, cfg)
    _check_in_sequence(p, length)
    return rotate_pairs(x, cfg.gamma * (p / length) * frequencies(cfg))


def sequence_angles(length: int, cfg: RotaryConfig) -> np.ndarray:
    """length x d/2 table of rotation angles for a whole sequence."""
    return np.outer(normalized_positions(length, cfg), frequencies(cfg))


def apply_to_sequence(seq: EmbeddingSequence, cfg: RotaryConfig) -> EmbeddingSequence:
    if seq.dim != cfg.d:
        raise ValueError(f"sequence width {seq.dim} does not match head dimension {cfg.d}")
    return EmbeddingSequence(rotate_pairs(seq.values, sequence_angles(seq.length, cfg)))


def _as_complex_pairs(v: np.ndarray) -> np.ndarray:
    return v[0::2] + 1j * v[1::2]


def _complex_score(q, k, phase_scale: float, cfg: RotaryConfig) -> float:
    q = _check_vector(q, cfg)
    k = _check_vector(k, cfg)
    h = _as_complex_pairs(q) * np.conj(_as_complex_pairs(k))
    return float(np.real(np.sum(h * np.exp(1j * phase_scale * frequencies(cfg)))))


def score_complex_rope(q, k, m, n, cfg: RotaryConfig) -> float:
    """Rotated inner product <R(q, m), R(k, n)> evaluated in complex form.

    Only ``m - n`` enters the result.
    """
    if m < 0 or n < 0:
        raise ValueError(f"positions must be non-negative, got m={m}, n={n}")
    return _complex_score(q, k, float(m - n), cfg)


def score_complex_larope(q, k, m, lq, n, lk, cfg: RotaryConfig) -> float:
    """Length-aware rotated inner product; depends on ``m/lq - n/lk`` only."""
    _check_in_sequence(m, lq)
    _check_in_sequence(n, lk)
    return _complex_score(q, k, cfg.gamma * (m / lq - n / lk), cfg)


def reference_theta(cfg: RotaryConfig) -> list[float]:
    """Scalar ``math.pow`` evaluation of the frequency table, independent of ``frequencies``."""
    return [math.pow(cfg.base, -2.0 * j / cfg.d) for j in range(cfg.d // 2)]
