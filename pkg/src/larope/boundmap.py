"""Relative upper bound of the rotated inner product over (query, key) grids.

For a relative phase ``delta`` the bound is ``sum_j S_j`` with two readings of
``S_j``:

* ``PARTIAL_SUM``: ``S_j = |sum_{k<=j} exp(i delta theta_k)|``. Decays with
  ``|delta|`` and is what produces a visible ridge.
* ``MAGNITUDES``: ``S_j = sum_{k<=j} |exp(i delta theta_k)| = j + 1``. Constant
  for every delta; kept as a fidelity check on the literal formula.

The prefactor ``max_j |h_{j+1} - h_j|`` that depends on q and k is left out.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numkernel import Matrix
from .rotary import RotaryConfig, Variant, frequencies


class SjMode(str, enum.Enum):
    PARTIAL_SUM = "partial-sum"
    MAGNITUDES = "magnitudes"


@dataclass(frozen=True)
class BoundGrid:
    lq: int
    lk: int
    values: Matrix
    variant: Variant
    cfg: RotaryConfig
    sj_mode: SjMode

    def row_argmax(self) -> np.ndarray:
        # np.argmax returns the first maximal index, i.e. ties go to the lowest n.
        return np.argmax(self.values, axis=1)


def relative_bound(delta, cfg: RotaryConfig, sj_mode: SjMode = SjMode.PARTIAL_SUM):
    """Bound value for a scalar or array of relative phases ``delta``."""
    sj_mode = SjMode(sj_mode)
    delta = np.asarray(delta, dtype=np.float64)
    theta = frequencies(cfg)
    if sj_mode is SjMode.MAGNITUDES:
        terms = np.abs(np.exp(1j * delta[..., None] * theta))
        out = np.cumsum(terms, axis=-1).sum(axis=-1)
    else:
        partial = np.cumsum(np.exp(1j * delta[..., None] * theta), axis=-1)
        out = np.abs(partial).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def relative_distances(lq: int, lk: int, cfg: RotaryConfig, variant=None) -> np.ndarray:
    """lq x lk matrix of the phase multiplier entering each (m, n) score."""
    variant = Variant(variant if variant is not None else cfg.variant)
    m = np.arange(lq, dtype=np.float64)[:, None]
    n = np.arange(lk, dtype=np.float64)[None, :]
    if variant is Variant.ROPE:
        return m - n
    return cfg.gamma * (m / lq - n / lk)


def bound_grid(
    lq: int,
    lk: int,
    cfg: RotaryConfig,
    variant=None,
    sj_mode: SjMode = SjMode.PARTIAL_SUM,
) -> BoundGrid:
    if lq < 1 or lk < 1:
        raise ValueError(f"grid sizes must be >= 1, got lq={lq}, lk={lk}")
    variant = Variant(variant if variant is not None else cfg.variant)
    sj_mode = SjMode(sj_mode)
    values = np.asarray(relative_bound(relative_distances(lq, lk, cfg, variant), cfg, sj_mode))
    return BoundGrid(lq, lk, values.reshape(lq, lk), variant, cfg, sj_mode)


def ideal_key_position(m, lq: int, lk: int):
    """Endpoints-aligned diagonal: row 0 maps to key 0 and row lq-1 to key lk-1."""
    if lq == 1:
        return (lk - 1) / 2.0 + 0.0 * np.asarray(m, dtype=np.float64)
    return np.asarray(m, dtype=np.float64) * (lk - 1) / (lq - 1)


def ridge_deviation(grid: BoundGrid) -> float:
    """Mean over rows of |argmax_n - ideal(m)| / lk, with ties going to the lowest n."""
    m = np.arange(grid.lq)
    dev = np.abs(grid.row_argmax() - ideal_key_position(m, grid.lq, grid.lk)) / grid.lk
    return float(dev.mean())
