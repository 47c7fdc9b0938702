"""Fast invariant suite behind ``larope check``."""

from __future__ import annotations

import math
from contextlib import ExitStack
from dataclasses import dataclass
from unittest import mock

import numpy as np

from . import boundmap, rotary
from .numkernel import grad_check, make_rng, row_softmax
from .rotary import RotaryConfig, Variant
from .xattn import PARAM_NAMES, CrossAttentionLayer, backward, forward

DIMS = (2, 4, 8, 16, 64)


@dataclass
class PropertyResult:
    name: str
    instances: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _random_case(rng, d):
    cfg = RotaryConfig(int(d), gamma=float(rng.uniform(0.5, 20.0)))
    return cfg, rng.standard_normal(d), rng.standard_normal(d)


def check_theta_table(rng, n):
    worst = 0.0
    for d in DIMS:
        cfg = RotaryConfig(d, base=float(rng.uniform(2.0, 1e5)))
        ref = np.array(rotary.reference_theta(cfg))
        worst = max(worst, float(np.max(np.abs(rotary.frequencies(cfg) - ref) / ref)))
    return len(DIMS), worst


def check_norm(rng, n):
    worst = 0.0
    for _ in range(n):
        cfg, x, _ = _random_case(rng, rng.choice(DIMS))
        length = int(rng.integers(1, 200))
        p = int(rng.integers(0, length))
        nx = np.linalg.norm(x)
        worst = max(worst, abs(np.linalg.norm(rotary.rotate_rope(x, p, cfg)) - nx),
                    abs(np.linalg.norm(rotary.rotate_larope(x, p, length, cfg)) - nx))
    return n, worst


def check_rope_shift(rng, n):
    worst = 0.0
    for _ in range(n):
        cfg, q, k = _random_case(rng, rng.choice(DIMS))
        m, nn, s = (int(v) for v in rng.integers(0, 100, size=3))
        a = rotary.rotate_rope(q, m + s, cfg) @ rotary.rotate_rope(k, nn + s, cfg)
        b = rotary.rotate_rope(q, m, cfg) @ rotary.rotate_rope(k, nn, cfg)
        worst = max(worst, abs(a - b))
    return n, worst


def check_larope_normalized(rng, n):
    worst = 0.0
    for _ in range(n):
        cfg, q, k = _random_case(rng, rng.choice(DIMS))
        lq, lk = (int(v) for v in rng.integers(1, 40, size=2))
        m, nn = int(rng.integers(0, lq)), int(rng.integers(0, lk))
        a, b = (int(v) for v in rng.integers(1, 5, size=2))
        # same m/lq and n/lk after integer rescaling of either side
        s1 = rotary.rotate_larope(q, m, lq, cfg) @ rotary.rotate_larope(k, nn, lk, cfg)
        s2 = rotary.rotate_larope(q, a * m, a * lq, cfg) @ rotary.rotate_larope(k, b * nn, b * lk, cfg)
        worst = max(worst, abs(s1 - s2))
    return n, worst


def check_reduction(rng, n):
    worst = 0.0
    for _ in range(n):
        d = int(rng.choice([2, 4, 8, 16, 32]))
        length = int(rng.integers(1, 65))
        cfg = RotaryConfig(d, gamma=float(length))
        x = rng.standard_normal(d)
        p = int(rng.integers(0, length))
        diff = rotary.rotate_larope(x, p, length, cfg) - rotary.rotate_rope(x, p, cfg)
        worst = max(worst, float(np.max(np.abs(diff))))
    return n, worst


def check_complex_form(rng, n):
    worst = 0.0
    for _ in range(n):
        cfg, q, k = _random_case(rng, rng.choice(DIMS))
        lq, lk = (int(v) for v in rng.integers(1, 300, size=2))
        m, nn = int(rng.integers(0, lq)), int(rng.integers(0, lk))
        direct = rotary.rotate_rope(q, m, cfg) @ rotary.rotate_rope(k, nn, cfg)
        worst = max(worst, abs(rotary.score_complex_rope(q, k, m, nn, cfg) - direct))
        direct = rotary.rotate_larope(q, m, lq, cfg) @ rotary.rotate_larope(k, nn, lk, cfg)
        worst = max(worst, abs(rotary.score_complex_larope(q, k, m, lq, nn, lk, cfg) - direct))
    return n, worst


def check_softmax(rng, n):
    worst = 0.0
    for _ in range(n):
        rows = rng.uniform(-1e4, 1e4, size=(4, int(rng.integers(1, 50))))
        worst = max(worst, float(np.max(np.abs(row_softmax(rows, 1.0).sum(axis=1) - 1.0))))
    return n, worst


def check_gradients(rng, n):
    worst = 0.0
    for i in range(n):
        variant = (Variant.ROPE, Variant.LAROPE)[i % 2]
        layer = CrossAttentionLayer.init(6, RotaryConfig(4, variant=variant), rng)
        xq, xk = rng.standard_normal((5, 6)), rng.standard_normal((7, 6))
        target = rng.standard_normal((5, 6))
        _, _, cache = forward(layer, xq, xk, return_cache=True)
        out = forward(layer, xq, xk)[0].values
        grads = backward(layer, cache, 2.0 * (out - target) / out.size)

        def loss(_):
            return float(np.mean((forward(layer, xq, xk)[0].values - target) ** 2))

        for name in PARAM_NAMES:
            worst = max(worst, grad_check(loss, getattr(layer, name), getattr(grads, name), 1e-5))
    return n, worst


def check_bound_peak(rng, n):
    cfg = RotaryConfig(64)
    grid = boundmap.bound_grid(32, 32, cfg, Variant.LAROPE)
    diag = np.arange(32)
    return 1, float(np.max(np.abs(grid.row_argmax() - diag)))


PROPERTIES = (
    ("frequency table matches base^(-2j/d)", check_theta_table, 1e-15),
    ("rotation preserves norm", check_norm, 1e-12),
    ("RoPE score invariant under joint shift", check_rope_shift, 1e-9),
    ("LARoPE score depends on m/Lq - n/Lk only", check_larope_normalized, 1e-9),
    ("LARoPE with gamma=L reduces to RoPE", check_reduction, 1e-12),
    ("complex-form score equals rotate-then-dot", check_complex_form, 1e-9),
    ("softmax rows sum to one", check_softmax, 1e-12),
    ("cross-attention gradients match central differences", check_gradients, 1e-4),
    ("LARoPE square bound grid peaks on the diagonal", check_bound_peak, 0.0),
)

_INSTANCES = {"cross-attention gradients match central differences": 6}


def _corrupted_frequencies(cfg):
    theta = rotary.reference_theta(cfg)
    theta[-1] *= 1.5
    return np.array(theta)


def run_checks(seed: int = 0, instances: int = 300, corrupt_theta: bool = False) -> list[PropertyResult]:
    """Evaluate every property; ``corrupt_theta`` swaps in a wrong frequency table (fault injection)."""
    results = []
    with ExitStack() as stack:
        if corrupt_theta:
            stack.enter_context(mock.patch.object(rotary, "frequencies", _corrupted_frequencies))
            stack.enter_context(mock.patch.object(boundmap, "frequencies", _corrupted_frequencies))
        for name, fn, tol in PROPERTIES:
            rng = make_rng(seed)
            count, err = fn(rng, _INSTANCES.get(name, instances))
            results.append(PropertyResult(name, count, err if math.isfinite(err) else math.inf, tol))
    return results
