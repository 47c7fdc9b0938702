"""Dense float64 substrate shared by the rest of the package.

A "matrix" here is simply a 2-D ``numpy.ndarray`` of dtype float64. The helpers
below add the shape checks numpy would otherwise silently broadcast.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Matrix = np.ndarray


def as_matrix(values, name: str = "matrix") -> Matrix:
    """Coerce ``values`` to a C-contiguous 2-D float64 array."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(m: Matrix, scale: float = 1.0) -> Matrix:
    """Softmax over each row of ``scale * m``, stabilised by subtracting the row max."""
    z = np.asarray(m, dtype=np.float64) * scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def make_rng(seed: int, stream: int | None = None) -> np.random.Generator:
    """Seeded generator backed by PCG64, numpy's documented 128-bit-state permuted
    congruential generator. Streams are identical across platforms for a given seed.

    ``stream`` selects an independent sub-stream of ``seed`` so that, e.g., the
    initialisation stream of seed 0 never coincides with the data stream of seed 2.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    if stream is None:
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def grad_check(
    f: Callable[[Matrix], float],
    x: Matrix,
    analytic_grad: Matrix,
    eps: float = 1e-5,
) -> float:
    """Largest relative disagreement between ``analytic_grad`` and central differences of ``f`` at ``x``.

    Each entry contributes ``|numeric - analytic| / (|analytic| + 1e-8)``. ``x`` is
    perturbed in place and restored, so callers may pass a parameter array that
    ``f`` closes over.
    """
    x = np.asarray(x)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(f"gradient shape {analytic.shape} does not match input {x.shape}")
    if not x.flags.c_contiguous:
        raise ValueError("grad_check perturbs x in place and needs a C-contiguous array")
    worst = 0.0
    flat = x.reshape(-1)
    ana = analytic.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value while perturbing entry {i}")
        numeric = (fp - fm) / (2.0 * eps)
        worst = max(worst, abs(numeric - ana[i]) / (abs(ana[i]) + 1e-8))
    return worst
