"""Single-head cross-attention with rotary positions and a hand-written backward pass.

Queries (speech-like frames) attend to keys (text-like tokens)::

    Q = rot(X_q W_q),  K = rot(X_k W_k),  V = X_k W_v
    S = Q K^T,  A = softmax(S / sqrt(d)),  Y = (A V) W_o

No masking: every query sees every key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numkernel import Matrix, as_matrix, matmul, row_softmax
from .rotary import EmbeddingSequence, RotaryConfig, rotate_pairs, sequence_angles

PARAM_NAMES = ("wq", "wk", "wv", "wo")


@dataclass
class CrossAttentionLayer:
    wq: Matrix
    wk: Matrix
    wv: Matrix
    wo: Matrix
    cfg: RotaryConfig

    def __post_init__(self):
        d_model, d = np.shape(self.wq)
        for name in ("wq", "wk", "wv"):
            if np.shape(getattr(self, name)) != (d_model, d):
                raise ValueError(f"{name} must be {d_model}x{d}, got {np.shape(getattr(self, name))}")
        if np.shape(self.wo) != (d, d_model):
            raise ValueError(f"wo must be {d}x{d_model}, got {np.shape(self.wo)}")
        if d != self.cfg.d:
            raise ValueError(f"projection width {d} does not match head dimension {self.cfg.d}")
        for name in PARAM_NAMES:
            setattr(self, name, as_matrix(getattr(self, name), name))

    @classmethod
    def init(cls, d_model: int, cfg: RotaryConfig, rng: np.random.Generator) -> "CrossAttentionLayer":
        """Uniform(-1/sqrt(d_model), 1/sqrt(d_model)) init, drawn in wq, wk, wv, wo order."""
        bound = 1.0 / math.sqrt(d_model)
        shapes = [(d_model, cfg.d)] * 3 + [(cfg.d, d_model)]
        wq, wk, wv, wo = (rng.uniform(-bound, bound, size=s) for s in shapes)
        return cls(wq, wk, wv, wo, cfg)

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    def params(self) -> dict[str, Matrix]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "CrossAttentionLayer":
        return CrossAttentionLayer(*(getattr(self, n).copy() for n in PARAM_NAMES), self.cfg)


@dataclass(frozen=True)
class AttentionScoreMap:
    pre_softmax: Matrix
    post_softmax: Matrix


@dataclass
class ForwardCache:
    xq: Matrix
    xk: Matrix
    angles_q: np.ndarray
    angles_k: np.ndarray
    q: Matrix
    k: Matrix
    v: Matrix
    attn: Matrix
    mixed: Matrix
    scale: float


@dataclass
class Gradients:
    wq: Matrix
    wk: Matrix
    wv: Matrix
    wo: Matrix
    queries: Matrix
    keys: Matrix

    def params(self) -> dict[str, Matrix]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


def _inputs(seq) -> Matrix:
    return seq.values if isinstance(seq, EmbeddingSequence) else as_matrix(seq)


def forward(layer: CrossAttentionLayer, queries, keys, *, return_cache: bool = False):
    """Run the layer; returns ``(output, score_map)`` and optionally the backward cache."""
    xq, xk = _inputs(queries), _inputs(keys)
    if xq.shape[1] != layer.d_model or xk.shape[1] != layer.d_model:
        raise ValueError(
            f"inputs must have {layer.d_model} columns, got queries {xq.shape} and keys {xk.shape}"
        )
    cfg = layer.cfg
    angles_q = sequence_angles(xq.shape[0], cfg)
    angles_k = sequence_angles(xk.shape[0], cfg)
    q = rotate_pairs(matmul(xq, layer.wq), angles_q)
    k = rotate_pairs(matmul(xk, layer.wk), angles_k)
    v = matmul(xk, layer.wv)
    scores = matmul(q, k.T)
    scale = 1.0 / math.sqrt(cfg.d)
    attn = row_softmax(scores, scale)
    mixed = matmul(attn, v)
    out = matmul(mixed, layer.wo)
    smap = AttentionScoreMap(scores, attn)
    if not return_cache:
        return EmbeddingSequence(out), smap
    cache = ForwardCache(xq, xk, angles_q, angles_k, q, k, v, attn, mixed, scale)
    return EmbeddingSequence(out), smap, cache


def backward(layer: CrossAttentionLayer, cache: ForwardCache, grad_output) -> Gradients:
    """Reverse-mode gradients of the forward composition w.r.t. parameters and inputs."""
    g = as_matrix(grad_output, "grad_output")
    if g.shape != (cache.xq.shape[0], layer.d_model):
        raise ValueError(f"grad_output shape {g.shape} does not match output shape "
                         f"{(cache.xq.shape[0], layer.d_model)}")
    d_wo = matmul(cache.mixed.T, g)
    d_mixed = matmul(g, layer.wo.T)
    d_attn = matmul(d_mixed, cache.v.T)
    d_v = matmul(cache.attn.T, d_mixed)
    # softmax Jacobian-vector product, then the 1/sqrt(d) pre-scale
    d_scores = cache.scale * cache.attn * (d_attn - np.sum(d_attn * cache.attn, axis=1, keepdims=True))
    d_q = matmul(d_scores, cache.k)
    d_k = matmul(d_scores.T, cache.q)
    # rotation is orthogonal: its adjoint rotates by the negated angles
    d_qp = rotate_pairs(d_q, -cache.angles_q)
    d_kp = rotate_pairs(d_k, -cache.angles_k)
    return Gradients(
        wq=matmul(cache.xq.T, d_qp),
        wk=matmul(cache.xk.T, d_kp),
        wv=matmul(cache.xk.T, d_v),
        wo=d_wo,
        queries=matmul(d_qp, layer.wq.T),
        keys=matmul(d_kp, layer.wk.T) + matmul(d_v, layer.wv.T),
    )


def average_maps(maps, exclude_keys=()) -> Matrix:
    """Mean post-softmax map with ``exclude_keys`` columns dropped and rows renormalised."""
    maps = list(maps)
    if not maps:
        raise ValueError("need at least one attention map to average")
    shape = maps[0].post_softmax.shape
    for mp in maps[1:]:
        if mp.post_softmax.shape != shape:
            raise ValueError(f"attention maps disagree in shape: {shape} vs {mp.post_softmax.shape}")
    lk = shape[1]
    excluded = set(int(i) for i in exclude_keys)
    bad = [i for i in excluded if not 0 <= i < lk]
    if bad:
        raise ValueError(f"excluded key indices out of range [0, {lk}): {sorted(bad)}")
    keep = [n for n in range(lk) if n not in excluded]
    if not keep:
        raise ValueError("cannot exclude every key position")
    mean = np.mean([mp.post_softmax for mp in maps], axis=0)[:, keep]
    return mean / mean.sum(axis=1, keepdims=True)


def alignment_error(attn: Matrix, ideal) -> float:
    """Mean over rows of |argmax_n attn[m, n] - ideal(m)| / L_k.

    ``ideal`` is either a callable on the row index or a sequence of key indices.
    Ties in the argmax go to the lowest key index.
    """
    attn = np.asarray(attn, dtype=np.float64)
    lq, lk = attn.shape
    rows = np.arange(lq)
    target = np.asarray([ideal(m) for m in rows] if callable(ideal) else ideal, dtype=np.float64)
    if target.shape != (lq,):
        raise ValueError(f"ideal path needs {lq} entries, got {target.shape}")
    return float(np.mean(np.abs(np.argmax(attn, axis=1) - target)) / lk)
