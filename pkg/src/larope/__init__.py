"""Rotary and length-aware rotary position embeddings for cross-attention alignment."""

from .boundmap import BoundGrid, SjMode, bound_grid, relative_bound, ridge_deviation
from .rotary import (
    EmbeddingSequence,
    RotaryConfig,
    Variant,
    apply_to_sequence,
    frequencies,
    rotate_larope,
    rotate_rope,
    score_complex_larope,
    score_complex_rope,
)
from .xattn import AttentionScoreMap, CrossAttentionLayer, alignment_error, average_maps, backward, forward

__all__ = [
    "AttentionScoreMap",
    "BoundGrid",
    "CrossAttentionLayer",
    "EmbeddingSequence",
    "RotaryConfig",
    "SjMode",
    "Variant",
    "alignment_error",
    "apply_to_sequence",
    "average_maps",
    "backward",
    "bound_grid",
    "forward",
    "frequencies",
    "relative_bound",
    "ridge_deviation",
    "rotate_larope",
    "rotate_rope",
    "score_complex_larope",
    "score_complex_rope",
]
