"""Gated cross-modal filtering and assembly of the classifier input."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, add, concat, matmul, mul, sigmoid, tanh


def filter_modality(h_mod: Tensor, h_cross: Tensor, gate_w: Tensor,
                    gate_b: Tensor) -> Tensor:
    """Squash one modality and gate it by the cross-modal representation.

    Output is tanh(h_mod) * sigmoid(gate_w . h_cross + gate_b) elementwise,
    so every coordinate stays strictly inside (-1, 1). A saturated-low gate
    blocks the modality; a saturated-high gate passes tanh(h_mod) through.
    """
    if gate_w.data.ndim != 2:
        raise ShapeError(f"gate weights must be a matrix, got {gate_w.shape}")
    if gate_w.shape[0] != h_mod.shape[0] or gate_w.shape[1] != h_cross.shape[0]:
        raise ShapeError(
            f"gate shape {gate_w.shape} cannot map {h_cross.shape} "
            f"to {h_mod.shape}")
    if gate_b.shape != (h_mod.shape[0],):
        raise ShapeError(f"gate bias shape {gate_b.shape} vs {h_mod.shape}")
    gate = sigmoid(add(matmul(gate_w, h_cross), gate_b))
    return mul(tanh(h_mod), gate)


def fuse_representation(h_audio: Tensor, h_text: Tensor,
                        h_cross: Tensor) -> Tensor:
    """Concatenate both filtered modalities with the cross-modal vector."""
    return concat([h_audio, h_text, h_cross], axis=0)


def init_filter_gate(mod_dim: int, cross_dim: int,
                     rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """Small-uniform gate weights with zero bias (gate starts half-open)."""
    bound = np.sqrt(6.0 / (mod_dim + cross_dim))
    w = rng.uniform(-bound, bound, size=(mod_dim, cross_dim))
    return (Tensor(w, requires_grad=True),
            Tensor(np.zeros(mod_dim), requires_grad=True))
