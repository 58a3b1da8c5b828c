"""Hierarchical local attention collapsing a vector sequence to one vector.

Level 0 rectifies the inputs. Each later level slides a stride-1 window of
fixed width over the previous level's vectors, softmax-weights the window
per coordinate, averages, and projects through a shared affine + ReLU. The
level count for N inputs and width X is ceil((N-1)/(X-1)); the final level
leaves a single context vector. The same operation serves token embeddings
and audio frame sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, add, group_softmax, matmul, mul, relu, scale


@dataclass
class LevelRecord:
    """Vectors produced at one level, plus the weights that built them.

    Level 0 has no windows, so its ``window_weights`` list is empty.
    """

    contexts: list[Tensor]
    window_weights: list[list[Tensor]] = field(default_factory=list)


@dataclass
class LevelTrace:
    """All levels of one hierarchical collapse, level 0 first."""

    width: int
    levels: list[LevelRecord]

    @property
    def attention_levels(self) -> int:
        """Number of window-attention levels (excludes level 0)."""
        return len(self.levels) - 1

    def level_sizes(self) -> list[int]:
        return [len(rec.contexts) for rec in self.levels]


def level_count(n: int, width: int) -> int:
    """Attention levels needed to collapse n vectors with stride-1 windows.

    Each level shrinks the sequence by width - 1, except a final truncated
    window which also ends the hierarchy; ceil((n-1)/(width-1)) covers both.
    """
    if n < 1:
        raise ValueError(f"need at least one vector, got {n}")
    if width < 2:
        raise ValueError(f"window width must be at least 2, got {width}")
    return -((n - 1) // -(width - 1))


def local_attention(window: list[Tensor], proj_w: Tensor,
                    proj_b: Tensor) -> tuple[list[Tensor], Tensor]:
    """Attend over one window: softmax weights, average, project, rectify.

    The weighted sum is divided by the actual window size, so truncated
    final windows stay a bounded average.
    """
    if len(window) == 0:
        raise ValueError("local_attention on an empty window")
    weights = group_softmax(window)
    combined = mul(weights[0], window[0])
    for w, v in zip(weights[1:], window[1:]):
        combined = add(combined, mul(w, v))
    pooled = scale(combined, 1.0 / len(window))
    context = relu(add(matmul(proj_w, pooled), proj_b))
    return weights, context


def hier_attend(vectors: list[Tensor], proj_w: Tensor, proj_b: Tensor,
                width: int = 3) -> tuple[Tensor, LevelTrace]:
    """Collapse N vectors to one through stacked local attentions.

    Windows slide with stride 1 and full width while enough vectors remain;
    when fewer than ``width`` are left, a single truncated window finishes
    the level. Returns the final vector and the complete trace.
    """
    if len(vectors) == 0:
        raise ValueError("hier_attend needs at least one vector")
    if width < 2:
        raise ValueError(f"window width must be at least 2, got {width}")
    current = [relu(v) for v in vectors]
    trace = LevelTrace(width=width, levels=[LevelRecord(contexts=current)])
    while len(current) > 1:
        if len(current) >= width:
            windows = [current[k:k + width]
                       for k in range(len(current) - width + 1)]
        else:
            windows = [current]
        record = LevelRecord(contexts=[])
        for window in windows:
            weights, context = local_attention(window, proj_w, proj_b)
            record.window_weights.append(weights)
            record.contexts.append(context)
        trace.levels.append(record)
        current = record.contexts
    return current[0], trace


def init_projection(dim: int, rng: np.random.Generator,
                    noise: float = 0.01) -> tuple[Tensor, Tensor]:
    """Near-identity affine map so early training passes vectors through."""
    w = np.eye(dim) + rng.uniform(-noise, noise, size=(dim, dim))
    return (Tensor(w, requires_grad=True),
            Tensor(np.zeros(dim), requires_grad=True))
