"""Dense float64 tensors with a reverse-mode gradient tape.

Everything the model computes flows through the small op set in this module.
Each op validates its inputs, checks the result for NaN/Inf, and registers an
adjoint rule on the active :class:`Tape` so that :func:`backward` can
accumulate gradients in exact reverse execution order.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A forward operation produced a NaN or Inf value."""


class Tensor:
    """A dense array of float64 values with an optional gradient buffer.

    ``data`` is always a C-contiguous float64 ndarray. ``grad`` starts as
    ``None`` and is allocated on first accumulation; it always matches
    ``data`` in shape. Scalars are shape-() tensors.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        # asarray with order="C" keeps 0-d shapes; ascontiguousarray would
        # promote scalars to shape (1,)
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor initialized with non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(())[()])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    """One executed op: its outputs, parents, and adjoint rule."""

    __slots__ = ("outputs", "parents", "backward_fn")

    def __init__(self, outputs, parents, backward_fn):
        self.outputs = outputs
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed ops, replayed in reverse by backward().

    Use as a context manager around a forward pass::

        with Tape():
            loss = ...
            backward(loss)

    Clearing or discarding a tape never touches parameter values.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self) -> None:
        self._nodes.clear()

    def __enter__(self) -> "Tape":
        _STATE.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _STATE.stack.pop()
        assert popped is self, "tape context exited out of order"


class _TapeState(threading.local):
    def __init__(self):
        self.stack: list[Tape] = []


_STATE = _TapeState()


def active_tape() -> Tape | None:
    return _STATE.stack[-1] if _STATE.stack else None


def _finish(op: str, outputs: Sequence[Tensor], parents: Sequence[Tensor],
            backward_fn: Callable) -> None:
    """Register the node on the active tape when any parent needs gradients.

    Output finiteness is already enforced by the Tensor constructor.
    """
    if any(p.requires_grad for p in parents):
        for o in outputs:
            o.requires_grad = True
        tape = active_tape()
        if tape is not None:
            tape._nodes.append(_Node(tuple(outputs), tuple(parents), backward_fn))


def backward(loss: Tensor) -> None:
    """Accumulate adjoints of ``loss`` into every reachable requires_grad tensor.

    Traverses the active tape in exact reverse execution order. Repeated
    calls without zeroing gradients accumulate.
    """
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() requires an active Tape context")
    if loss.shape != ():
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")

    adjoints: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    holders: dict[int, Tensor] = {id(loss): loss}

    for node in reversed(tape._nodes):
        out_grads = []
        any_grad = False
        for out in node.outputs:
            g = adjoints.pop(id(out), None)
            holders.pop(id(out), None)
            if g is not None:
                any_grad = True
                out.accumulate_grad(g)
                out_grads.append(g)
            else:
                out_grads.append(np.zeros_like(out.data))
        if not any_grad:
            continue
        parent_grads = node.backward_fn(out_grads)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + pg
            else:
                adjoints[key] = pg
                holders[key] = parent

    # whatever is left belongs to leaves (parameters and graph inputs)
    for key, g in adjoints.items():
        holders[key].accumulate_grad(g)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    _finish("add", [out], [a, b], lambda gs: (gs[0], gs[0]))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    out = Tensor(a.data - b.data)
    _finish("sub", [out], [a, b], lambda gs: (gs[0], -gs[0]))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(gs):
        return gs[0] * b.data, gs[0] * a.data

    _finish("mul", [out], [a, b], bwd)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    out = Tensor(a.data / b.data)

    def bwd(gs):
        return gs[0] / b.data, -gs[0] * a.data / (b.data * b.data)

    _finish("div", [out], [a, b], bwd)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient flows to the constant)."""
    c = float(c)
    out = Tensor(a.data * c)
    _finish("scale", [out], [a], lambda gs: (gs[0] * c,))
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports (m,k)@(k,n), (m,k)@(k,) and (k,)@(k,n)."""
    if a.data.ndim == 2 and b.data.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
        out = Tensor(a.data @ b.data)

        def bwd(gs):
            return gs[0] @ b.data.T, a.data.T @ gs[0]

    elif a.data.ndim == 2 and b.data.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
        out = Tensor(a.data @ b.data)

        def bwd(gs):
            return np.outer(gs[0], b.data), a.data.T @ gs[0]

    elif a.data.ndim == 1 and b.data.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
        out = Tensor(a.data @ b.data)

        def bwd(gs):
            return b.data @ gs[0], np.outer(a.data, gs[0])

    else:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    _finish("matmul", [out], [a, b], bwd)
    return out


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; the adjoint splits back into the inputs."""
    if len(xs) == 0:
        raise ValueError("concat of an empty list")
    ndim = xs[0].data.ndim
    for x in xs[1:]:
        if x.data.ndim != ndim:
            raise ShapeError("concat: mixed ranks")
        for ax in range(ndim):
            if ax != axis % ndim and x.shape[ax] != xs[0].shape[ax]:
                raise ShapeError(
                    f"concat: non-concat dim {ax} differs: {x.shape} vs {xs[0].shape}")
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
    offsets = np.cumsum([x.shape[axis % ndim] for x in xs])[:-1]

    def bwd(gs):
        return tuple(np.split(gs[0], offsets, axis=axis))

    _finish("concat", [out], list(xs), bwd)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.data))
    _finish("sum_all", [out], [a], lambda gs: (np.full_like(a.data, gs[0]),))
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0 of a matrix: (n, d) -> (d,)."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows expects a matrix, got shape {a.shape}")
    n = a.shape[0]
    out = Tensor(a.data.mean(axis=0))

    def bwd(gs):
        return (np.tile(gs[0] / n, (n, 1)),)

    _finish("mean_rows", [out], [a], bwd)
    return out


# ---------------------------------------------------------------------------
# activations and related pointwise ops


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def bwd(gs):
        return (gs[0] * (a.data > 0.0),)

    _finish("relu", [out], [a], bwd)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def bwd(gs):
        return (gs[0] * (1.0 - y * y),)

    _finish("tanh", [out], [a], bwd)
    return out


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails
    y = np.where(a.data >= 0,
                 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out = Tensor(y)

    def bwd(gs):
        return (gs[0] * y * (1.0 - y),)

    _finish("sigmoid", [out], [a], bwd)
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)

    def bwd(gs):
        return (gs[0] * y,)

    _finish("exp", [out], [a], bwd)
    return out


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def apply_activation(a: Tensor, kind: str) -> Tensor:
    """Elementwise relu / tanh / sigmoid, gradient rule included."""
    if not np.all(np.isfinite(a.data)):
        raise NumericError(f"{kind}: non-finite input")
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(a)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values into [lo, hi]; gradient passes only through unclipped entries."""
    y = np.clip(a.data, lo, hi)
    out = Tensor(y)
    inside = (a.data >= lo) & (a.data <= hi)

    def bwd(gs):
        return (gs[0] * inside,)

    _finish("clamp", [out], [a], bwd)
    return out


# ---------------------------------------------------------------------------
# model-specific ops


def group_softmax(vectors: Sequence[Tensor]) -> list[Tensor]:
    """Per-coordinate softmax across a group of same-dimension vectors.

    Coordinate c of the result satisfies sum_i out_i[c] == 1. The group is
    stabilized by subtracting the per-coordinate max before exponentiation,
    which leaves both the value and the gradient unchanged.
    """
    if len(vectors) == 0:
        raise ValueError("group_softmax of an empty group")
    d = vectors[0].shape
    for v in vectors:
        if v.data.ndim != 1 or v.shape != d:
            raise ShapeError(f"group_softmax: expected ({d}) vectors, got {v.shape}")
    stacked = np.stack([v.data for v in vectors])
    shifted = stacked - stacked.max(axis=0)
    exps = np.exp(shifted)
    weights = exps / exps.sum(axis=0)
    outs = [Tensor(weights[i]) for i in range(len(vectors))]

    def bwd(gs):
        gmat = np.stack(gs)
        inner = (gmat * weights).sum(axis=0)
        dx = weights * (gmat - inner)
        return tuple(dx[i] for i in range(dx.shape[0]))

    _finish("group_softmax", outs, list(vectors), bwd)
    return outs


def dropout(a: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-rate) during training.

    Eval mode is the exact identity (returns the input tensor itself).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training:
        return a
    if rate == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep

    def bwd(gs):
        return (gs[0] * mask,)

    out = Tensor(a.data * mask)
    _finish("dropout", [out], [a], bwd)
    return out


BCE_EPS = 1e-7


def conv1d_same(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """1D convolution over time with zero padding to the input length.

    ``x`` is (frames, in_channels), ``kernels`` is (out_channels, width,
    in_channels) with odd width, ``bias`` is (out_channels,). Returns
    (frames, out_channels).
    """
    if x.data.ndim != 2 or kernels.data.ndim != 3 or bias.data.ndim != 1:
        raise ShapeError("conv1d_same: bad operand ranks")
    frames, c_in = x.shape
    c_out, width, k_in = kernels.shape
    if k_in != c_in:
        raise ShapeError(f"conv1d_same: {c_in} input channels vs kernel {k_in}")
    if bias.shape[0] != c_out:
        raise ShapeError("conv1d_same: bias/kernel channel mismatch")
    if width % 2 == 0:
        raise ShapeError("conv1d_same: kernel width must be odd")
    pad = width // 2
    padded = np.zeros((frames + width - 1, c_in))
    padded[pad:pad + frames] = x.data
    result = np.tile(bias.data, (frames, 1))
    for tap in range(width):
        result += padded[tap:tap + frames] @ kernels.data[:, tap, :].T
    out = Tensor(result)

    def bwd(gs):
        g = gs[0]
        d_padded = np.zeros_like(padded)
        d_kernels = np.zeros_like(kernels.data)
        for tap in range(width):
            d_padded[tap:tap + frames] += g @ kernels.data[:, tap, :]
            d_kernels[:, tap, :] = g.T @ padded[tap:tap + frames]
        return d_padded[pad:pad + frames], d_kernels, g.sum(axis=0)

    _finish("conv1d_same", [out], [x, kernels, bias], bwd)
    return out


def bce_loss(p: Tensor, y: int) -> Tensor:
    """Binary cross-entropy -[y ln p + (1-y) ln(1-p)] on a scalar probability.

    ``p`` is clamped to [BCE_EPS, 1-BCE_EPS] so the loss stays finite; the
    gradient is zero where the clamp is active.
    """
    if p.data.size != 1:
        raise ShapeError(f"bce_loss expects a scalar probability, got {p.shape}")
    if y not in (0, 1):
        raise ValueError(f"bce_loss label must be 0 or 1, got {y!r}")
    pv = float(p.data.reshape(())[()])
    pc = min(max(pv, BCE_EPS), 1.0 - BCE_EPS)
    loss = -(y * np.log(pc) + (1 - y) * np.log(1.0 - pc))
    out = Tensor(np.asarray(loss))
    inside = BCE_EPS <= pv <= 1.0 - BCE_EPS

    def bwd(gs):
        if not inside:
            return (np.zeros_like(p.data),)
        dp = (pc - y) / (pc * (1.0 - pc))
        return (np.full_like(p.data, gs[0] * dp),)

    _finish("bce_loss", [out], [p], bwd)
    return out
