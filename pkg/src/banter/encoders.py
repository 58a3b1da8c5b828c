"""Sequence encoders: a forget-gate LSTM and the convolutional audio encoder.

The LSTM runs over per-utterance representation vectors to give each dialog
position a hidden state. The audio encoder turns a variable-length frame
matrix into one fixed-width utterance vector via a width-3 convolution over
time, ReLU, and global mean pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    conv1d_same,
    matmul,
    mean_rows,
    mul,
    relu,
    sigmoid,
    tanh,
)

GATE_NAMES = ("i", "f", "g", "o")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...]) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class LstmParams:
    """Gate weights (input, forget, cell, output), recurrences, and biases."""

    w: dict[str, Tensor]  # gate -> (d_h, d_in)
    u: dict[str, Tensor]  # gate -> (d_h, d_h)
    b: dict[str, Tensor]  # gate -> (d_h,)

    @property
    def d_in(self) -> int:
        return self.w["i"].shape[1]

    @property
    def d_h(self) -> int:
        return self.w["i"].shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for gate in GATE_NAMES:
            out[f"{prefix}.w_{gate}"] = self.w[gate]
            out[f"{prefix}.u_{gate}"] = self.u[gate]
            out[f"{prefix}.b_{gate}"] = self.b[gate]
        return out


def init_lstm(d_in: int, d_h: int, rng: np.random.Generator) -> LstmParams:
    """Uniform fan-balanced weights, zero biases, forget bias +1."""
    w = {g: Tensor(glorot_uniform(rng, d_in, d_h, (d_h, d_in)), requires_grad=True)
         for g in GATE_NAMES}
    u = {g: Tensor(glorot_uniform(rng, d_h, d_h, (d_h, d_h)), requires_grad=True)
         for g in GATE_NAMES}
    b = {g: Tensor(np.full(d_h, 1.0 if g == "f" else 0.0), requires_grad=True)
         for g in GATE_NAMES}
    return LstmParams(w=w, u=u, b=b)


def lstm_step(params: LstmParams, x: Tensor, h_prev: Tensor,
              c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One forget-gate LSTM step: returns (h, c)."""
    if x.shape != (params.d_in,):
        raise ShapeError(f"lstm_step: input shape {x.shape}, "
                         f"expected ({params.d_in},)")
    if h_prev.shape != (params.d_h,) or c_prev.shape != (params.d_h,):
        raise ShapeError("lstm_step: state shape mismatch")

    def gate(name: str) -> Tensor:
        return add(add(matmul(params.w[name], x),
                       matmul(params.u[name], h_prev)), params.b[name])

    i = sigmoid(gate("i"))
    f = sigmoid(gate("f"))
    g = tanh(gate("g"))
    o = sigmoid(gate("o"))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def lstm_encode_dialog(params: LstmParams, inputs: list[Tensor]) -> list[Tensor]:
    """Run the LSTM from a zero state over the sequence; returns all h_i.

    Strictly causal: h_i never sees inputs after position i.
    """
    if len(inputs) == 0:
        raise ValueError("lstm_encode_dialog needs at least one input")
    h = Tensor(np.zeros(params.d_h))
    c = Tensor(np.zeros(params.d_h))
    hiddens = []
    for x in inputs:
        h, c = lstm_step(params, x, h, c)
        hiddens.append(h)
    return hiddens


@dataclass
class AcousticEncoderParams:
    """Time convolution kernels (channels x width x coefficients) and bias."""

    kernels: Tensor
    bias: Tensor

    @property
    def channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def coefficients(self) -> int:
        return self.kernels.shape[2]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.kernels": self.kernels, f"{prefix}.bias": self.bias}


def init_acoustic(channels: int, coefficients: int,
                  rng: np.random.Generator, width: int = 3) -> AcousticEncoderParams:
    kernels = Tensor(
        glorot_uniform(rng, coefficients * width, channels,
                       (channels, width, coefficients)),
        requires_grad=True)
    bias = Tensor(np.zeros(channels), requires_grad=True)
    return AcousticEncoderParams(kernels=kernels, bias=bias)


def acoustic_encode(params: AcousticEncoderParams, frames: np.ndarray) -> Tensor:
    """Frame matrix (F x coefficients) -> one utterance vector (channels,).

    Zero-padded width-3 convolution over time, ReLU, global mean pool.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != params.coefficients:
        raise ShapeError(
            f"acoustic_encode: frames must be F x {params.coefficients}, "
            f"got shape {frames.shape}")
    if frames.shape[0] < 1:
        raise ShapeError("acoustic_encode: empty frame matrix")
    convolved = conv1d_same(Tensor(frames), params.kernels, params.bias)
    return mean_rows(relu(convolved))
