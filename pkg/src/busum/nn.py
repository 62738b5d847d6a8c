"""LSTM primitives built on the autodiff tensor core."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, concat, matmul, mul, parameter, sigmoid, tanh, zeros_param


@dataclass
class LSTMWeights:
    """Fused gate weights, gate order (input, forget, candidate, output)."""

    wx: Tensor  # (in_dim, 4*hidden)
    wh: Tensor  # (hidden, 4*hidden)
    b: Tensor  # (4*hidden,)

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]

    @property
    def in_dim(self) -> int:
        return self.wx.shape[0]


def init_lstm(rng: np.random.Generator, in_dim: int, hidden: int, prefix: str) -> LSTMWeights:
    return LSTMWeights(
        wx=parameter((in_dim, 4 * hidden), rng, name=f"{prefix}.wx"),
        wh=parameter((hidden, 4 * hidden), rng, name=f"{prefix}.wh"),
        b=zeros_param((4 * hidden,), name=f"{prefix}.b"),
    )


def lstm_cell_forward(x: Tensor, h_prev: Tensor, c_prev: Tensor, weights: LSTMWeights):
    """One LSTM step: sigmoid gates, tanh candidate/output; returns (h, c)."""
    hid = weights.hidden
    if x.shape[-1] != weights.in_dim:
        raise ValueError(f"lstm_cell_forward: x has dim {x.shape[-1]}, wx expects {weights.in_dim}")
    if h_prev.shape[-1] != hid:
        raise ValueError(f"lstm_cell_forward: h_prev has dim {h_prev.shape[-1]}, wh expects {hid}")
    if c_prev.shape[-1] != hid:
        raise ValueError(f"lstm_cell_forward: c_prev has dim {c_prev.shape[-1]}, expected {hid}")
    gates = matmul(x, weights.wx) + matmul(h_prev, weights.wh) + weights.b
    i = sigmoid(gates[..., 0 * hid : 1 * hid])
    f = sigmoid(gates[..., 1 * hid : 2 * hid])
    g = tanh(gates[..., 2 * hid : 3 * hid])
    o = sigmoid(gates[..., 3 * hid : 4 * hid])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


def run_lstm(
    inputs: list[Tensor],
    weights: LSTMWeights,
    mask: np.ndarray | None = None,
    reverse: bool = False,
):
    """Run an LSTM over per-step (B, D) inputs.

    `mask` is a (B, T) 0/1 array for right-padded batches; masked steps carry
    the previous state, so the returned final (h, c) correspond to each
    example's last real token in either direction.  Returns
    (states in input order, h_final, c_final).
    """
    bsz = inputs[0].shape[0]
    hid = weights.hidden
    dtype = inputs[0].dtype
    h = Tensor(np.zeros((bsz, hid), dtype=dtype))
    c = Tensor(np.zeros((bsz, hid), dtype=dtype))
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    states: list[Tensor | None] = [None] * len(inputs)
    for t in order:
        h_new, c_new = lstm_cell_forward(inputs[t], h, c, weights)
        if mask is not None:
            m = mask[:, t : t + 1].astype(dtype)
            if m.min() < 1.0:
                h_new = mul(h_new, m) + mul(h, 1.0 - m)
                c_new = mul(c_new, m) + mul(c, 1.0 - m)
        h, c = h_new, c_new
        states[t] = h
    return states, h, c


def bilstm(
    inputs: list[Tensor],
    fwd: LSTMWeights,
    bwd: LSTMWeights,
    mask: np.ndarray | None = None,
):
    """Bidirectional pass; per-step states are [forward; backward] concatenations.

    Returns (states, (h_fwd, c_fwd), (h_bwd, c_bwd)) with finals at the real
    sequence ends.
    """
    f_states, hf, cf = run_lstm(inputs, fwd, mask=mask, reverse=False)
    b_states, hb, cb = run_lstm(inputs, bwd, mask=mask, reverse=True)
    states = [concat([f, b], axis=-1) for f, b in zip(f_states, b_states)]
    return states, (hf, cf), (hb, cb)
