"""Temporal channel: stacked bidirectional LSTMs over the (40, 400) waveform
fold, yielding per-timestep hidden states and a context vector.

The context vector is the concatenation of the final forward and final
backward hidden states of the last layer, so its width is twice the hidden
size and matches the projected spatial embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import DimensionError
from .tensor import Param, Tensor


@dataclass
class BiLstmLayer:
    input_size: int
    hidden: int
    fwd_w: Param          # (input+hidden, 4*hidden), gate order i,f,g,o
    fwd_b: Param          # (4*hidden,)
    bwd_w: Param
    bwd_b: Param

    @property
    def output_size(self) -> int:
        return 2 * self.hidden

    def params(self) -> list[Param]:
        return [self.fwd_w, self.fwd_b, self.bwd_w, self.bwd_b]


def init_bilstm(input_size: int, hidden: int, rng: np.random.Generator,
                name: str, dtype=np.float32) -> BiLstmLayer:
    fw, fb = tc.lstm_kernel(rng, input_size, hidden, dtype)
    bw, bb = tc.lstm_kernel(rng, input_size, hidden, dtype)
    return BiLstmLayer(
        input_size, hidden,
        Param(fw, f"{name}/fwd/w"), Param(fb, f"{name}/fwd/b"),
        Param(bw, f"{name}/bwd/w"), Param(bb, f"{name}/bwd/b"))


def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
                   w: Param, b: Param) -> tuple[Tensor, Tensor]:
    """One LSTM cell update over a (B, input) slice."""
    hidden = h_prev.data.shape[1]
    if x.data.shape[1] + hidden != w.data.shape[0]:
        raise DimensionError(
            f"cell input {x.data.shape} + hidden {h_prev.data.shape} does not "
            f"match kernel {w.data.shape}")
    z = tc.add(tc.matmul(tc.concat([x, h_prev], axis=1), w.value), b.value)
    i = tc.sigmoid(tc.slice_cols(z, 0, hidden))
    f = tc.sigmoid(tc.slice_cols(z, hidden, 2 * hidden))
    g = tc.tanh(tc.slice_cols(z, 2 * hidden, 3 * hidden))
    o = tc.sigmoid(tc.slice_cols(z, 3 * hidden, 4 * hidden))
    c = tc.add(tc.mul(f, c_prev), tc.mul(i, g))
    h = tc.mul(o, tc.tanh(c))
    return h, c


def _run_direction(inputs: list[Tensor], w: Param, b: Param, hidden: int,
                   reverse: bool) -> list[Tensor]:
    batch = inputs[0].data.shape[0]
    dtype = w.data.dtype
    h = Tensor(np.zeros((batch, hidden), dtype=dtype))
    c = Tensor(np.zeros((batch, hidden), dtype=dtype))
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    outputs: list = [None] * len(inputs)
    for t in order:
        h, c = lstm_cell_step(inputs[t], h, c, w, b)
        outputs[t] = h
    return outputs


def encode(inputs: list[Tensor], layers: list[BiLstmLayer]
           ) -> tuple[list[Tensor], Tensor]:
    """Run the stack over T per-timestep (B, input) tensors.

    Returns (hidden states per timestep, each (B, 2*hidden)) from the final
    layer, and the context vector concat(last forward, last backward).
    """
    if inputs[0].data.shape[1] != layers[0].input_size:
        raise DimensionError(
            f"sequence width {inputs[0].data.shape[1]} does not match layer-1 "
            f"input size {layers[0].input_size}")
    seq = inputs
    fwd = bwd = None
    for layer in layers:
        fwd = _run_direction(seq, layer.fwd_w, layer.fwd_b, layer.hidden, False)
        bwd = _run_direction(seq, layer.bwd_w, layer.bwd_b, layer.hidden, True)
        seq = [tc.concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
    context = tc.concat([fwd[-1], bwd[0]], axis=1)
    return seq, context


def encode_array(seq: np.ndarray, layers: list[BiLstmLayer]
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Convenience over a single (T, F) sequence; returns (H, context) arrays."""
    if seq.ndim != 2:
        raise DimensionError(f"expected a (T, F) sequence, got {seq.shape}")
    dtype = layers[0].fwd_w.data.dtype
    inputs = [Tensor(seq[t:t + 1].astype(dtype)) for t in range(seq.shape[0])]
    hs, context = encode(inputs, layers)
    h_matrix = np.concatenate([h.data for h in hs], axis=0)
    return h_matrix, context.data[0]


def param_count(layers: list[BiLstmLayer]) -> int:
    return sum(p.data.size for layer in layers for p in layer.params())


def param_count_formula(input_size: int, hidden: int) -> int:
    """Per-layer count: both directions of 4*((input+hidden)*hidden + hidden)."""
    return 2 * 4 * ((input_size + hidden) * hidden + hidden)
