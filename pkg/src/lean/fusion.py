"""Fusing the two channels into a joint embedding and per-class scores.

Three schemes: plain concatenation of the projected embedding with the wave
context vector, parameter-free affinity attention (dot-product scores over
timesteps), and additive attention with learned query/key/value weights.
Scores are independent sigmoids per class (multi-label).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import DimensionError
from .tensor import Param, Tensor


@dataclass
class BahdanauParams:
    w_q: Param            # (m, d)
    b_q: Param            # (d,)
    w_k: Param            # (m, d)
    b_k: Param            # (d,)
    w_v: Param            # (d, 1)
    b_v: Param            # (1,) scalar bias on the scores

    def params(self) -> list[Param]:
        return [self.w_q, self.b_q, self.w_k, self.b_k, self.w_v, self.b_v]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())


def init_bahdanau(m: int, d: int, rng: np.random.Generator,
                  dtype=np.float32) -> BahdanauParams:
    return BahdanauParams(
        Param(tc.glorot_uniform(rng, (m, d), m, d, dtype), "attn/w_q"),
        Param(np.zeros(d, dtype=dtype), "attn/b_q"),
        Param(tc.glorot_uniform(rng, (m, d), m, d, dtype), "attn/w_k"),
        Param(np.zeros(d, dtype=dtype), "attn/b_k"),
        Param(tc.glorot_uniform(rng, (d, 1), d, 1, dtype), "attn/w_v"),
        Param(np.zeros(1, dtype=dtype), "attn/b_v"))


def bahdanau_param_count_formula(m: int, d: int) -> int:
    return 2 * (m * d + d) + (d + 1)


@dataclass
class ClassifierHead:
    w: Param              # (embedding, classes)
    b: Param              # (classes,)

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def param_count(self) -> int:
        return self.w.data.size + self.b.data.size


def init_head(input_size: int, classes: int, rng: np.random.Generator,
              dtype=np.float32) -> ClassifierHead:
    return ClassifierHead(
        Param(tc.glorot_uniform(rng, (input_size, classes), input_size,
                                classes, dtype), "head/w"),
        Param(np.zeros(classes, dtype=dtype), "head/b"))


def fuse_concat(e_yam: Tensor, c_t: Tensor) -> Tensor:
    """[E_yam || context]; both halves must be the same width."""
    if e_yam.data.shape[1] != c_t.data.shape[1]:
        raise DimensionError(
            f"embedding width {e_yam.data.shape[1]} vs context width "
            f"{c_t.data.shape[1]}")
    return tc.concat([e_yam, c_t], axis=1)


def _attend(e_yam: Tensor, hidden_states: list[Tensor], scores: list[Tensor]
            ) -> tuple[Tensor, Tensor, Tensor]:
    weights = tc.softmax(tc.concat(scores, axis=1), axis=1)      # (B, T)
    context = None
    for t, h_t in enumerate(hidden_states):
        term = tc.mul(tc.slice_cols(weights, t, t + 1), h_t)
        context = term if context is None else tc.add(context, term)
    return weights, context, tc.concat([e_yam, context], axis=1)


def attend_affinity(e_yam: Tensor, hidden_states: list[Tensor]
                    ) -> tuple[Tensor, Tensor, Tensor]:
    """Parameter-free scheme: scores are tanh of <E_yam, h_t> per timestep."""
    if e_yam.data.shape[1] != hidden_states[0].data.shape[1]:
        raise DimensionError(
            f"embedding width {e_yam.data.shape[1]} vs hidden width "
            f"{hidden_states[0].data.shape[1]}")
    scores = [tc.tanh(tc.sum_axis1(tc.mul(e_yam, h_t)))
              for h_t in hidden_states]
    return _attend(e_yam, hidden_states, scores)


def attend_bahdanau(e_yam: Tensor, hidden_states: list[Tensor],
                    p: BahdanauParams) -> tuple[Tensor, Tensor, Tensor]:
    """Additive scheme: per-timestep scores tanh(Q + K_t) W_v + b."""
    if e_yam.data.shape[1] != p.w_q.data.shape[0]:
        raise DimensionError(
            f"embedding width {e_yam.data.shape[1]} vs W_q {p.w_q.data.shape}")
    if hidden_states[0].data.shape[1] != p.w_k.data.shape[0]:
        raise DimensionError(
            f"hidden width {hidden_states[0].data.shape[1]} vs W_k "
            f"{p.w_k.data.shape}")
    q = tc.add(tc.matmul(e_yam, p.w_q.value), p.b_q.value)       # (B, d)
    scores = []
    for h_t in hidden_states:
        k_t = tc.add(tc.matmul(h_t, p.w_k.value), p.b_k.value)
        s_t = tc.add(tc.matmul(tc.tanh(tc.add(q, k_t)), p.w_v.value),
                     p.b_v.value)                                # (B, 1)
        scores.append(s_t)
    return _attend(e_yam, hidden_states, scores)


def classify(fused: Tensor, head: ClassifierHead) -> Tensor:
    """Independent per-class sigmoid scores."""
    if fused.data.shape[1] != head.w.data.shape[0]:
        raise DimensionError(
            f"fused width {fused.data.shape[1]} vs head {head.w.data.shape}")
    return tc.sigmoid(tc.add(tc.matmul(fused, head.w.value), head.b.value))
