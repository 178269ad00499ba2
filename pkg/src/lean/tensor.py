"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Every trainable computation in the model is expressed through the ops in this
module. Arrays are numpy-backed, float32 by default; float64 exists solely for
finite-difference gradient verification. A Tape and the tensors recorded on it
are confined to a single thread; replicas on distinct threads are independent.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

BCE_EPS = 1e-7  # score clamp for log stability

# When True, every op output is scanned for NaN/Inf. The trainer keeps this on;
# it is cheap relative to the matmuls at desk scale.
_strict_finite = True

_local = threading.local()


def set_strict_finite(flag: bool) -> bool:
    """Toggle per-op NaN/Inf scanning; returns the previous setting."""
    global _strict_finite
    prev = _strict_finite
    _strict_finite = bool(flag)
    return prev


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_float_array(data, dtype) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data
    return np.asarray(data, dtype=np.float32)


class Tensor:
    """A dense float array node.

    Leaves (user data, parameters) may carry gradients; op outputs are plain
    values whose gradients live only transiently inside ``Tape.backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = _as_float_array(data, dtype)
        if _strict_finite and not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in tensor {name or '<anon>'}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.is_leaf = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = self.name or ("leaf" if self.is_leaf else "op")
        return f"Tensor({tag}, shape={self.shape}, dtype={self.data.dtype})"


class Param:
    """A named, possibly frozen, trainable tensor.

    Frozen params keep an identically-zero grad buffer: backward never writes
    to them and optimizers never touch them.
    """

    def __init__(self, value, name: str, trainable: bool = True, dtype=None):
        self.value = Tensor(value, requires_grad=trainable, name=name, dtype=dtype)
        self.value.grad = np.zeros_like(self.value.data)
        self.name = name
        self.trainable = trainable

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    def zero_grad(self) -> None:
        self.value.grad[...] = 0.0

    def __repr__(self) -> str:
        kind = "trainable" if self.trainable else "frozen"
        return f"Param({self.name}, shape={self.value.shape}, {kind})"


class Tape:
    """Ordered record of executed ops; execution order is the topological order."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad.

        Visits each recorded node exactly once, in reverse execution order.
        """
        if loss.shape != ():
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}

        def deposit(t: Tensor, g: np.ndarray) -> None:
            if t.is_leaf:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
            else:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g

        if loss.is_leaf:
            deposit(loss, grads.pop(id(loss)))
            return
        for out, inputs, backward_fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                deposit(inp, gi)


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _make_out(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _strict_finite and not np.all(np.isfinite(data)):
        raise NumericError("non-finite values produced by op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    out.name = None
    out.is_leaf = False
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape._nodes.append((out, inputs, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Differentiable ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make_out(data, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make_out(data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes do not agree: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data
    return _make_out(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    shapes = [t.data.shape for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [s[axis] for s in shapes]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors)))

    return _make_out(data, tuple(tensors), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"slice_cols needs a 2-D tensor, got {a.data.shape}")
    data = a.data[:, start:stop]

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return (ga,)

    return _make_out(data, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    data = a.data.sum()
    return _make_out(np.asarray(data, dtype=a.data.dtype), (a,),
                     lambda g: (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),))


def sum_axis1(a: Tensor) -> Tensor:
    """Row sums of a 2-D tensor, keepdims: (B, n) -> (B, 1)."""
    if a.data.ndim != 2:
        raise DimensionError(f"sum_axis1 needs a 2-D tensor, got {a.data.shape}")
    data = a.data.sum(axis=1, keepdims=True)
    return _make_out(data, (a,), lambda g: (np.broadcast_to(g, a.data.shape),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = data.astype(x.dtype, copy=False)
    return _make_out(data, (a,), lambda g: (g * data * (1.0 - data),))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _make_out(data, (a,), lambda g: (g * (1.0 - data * data),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.size == 0:
        raise DomainError("softmax of an empty tensor")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make_out(data, (a,), bwd)


def bce_loss(y_hat: Tensor, y: Tensor) -> Tensor:
    """Mean binary cross entropy over all elements; scores clamped to
    [BCE_EPS, 1-BCE_EPS] before the logs."""
    if y_hat.data.shape != y.data.shape:
        raise DimensionError(
            f"bce_loss shapes do not agree: scores {y_hat.data.shape} vs "
            f"labels {y.data.shape}")
    p = np.clip(y_hat.data, BCE_EPS, 1.0 - BCE_EPS)
    t = y.data
    n = p.size
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum() / n

    def bwd(g):
        inside = (y_hat.data >= BCE_EPS) & (y_hat.data <= 1.0 - BCE_EPS)
        gp = np.where(inside, (p - t) / (p * (1.0 - p) * n), 0.0)
        return (g * gp.astype(y_hat.data.dtype), None)

    return _make_out(np.asarray(loss, dtype=y_hat.data.dtype), (y_hat, y), bwd)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam over a fixed param list; frozen params untouched."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    moments: dict = field(default_factory=dict)  # id(param) -> (m, v)

    def step(self, params: list[Param]) -> None:
        adam_step(self, params)


def adam_step(state: AdamState, params: list[Param]) -> None:
    """One Adam update on trainable params; grads are zeroed afterwards."""
    for p in params:
        if p.trainable and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in param {p.name}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        if not p.trainable:
            continue
        key = id(p)
        if key not in state.moments:
            state.moments[key] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = state.moments[key]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data[...] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.zero_grad()


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int,
                   fan_out: int, dtype=np.float32) -> np.ndarray:
    if min(shape) <= 0 or fan_in <= 0 or fan_out <= 0:
        raise DimensionError(f"zero-sized dimension in glorot shape {shape}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def orthogonal(rng: np.random.Generator, rows: int, cols: int,
               dtype=np.float32) -> np.ndarray:
    """Semi-orthogonal matrix: columns orthonormal when rows >= cols."""
    if rows <= 0 or cols <= 0:
        raise DimensionError(f"zero-sized dimension in orthogonal ({rows},{cols})")
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix sign so the result is unique
    if rows < cols:
        q = q.T
    return q[:rows, :cols].astype(dtype)


def lstm_kernel(rng: np.random.Generator, input_size: int, hidden: int,
                dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Combined (input+hidden, 4*hidden) kernel and (4*hidden,) bias.

    Gate order i, f, g, o. Input block Glorot per gate, recurrent block
    orthogonal per gate, forget-gate bias 1.
    """
    if input_size <= 0 or hidden <= 0:
        raise DimensionError(
            f"zero-sized dimension in lstm kernel ({input_size},{hidden})")
    w = np.empty((input_size + hidden, 4 * hidden), dtype=dtype)
    for gate in range(4):
        cols = slice(gate * hidden, (gate + 1) * hidden)
        w[:input_size, cols] = glorot_uniform(
            rng, (input_size, hidden), input_size, hidden, dtype)
        w[input_size:, cols] = orthogonal(rng, hidden, hidden, dtype)
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0
    return w, b


def init_params(spec: dict, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Initialize one layer from a small description, reproducibly.

    spec kinds: {"kind": "dense", "in": int, "out": int}
                {"kind": "lstm", "input": int, "hidden": int}
                {"kind": "conv", "shape": tuple, "fan_in": int, "fan_out": int}
    """
    rng = np.random.default_rng(seed)
    kind = spec["kind"]
    if kind == "dense":
        n_in, n_out = spec["in"], spec["out"]
        return {
            "w": glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype),
            "b": np.zeros(n_out, dtype=dtype),
        }
    if kind == "lstm":
        w, b = lstm_kernel(rng, spec["input"], spec["hidden"], dtype)
        return {"w": w, "b": b}
    if kind == "conv":
        return {
            "w": glorot_uniform(rng, tuple(spec["shape"]), spec["fan_in"],
                                spec["fan_out"], dtype),
            "b": np.zeros(spec["shape"][-1], dtype=dtype),
        }
    raise DomainError(f"unknown layer kind {kind!r}")


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_coord: int
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)


def grad_check(model_forward, params: list[Param], tol: float, h: float = 1e-5,
               max_coords_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``model_forward`` rebuilds the loss from scratch on every call. Params must
    be float64; truncation and round-off of the h=1e-5 central difference are
    then both well below the default tolerances.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError(f"grad_check requires float64 params ({p.name})")
        p.zero_grad()

    with Tape() as tape:
        loss = model_forward()
    tape.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}
    for p in params:
        p.zero_grad()

    entries = []
    for p in params:
        if not p.trainable:
            continue
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = gen.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        a_flat = analytic[p.name].reshape(-1)
        max_rel, worst, checked = 0.0, -1, 0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            lp = model_forward().item()
            flat[i] = orig - h
            lm = model_forward().item()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            a = a_flat[i]
            err = abs(a - numeric)
            denom = max(abs(a), abs(numeric))
            rel = 0.0 if err <= 1e-10 else err / max(denom, 1e-12)
            checked += 1
            if rel > max_rel:
                max_rel, worst = rel, int(i)
        entries.append(GradCheckEntry(p.name, max_rel, worst, checked,
                                      max_rel <= tol))
    return GradCheckReport(entries, tol)
