"""Post-training weight quantization: symmetric per-tensor int8 with float
biases, plus size and accuracy accounting against the float model.

Weights (rank >= 2 tensors) become int8 with scale = max|x|/127 and zero
point 0; rank-1 biases stay float32. Inference dequantizes on load and
computes in float. Quantizing an already-round-tripped model is bit-stable:
the stored scale is canonicalized to the fixpoint of s -> (127*s)/127 in
float32, so re-deriving it from dequantized values reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container, metrics
from .errors import NumericError
from .inference import evaluate_clips
from .model import LeanModel, load_model_bytes, serialize_model

_F127 = np.float32(127.0)


def _canonical_scale(max_abs: float) -> np.float32:
    scale = np.float32(max_abs) / _F127
    seen = []
    for _ in range(8):
        again = (_F127 * scale) / _F127
        if again == scale:
            return scale
        if any(again == s for s in seen):
            return min(again, scale)
        seen.append(scale)
        scale = again
    return scale


@dataclass
class QuantizedTensor:
    data: np.ndarray              # int8
    scale: np.float32
    zero_point: int               # always 0 (symmetric)
    shape: tuple


def quantize_tensor(x: np.ndarray) -> QuantizedTensor:
    x = np.asarray(x, dtype=np.float32)
    if not np.all(np.isfinite(x)):
        raise NumericError("cannot quantize non-finite values")
    max_abs = float(np.abs(x).max()) if x.size else 0.0
    scale = _canonical_scale(max_abs)
    if max_abs == 0.0 or scale == 0.0:
        return QuantizedTensor(np.zeros(x.shape, dtype=np.int8),
                               np.float32(1.0), 0, x.shape)
    q = np.clip(np.round(x.astype(np.float64) / float(scale)), -127, 127)
    return QuantizedTensor(q.astype(np.int8), scale, 0, x.shape)


def dequantize_tensor(qt: QuantizedTensor) -> np.ndarray:
    return qt.data.astype(np.float32) * qt.scale


def quantize_model(model_or_bytes) -> bytes:
    """Quantized container: every rank>=2 weight int8, biases float."""
    blob = model_or_bytes if isinstance(model_or_bytes, (bytes, bytearray)) \
        else serialize_model(model_or_bytes)
    entries, meta, _ = container.deserialize(bytes(blob))
    out = []
    for entry in entries:
        if entry.data.ndim >= 2 and entry.data.dtype == np.float32:
            qt = quantize_tensor(entry.data)
            out.append(container.TensorEntry(entry.name, qt.data,
                                             float(qt.scale), qt.zero_point))
        else:
            out.append(entry)
    meta = dict(meta)
    meta["quantized"] = "int8-weights-v1"
    return container.serialize(out, meta)


def load_quantized(blob: bytes) -> LeanModel:
    """Dequantize-on-load; computation stays float32."""
    return load_model_bytes(blob)


@dataclass
class SizeReport:
    float_bytes: int
    quantized_bytes: int
    ratio: float
    module_breakdown: dict        # top-level prefix -> (float, quantized) bytes

    def to_dict(self) -> dict:
        return {
            "float_bytes": self.float_bytes,
            "quantized_bytes": self.quantized_bytes,
            "ratio": self.ratio,
            "module_breakdown": {k: {"float": f, "quantized": q}
                                 for k, (f, q) in self.module_breakdown.items()},
        }


def _entry_payload_bytes(entry: container.TensorEntry) -> int:
    if entry.data.dtype == np.int8:
        return entry.data.size + 8       # data + scale + zero point
    return 4 * entry.data.size


def size_report(float_blob: bytes, quant_blob: bytes) -> SizeReport:
    f_entries, _, _ = container.deserialize(float_blob)
    q_entries, _, _ = container.deserialize(quant_blob)
    breakdown = {}
    for fe, qe in zip(f_entries, q_entries):
        prefix = fe.name.split("/")[0]
        f_sum, q_sum = breakdown.get(prefix, (0, 0))
        breakdown[prefix] = (f_sum + _entry_payload_bytes(fe),
                             q_sum + _entry_payload_bytes(qe))
    return SizeReport(len(float_blob), len(quant_blob),
                      len(float_blob) / len(quant_blob), breakdown)


@dataclass
class DegradationReport:
    map_float: float | None
    map_quantized: float | None
    map_drop: float | None
    class_ap_delta: list          # float AP - quantized AP per class

    def to_dict(self) -> dict:
        return {"map_float": self.map_float,
                "map_quantized": self.map_quantized,
                "map_drop": self.map_drop,
                "class_ap_delta": self.class_ap_delta}


def eval_quantized(float_model: LeanModel, quant_model: LeanModel,
                   eval_records: list, overlap: float = 0.5,
                   batch_size: int = 64) -> DegradationReport:
    labels = np.stack([r.labels for r in eval_records])
    clips = [r.clip for r in eval_records]
    rep_f = metrics.evaluate(
        evaluate_clips(float_model, clips, overlap, batch_size), labels)
    rep_q = metrics.evaluate(
        evaluate_clips(quant_model, clips, overlap, batch_size), labels)
    drop = None
    if rep_f.mean_ap is not None and rep_q.mean_ap is not None:
        drop = rep_f.mean_ap - rep_q.mean_ap
    deltas = [None if (a is None or b is None) else a - b
              for a, b in zip(rep_f.class_ap, rep_q.class_ap)]
    return DegradationReport(rep_f.mean_ap, rep_q.mean_ap, drop, deltas)
