"""Binary model container shared by every module that persists tensors.

Layout (all integers little-endian u32 unless noted):

    magic "LEANMDL1" (8 bytes)
    meta_count, then per entry: key_len, key, val_len, val (UTF-8)
    tensor_count, then per tensor:
        name_len, name (UTF-8)
        rank, dims[rank]
        dtype tag (0 = f32, 1 = i8)
        raw row-major data
        for i8 only: scale (f32), zero_point (i32)

A checkpoint appends a footer after the container: magic "LEANFTR1",
kv_count, then key/value pairs encoded like meta. Round trips are byte-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import LoadError

MAGIC = b"LEANMDL1"
FOOTER_MAGIC = b"LEANFTR1"
DTYPE_F32 = 0
DTYPE_I8 = 1


@dataclass
class TensorEntry:
    name: str
    data: np.ndarray                  # float32 or int8
    scale: float | None = None        # i8 only
    zero_point: int | None = None     # i8 only


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise LoadError(f"truncated container at byte {self.pos} "
                            f"(wanted {n} more, have {len(self.blob) - self.pos})")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def _put_text(parts: list, s: str) -> None:
    raw = s.encode("utf-8")
    parts.append(struct.pack("<I", len(raw)))
    parts.append(raw)


def serialize(tensors: list[TensorEntry], meta: dict | None = None) -> bytes:
    parts: list[bytes] = [MAGIC]
    meta = meta or {}
    parts.append(struct.pack("<I", len(meta)))
    for key, val in meta.items():
        _put_text(parts, str(key))
        _put_text(parts, str(val))
    parts.append(struct.pack("<I", len(tensors)))
    for entry in tensors:
        arr = entry.data
        if arr.dtype == np.float32:
            tag = DTYPE_F32
        elif arr.dtype == np.int8:
            tag = DTYPE_I8
        else:
            raise LoadError(f"tensor {entry.name}: unsupported dtype {arr.dtype}")
        _put_text(parts, entry.name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<I", tag))
        parts.append(np.ascontiguousarray(arr).tobytes())
        if tag == DTYPE_I8:
            parts.append(struct.pack("<f", float(entry.scale)))
            parts.append(struct.pack("<i", int(entry.zero_point)))
    return b"".join(parts)


def deserialize(blob: bytes) -> tuple[list[TensorEntry], dict, int]:
    """Parse a container; returns (tensors, meta, bytes consumed)."""
    reader = _Reader(blob)
    if reader.take(len(MAGIC)) != MAGIC:
        raise LoadError(f"bad container magic, expected {MAGIC!r}")
    meta = {}
    for _ in range(reader.u32()):
        key = reader.text()
        meta[key] = reader.text()
    tensors = []
    for _ in range(reader.u32()):
        name = reader.text()
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        tag = reader.u32()
        count = int(np.prod(dims)) if rank else 1
        if tag == DTYPE_F32:
            raw = reader.take(4 * count)
            data = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
            tensors.append(TensorEntry(name, data))
        elif tag == DTYPE_I8:
            raw = reader.take(count)
            data = np.frombuffer(raw, dtype=np.int8).reshape(dims).copy()
            scale = struct.unpack("<f", reader.take(4))[0]
            zero_point = struct.unpack("<i", reader.take(4))[0]
            tensors.append(TensorEntry(name, data, scale, zero_point))
        else:
            raise LoadError(f"tensor {name}: unknown dtype tag {tag}")
    return tensors, meta, reader.pos


def save(path, tensors: list[TensorEntry], meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(tensors, meta))


def load(path) -> tuple[list[TensorEntry], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    tensors, meta, consumed = deserialize(blob)
    if consumed != len(blob):
        raise LoadError(f"{consumed} container bytes but file has {len(blob)}; "
                        "trailing data is not a bare container")
    return tensors, meta


def append_footer(container_blob: bytes, kv: dict) -> bytes:
    parts: list[bytes] = [container_blob, FOOTER_MAGIC, struct.pack("<I", len(kv))]
    for key, val in kv.items():
        _put_text(parts, str(key))
        _put_text(parts, str(val))
    return b"".join(parts)


def split_footer(blob: bytes) -> tuple[bytes, dict]:
    """Split checkpoint bytes into container bytes and footer key/values."""
    _, _, consumed = deserialize(blob)
    reader = _Reader(blob)
    reader.pos = consumed
    if len(blob) - consumed < len(FOOTER_MAGIC) or \
            reader.take(len(FOOTER_MAGIC)) != FOOTER_MAGIC:
        raise LoadError("missing checkpoint footer")
    kv = {}
    for _ in range(reader.u32()):
        key = reader.text()
        kv[key] = reader.text()
    if reader.pos != len(blob):
        raise LoadError(f"trailing bytes after footer at {reader.pos}")
    return blob[:consumed], kv
