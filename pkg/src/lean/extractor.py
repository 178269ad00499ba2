"""Spatial channel: frozen depthwise-separable conv stack over the log-mel
patch, global average pooling, and the trainable projection layer.

The conv stack is forward-only (inference-mode folded batch norm, plain
numpy, never on tape); only the projection participates in training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from . import tensor as tc
from .errors import ConfigError, DimensionError, LoadError
from .tensor import Param, Tensor

# MobileNet-style body: (pointwise output channels, depthwise stride)
_FULL_BLOCKS = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
                (512, 1), (512, 1), (512, 1), (512, 1), (512, 1),
                (1024, 2), (1024, 1)]
_FULL_STEM = 32


def _scaled(channels: int, width: float) -> int:
    return max(1, int(round(channels * width)))


@dataclass(frozen=True)
class ExtractorConfig:
    """Conv stack description: a 3x3 stem then depthwise+pointwise blocks."""

    stem_channels: int
    stem_stride: int
    blocks: tuple                      # ((out_channels, stride), ...)
    width_multiplier: float = 1.0

    def __post_init__(self):
        if self.embedding_dim < 8:
            raise ConfigError(
                f"embedding dim {self.embedding_dim} below the minimum of 8")
        if self.stem_channels <= 0 or any(c <= 0 for c, _ in self.blocks):
            raise ConfigError("channel counts must be positive")

    @property
    def embedding_dim(self) -> int:
        return self.blocks[-1][0]

    @classmethod
    def mobilenet(cls, width_multiplier: float = 1.0) -> "ExtractorConfig":
        """The full 13-block body; width 1.0 gives the 1024-dim embedding."""
        if not 0.0 < width_multiplier <= 1.0:
            raise ConfigError(f"width multiplier {width_multiplier} not in (0, 1]")
        blocks = tuple((_scaled(c, width_multiplier), s) for c, s in _FULL_BLOCKS)
        return cls(_scaled(_FULL_STEM, width_multiplier), 2, blocks,
                   width_multiplier)

    @classmethod
    def small(cls, embedding_dim: int = 64) -> "ExtractorConfig":
        """Shallow desk-scale stack ending in the requested embedding size."""
        return cls(8, 2, ((16, 2), (32, 2), (embedding_dim, 2)), 1.0)

    def layer_names(self) -> list[str]:
        names = ["stem/w", "stem/b"]
        for i in range(len(self.blocks)):
            names += [f"block{i:02d}/dw_w", f"block{i:02d}/dw_b",
                      f"block{i:02d}/pw_w", f"block{i:02d}/pw_b"]
        return names

    def layer_shapes(self) -> dict[str, tuple]:
        shapes = {"stem/w": (3, 3, 1, self.stem_channels),
                  "stem/b": (self.stem_channels,)}
        c_in = self.stem_channels
        for i, (c_out, _) in enumerate(self.blocks):
            shapes[f"block{i:02d}/dw_w"] = (3, 3, c_in)
            shapes[f"block{i:02d}/dw_b"] = (c_in,)
            shapes[f"block{i:02d}/pw_w"] = (c_in, c_out)
            shapes[f"block{i:02d}/pw_b"] = (c_out,)
            c_in = c_out
        return shapes


@dataclass
class ExtractorWeights:
    config: ExtractorConfig
    arrays: dict                      # name -> ndarray, folded-BN form

    def param_count(self) -> int:
        return sum(a.size for a in self.arrays.values())


def param_count(config: ExtractorConfig) -> int:
    return sum(int(np.prod(s)) for s in config.layer_shapes().values())


def init_extractor(config: ExtractorConfig, seed: int,
                   dtype=np.float32) -> ExtractorWeights:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in config.layer_shapes().items():
        if name.endswith("/b"):
            arrays[name] = np.zeros(shape, dtype=dtype)
        elif name.endswith("dw_w"):
            fan = 9
            arrays[name] = tc.glorot_uniform(rng, shape, fan, fan, dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            arrays[name] = tc.glorot_uniform(rng, shape, fan_in, shape[-1], dtype)
    return ExtractorWeights(config, arrays)


def _pad_same(x: np.ndarray, stride: int, k: int = 3) -> np.ndarray:
    pads = []
    for size in x.shape[1:3]:
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        pads.append((total // 2, total - total // 2))
    return np.pad(x, ((0, 0), pads[0], pads[1], (0, 0)))


def _windows(x: np.ndarray, stride: int) -> np.ndarray:
    padded = _pad_same(x, stride)
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    return win[:, ::stride, ::stride]          # (B, H', W', C, 3, 3)


def _conv_stem(x, w, b, stride):
    win = _windows(x, stride)
    out = np.einsum("bijcuv,uvco->bijo", win, w, optimize=True)
    return np.maximum(out + b, 0.0)


def _conv_depthwise(x, w, b, stride):
    win = _windows(x, stride)
    out = np.einsum("bijcuv,uvc->bijc", win, w, optimize=True)
    return np.maximum(out + b, 0.0)


def _conv_pointwise(x, w, b):
    out = np.tensordot(x, w, axes=([3], [0]))
    return np.maximum(out + b, 0.0)


def forward_embed(patches: np.ndarray, weights: ExtractorWeights) -> np.ndarray:
    """Log-mel patches (B, 96, 64) or (96, 64) to embeddings (B, d) or (d,)."""
    single = patches.ndim == 2
    x = patches[None] if single else patches
    dtype = weights.arrays["stem/w"].dtype
    x = x.astype(dtype, copy=False)[..., None]            # (B, H, W, 1)
    arrays = weights.arrays
    x = _conv_stem(x, arrays["stem/w"], arrays["stem/b"],
                   weights.config.stem_stride)
    for i, (_, stride) in enumerate(weights.config.blocks):
        x = _conv_depthwise(x, arrays[f"block{i:02d}/dw_w"],
                            arrays[f"block{i:02d}/dw_b"], stride)
        x = _conv_pointwise(x, arrays[f"block{i:02d}/pw_w"],
                            arrays[f"block{i:02d}/pw_b"])
    emb = x.mean(axis=(1, 2))
    return emb[0] if single else emb


def init_projection(embedding_dim: int, units: int, rng: np.random.Generator,
                    trainable: bool = True, dtype=np.float32) -> tuple[Param, Param]:
    w = Param(tc.glorot_uniform(rng, (embedding_dim, units), embedding_dim,
                                units, dtype), "projection/w", trainable)
    b = Param(np.zeros(units, dtype=dtype), "projection/b", trainable)
    return w, b


def project(embedding, proj_w: Param, proj_b: Param) -> Tensor:
    """Linear projection to the joint-embedding width; no activation."""
    e = embedding if isinstance(embedding, Tensor) else Tensor(
        np.atleast_2d(embedding))
    if e.data.shape[1] != proj_w.data.shape[0]:
        raise DimensionError(
            f"embedding width {e.data.shape[1]} vs projection "
            f"{proj_w.data.shape}")
    return tc.add(tc.matmul(e, proj_w.value), proj_b.value)


def projection_param_count(embedding_dim: int, units: int) -> int:
    return embedding_dim * units + units


def save_weights(weights: ExtractorWeights, path) -> None:
    entries = [container.TensorEntry(name, arr.astype(np.float32, copy=False))
               for name, arr in weights.arrays.items()]
    meta = {
        "kind": "extractor",
        "stem_channels": str(weights.config.stem_channels),
        "stem_stride": str(weights.config.stem_stride),
        "blocks": ";".join(f"{c},{s}" for c, s in weights.config.blocks),
        "width_multiplier": repr(weights.config.width_multiplier),
    }
    container.save(path, entries, meta)


def config_from_meta(meta: dict) -> ExtractorConfig:
    try:
        blocks = tuple(tuple(int(v) for v in item.split(","))
                       for item in meta["blocks"].split(";"))
        return ExtractorConfig(int(meta["stem_channels"]),
                               int(meta["stem_stride"]), blocks,
                               float(meta.get("width_multiplier", 1.0)))
    except (KeyError, ValueError) as exc:
        raise LoadError(f"bad extractor metadata: {exc}") from exc


def load_weights(path) -> ExtractorWeights:
    entries, meta = container.load(path)
    if meta.get("kind") != "extractor":
        raise LoadError(f"not an extractor container (kind={meta.get('kind')!r})")
    config = config_from_meta(meta)
    expected = config.layer_shapes()
    arrays = {}
    for entry in entries:
        if entry.name not in expected:
            raise LoadError(f"unexpected tensor {entry.name}")
        if entry.data.shape != expected[entry.name]:
            raise LoadError(
                f"layer {entry.name}: shape {entry.data.shape}, "
                f"config wants {expected[entry.name]}")
        arrays[entry.name] = entry.data
    missing = set(expected) - set(arrays)
    if missing:
        raise LoadError(f"missing layers: {sorted(missing)}")
    return ExtractorWeights(config, arrays)
