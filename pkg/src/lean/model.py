"""Assembled dual-channel model: configuration, initialization, forward pass,
parameter accounting, and container (de)serialization.

The spatial conv stack stays frozen numpy; projection, wave encoder,
attention, and head are tape-recorded params. Modes: concat, affinity,
bahdanau, extractor_only (spatial channel alone, half-width head).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container, dsp, extractor, fusion, wave_encoder
from . import tensor as tc
from .errors import ConfigError, DimensionError, LoadError
from .tensor import Param, Tensor

MODES = ("concat", "affinity", "bahdanau", "extractor_only")


@dataclass(frozen=True)
class ModelConfig:
    mode: str
    num_classes: int
    projection_units: int            # m, the joint-embedding half width
    lstm_hidden: int
    attention_units: int             # d
    extractor: extractor.ExtractorConfig
    wave_input_size: int = dsp.WAVE_COLS
    projection_trainable: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected {MODES}")
        if self.num_classes < 1:
            raise ConfigError("need at least one class")
        if self.mode != "extractor_only" and \
                self.projection_units != 2 * self.lstm_hidden:
            raise ConfigError(
                f"projection units ({self.projection_units}) must equal twice "
                f"the LSTM hidden size ({self.lstm_hidden}) so the attention "
                "dot products line up")

    @property
    def fused_size(self) -> int:
        if self.mode == "extractor_only":
            return self.projection_units
        return 2 * self.projection_units

    @classmethod
    def paper(cls, mode: str = "bahdanau", num_classes: int = 200) -> "ModelConfig":
        return cls(mode, num_classes, 256, 128, 128,
                   extractor.ExtractorConfig.mobilenet(1.0))

    @classmethod
    def desk(cls, mode: str = "bahdanau", num_classes: int = 8,
             lstm_hidden: int = 32, attention_units: int = 16) -> "ModelConfig":
        return cls(mode, num_classes, 2 * lstm_hidden, lstm_hidden,
                   attention_units, extractor.ExtractorConfig.small(64))

    def to_json(self) -> str:
        payload = asdict(self)
        payload["extractor"]["blocks"] = [list(b) for b in self.extractor.blocks]
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        payload = json.loads(text)
        ext = payload.pop("extractor")
        ext["blocks"] = tuple(tuple(b) for b in ext["blocks"])
        return cls(extractor=extractor.ExtractorConfig(**ext), **payload)


@dataclass
class LeanModel:
    config: ModelConfig
    extractor_weights: extractor.ExtractorWeights
    proj_w: Param
    proj_b: Param
    wave_layers: list                       # [BiLstmLayer], empty in extractor_only
    attention: fusion.BahdanauParams | None
    head: fusion.ClassifierHead

    def params(self) -> list[Param]:
        out = [self.proj_w, self.proj_b]
        for layer in self.wave_layers:
            out += layer.params()
        if self.attention is not None:
            out += self.attention.params()
        out += self.head.params()
        return out

    def trainable_params(self) -> list[Param]:
        return [p for p in self.params() if p.trainable]

    def param_report(self) -> dict:
        wave = wave_encoder.param_count(self.wave_layers)
        attn = self.attention.param_count() if self.attention else 0
        frozen_extractor = self.extractor_weights.param_count()
        trainable = sum(p.data.size for p in self.trainable_params())
        return {
            "extractor": frozen_extractor,
            "projection": self.proj_w.data.size + self.proj_b.data.size,
            "wave_encoder": wave,
            "attention": attn,
            "head": self.head.param_count(),
            "total": frozen_extractor + sum(p.data.size for p in self.params()),
            "trainable": trainable,
        }


def init_model(config: ModelConfig, seed: int, dtype=np.float32) -> LeanModel:
    rng = np.random.default_rng(seed)
    weights = extractor.init_extractor(config.extractor,
                                       int(rng.integers(2 ** 31)), dtype)
    proj_w, proj_b = extractor.init_projection(
        config.extractor.embedding_dim, config.projection_units, rng,
        trainable=config.projection_trainable, dtype=dtype)
    wave_layers = []
    attention = None
    if config.mode != "extractor_only":
        wave_layers = [
            wave_encoder.init_bilstm(config.wave_input_size, config.lstm_hidden,
                                     rng, "wave/l0", dtype),
            wave_encoder.init_bilstm(2 * config.lstm_hidden, config.lstm_hidden,
                                     rng, "wave/l1", dtype),
        ]
        if config.mode == "bahdanau":
            attention = fusion.init_bahdanau(config.projection_units,
                                             config.attention_units, rng, dtype)
    head = fusion.init_head(config.fused_size, config.num_classes, rng, dtype)
    return LeanModel(config, weights, proj_w, proj_b, wave_layers, attention,
                     head)


def forward_scores(model: LeanModel, mel_batch: np.ndarray,
                   wave_batch: np.ndarray | None,
                   want_detail: bool = False):
    """Score a batch: mel (B, 96, 64) and wave (B, T, F) arrays to (B, c).

    Runs on the active tape if one is open; the conv stack never records.
    """
    cfg = model.config
    dtype = model.proj_w.data.dtype
    emb = extractor.forward_embed(mel_batch, model.extractor_weights)
    e_yam = extractor.project(Tensor(np.atleast_2d(emb).astype(dtype)),
                              model.proj_w, model.proj_b)
    detail = {}
    if cfg.mode == "extractor_only":
        fused = e_yam
    else:
        if wave_batch is None:
            raise ConfigError(f"mode {cfg.mode} needs the wave channel")
        rows = [Tensor(np.ascontiguousarray(wave_batch[:, t, :], dtype=dtype))
                for t in range(wave_batch.shape[1])]
        hidden, context = wave_encoder.encode(rows, model.wave_layers)
        if cfg.mode == "concat":
            fused = fusion.fuse_concat(e_yam, context)
        elif cfg.mode == "affinity":
            attn, c_att, fused = fusion.attend_affinity(e_yam, hidden)
            detail = {"attention": attn, "context": c_att}
        else:
            attn, c_att, fused = fusion.attend_bahdanau(e_yam, hidden,
                                                        model.attention)
            detail = {"attention": attn, "context": c_att}
        detail.setdefault("context", context)
        detail["hidden"] = hidden
    scores = fusion.classify(fused, model.head)
    if want_detail:
        detail["fused"] = fused
        detail["e_yam"] = e_yam
        return scores, detail
    return scores


def model_forward(patch: dsp.Patch1s, model: LeanModel,
                  mode: str | None = None) -> np.ndarray:
    """Single-patch inference: dsp, both channels, fusion, scores (c,)."""
    if mode is not None and mode != model.config.mode:
        raise ConfigError(
            f"model was assembled for mode {model.config.mode!r}, not {mode!r}")
    mel = dsp.log_mel(patch)[None]
    wave = None
    if model.config.mode != "extractor_only":
        wave = dsp.reshape_wave(patch)[None]
    return forward_scores(model, mel, wave).data[0].copy()


def serialize_model(model: LeanModel) -> bytes:
    entries = [container.TensorEntry(f"extractor/{name}",
                                     arr.astype(np.float32, copy=False))
               for name, arr in model.extractor_weights.arrays.items()]
    entries += [container.TensorEntry(p.name, p.data.astype(np.float32,
                                                            copy=False))
                for p in model.params()]
    meta = {
        "schema": "lean-model-v1",
        "mode": model.config.mode,
        "model_config": model.config.to_json(),
    }
    return container.serialize(entries, meta)


def save_model(model: LeanModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def _dequantized(entry: container.TensorEntry) -> np.ndarray:
    if entry.data.dtype == np.int8:
        return (entry.data.astype(np.float32) - np.float32(entry.zero_point)) \
            * np.float32(entry.scale)
    return entry.data


def model_from_entries(entries: list, meta: dict) -> LeanModel:
    if meta.get("schema") != "lean-model-v1":
        raise LoadError(f"not a model container (schema={meta.get('schema')!r})")
    config = ModelConfig.from_json(meta["model_config"])
    arrays = {e.name: _dequantized(e) for e in entries}

    def take(name):
        if name not in arrays:
            raise LoadError(f"model container missing tensor {name}")
        return arrays.pop(name)

    ext_arrays = {}
    for name, shape in config.extractor.layer_shapes().items():
        arr = take(f"extractor/{name}")
        if arr.shape != shape:
            raise LoadError(f"extractor/{name}: shape {arr.shape}, "
                            f"config wants {shape}")
        ext_arrays[name] = arr
    weights = extractor.ExtractorWeights(config.extractor, ext_arrays)
    proj_w = Param(take("projection/w"), "projection/w",
                   config.projection_trainable)
    proj_b = Param(take("projection/b"), "projection/b",
                   config.projection_trainable)
    wave_layers = []
    attention = None
    if config.mode != "extractor_only":
        sizes = [config.wave_input_size, 2 * config.lstm_hidden]
        for i, input_size in enumerate(sizes):
            wave_layers.append(wave_encoder.BiLstmLayer(
                input_size, config.lstm_hidden,
                Param(take(f"wave/l{i}/fwd/w"), f"wave/l{i}/fwd/w"),
                Param(take(f"wave/l{i}/fwd/b"), f"wave/l{i}/fwd/b"),
                Param(take(f"wave/l{i}/bwd/w"), f"wave/l{i}/bwd/w"),
                Param(take(f"wave/l{i}/bwd/b"), f"wave/l{i}/bwd/b")))
        if config.mode == "bahdanau":
            attention = fusion.BahdanauParams(
                Param(take("attn/w_q"), "attn/w_q"),
                Param(take("attn/b_q"), "attn/b_q"),
                Param(take("attn/w_k"), "attn/w_k"),
                Param(take("attn/b_k"), "attn/b_k"),
                Param(take("attn/w_v"), "attn/w_v"),
                Param(take("attn/b_v"), "attn/b_v"))
    head = fusion.ClassifierHead(Param(take("head/w"), "head/w"),
                                 Param(take("head/b"), "head/b"))
    if arrays:
        raise LoadError(f"unexpected tensors in container: {sorted(arrays)}")
    return LeanModel(config, weights, proj_w, proj_b, wave_layers, attention,
                     head)


def load_model_bytes(blob: bytes) -> LeanModel:
    entries, meta, consumed = container.deserialize(blob)
    if consumed != len(blob):
        raise LoadError("trailing bytes after model container")
    return model_from_entries(entries, meta)


def load_model(path) -> LeanModel:
    entries, meta = container.load(path)
    return model_from_entries(entries, meta)
