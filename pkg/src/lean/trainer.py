"""Mini-batch training: BCE loss, Adam, per-epoch chunked validation, best
checkpoint by validation AUC-PR, JSONL epoch logs.

Each epoch draws one random 1-second patch per training clip (sub-second
clips tile); the validation protocol is the same chunk-and-average pipeline
used at test time. Updates are single-threaded for bit determinism.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import container, dsp, metrics
from . import tensor as tc
from .errors import ConfigError, LoadError, NumericError
from .inference import evaluate_clips
from .model import (LeanModel, ModelConfig, forward_scores, init_model,
                    load_model_bytes, serialize_model)
from .tensor import AdamState, Tape, Tensor

log = logging.getLogger("lean.trainer")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    batch_size: int = 64
    learning_rate: float = 1e-4
    epochs: int = 40
    seed: int = 0
    eval_overlap: float = 0.5
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be at least 1")
        if self.learning_rate <= 0 and self.learning_rate != 0.0:
            raise ConfigError("learning rate must be non-negative")

    @property
    def mode(self) -> str:
        return self.model.mode

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in
                   ("batch_size", "learning_rate", "epochs", "seed",
                    "eval_overlap", "eval_batch_size")}
        payload["model"] = json.loads(self.model.to_json())
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        payload = json.loads(text)
        model = ModelConfig.from_json(json.dumps(payload.pop("model")))
        return cls(model=model, **payload)


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    val_map: float | None
    val_auc_pr: float | None
    val_auc_roc: float | None
    val_dprime: float | None
    seconds: float

    def to_json(self) -> str:
        return json.dumps({
            "epoch": self.epoch, "train_loss": self.train_loss,
            "val_map": self.val_map, "val_auc_pr": self.val_auc_pr,
            "val_auc_roc": self.val_auc_roc, "val_dprime": self.val_dprime,
            "seconds": self.seconds})


@dataclass
class Checkpoint:
    container_bytes: bytes
    train_config: TrainConfig
    best_epoch: int
    best_val_auc_pr: float
    best_report: EpochReport

    def model(self) -> LeanModel:
        return load_model_bytes(self.container_bytes)


def sample_training_patch(record, rng: np.random.Generator) -> tuple:
    """One random 1-second patch; the clip's labels apply unchanged."""
    samples = record.clip.samples
    if samples.size <= dsp.PATCH_SAMPLES:
        patch = dsp.patchify(record.clip, 1.0)[0]
    else:
        offset = int(rng.integers(0, samples.size - dsp.PATCH_SAMPLES + 1))
        patch = dsp.Patch1s(samples[offset:offset + dsp.PATCH_SAMPLES].copy(),
                            record.clip_id, offset / dsp.SAMPLE_RATE)
    return patch, record.labels


def _batch_arrays(records, indices, rng, need_wave):
    mels, waves, labels = [], [], []
    for idx in indices:
        patch, label_vec = sample_training_patch(records[idx], rng)
        mels.append(dsp.log_mel(patch))
        if need_wave:
            waves.append(dsp.reshape_wave(patch))
        labels.append(label_vec)
    return (np.stack(mels), np.stack(waves) if need_wave else None,
            np.stack(labels))


def train(cfg: TrainConfig, train_records: list, val_records: list,
          log_path=None) -> tuple[Checkpoint, list]:
    if not train_records or not val_records:
        raise ConfigError("training and validation sets must be non-empty")
    c = cfg.model.num_classes
    for rec in train_records:
        if rec.labels.shape != (c,):
            raise ConfigError(
                f"clip {rec.clip_id}: label dim {rec.labels.shape} vs {c} classes")
        if rec.labels.sum() < 1:
            raise ConfigError(f"clip {rec.clip_id}: training clips need a label")

    model = init_model(cfg.model, cfg.seed)
    frozen_before = {name: arr.copy()
                     for name, arr in model.extractor_weights.arrays.items()}
    adam = AdamState(lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    need_wave = cfg.model.mode != "extractor_only"
    val_labels = np.stack([r.labels for r in val_records])
    val_clips = [r.clip for r in val_records]

    reports: list[EpochReport] = []
    best_bytes = None
    best_epoch = -1
    best_auc_pr = -np.inf
    best_report = None
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            started = time.perf_counter()
            order = rng.permutation(len(train_records))
            losses = []
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                indices = order[start:start + cfg.batch_size]
                if indices.size == 0:
                    log.warning("epoch %d: empty batch %d skipped", epoch, b)
                    continue
                try:
                    mel, wave, labels = _batch_arrays(train_records, indices,
                                                      rng, need_wave)
                    with Tape() as tape:
                        scores = forward_scores(model, mel, wave)
                        loss = tc.bce_loss(scores, Tensor(labels))
                    loss_val = loss.item()
                    if not np.isfinite(loss_val):
                        raise NumericError("loss is not finite")
                    tape.backward(loss)
                    tc.adam_step(adam, model.trainable_params())
                except NumericError as exc:
                    raise NumericError(
                        f"aborting at epoch {epoch} batch {b}: {exc}") from exc
                losses.append(loss_val)
            val_scores = evaluate_clips(model, val_clips, cfg.eval_overlap,
                                        cfg.eval_batch_size)
            val = metrics.evaluate(val_scores, val_labels)
            report = EpochReport(
                epoch=epoch,
                train_loss=float(np.mean(losses)) if losses else 0.0,
                val_map=val.mean_ap,
                val_auc_pr=val.mean_auc_pr,
                val_auc_roc=val.mean_auc_roc,
                val_dprime=val.dprime,
                seconds=time.perf_counter() - started)
            reports.append(report)
            if log_fh:
                log_fh.write(report.to_json() + "\n")
                log_fh.flush()
            log.info("epoch %d: loss %.4f, val mAP %s, val AUC-PR %s",
                     epoch, report.train_loss, report.val_map,
                     report.val_auc_pr)
            auc_pr = report.val_auc_pr
            if auc_pr is not None and auc_pr > best_auc_pr:
                best_auc_pr = auc_pr
                best_epoch = epoch
                best_bytes = serialize_model(model)
                best_report = report
    finally:
        if log_fh:
            log_fh.close()

    for name, arr in model.extractor_weights.arrays.items():
        if not np.array_equal(arr, frozen_before[name]):
            raise NumericError(f"frozen extractor tensor {name} changed")
    if best_bytes is None:
        raise ConfigError("no epoch produced a defined validation AUC-PR")
    return (Checkpoint(best_bytes, cfg, best_epoch, float(best_auc_pr),
                       best_report), reports)


def select_best(reports: list) -> int:
    """Index of the highest validation AUC-PR; ties break to the earliest."""
    if not reports:
        raise ConfigError("no epochs to select from")
    best, best_val = 0, -np.inf
    for i, report in enumerate(reports):
        value = report.val_auc_pr
        if value is not None and value > best_val:
            best, best_val = i, value
    return best


_CKPT_SCHEMA = "lean-checkpoint-v1"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    footer = {
        "schema": _CKPT_SCHEMA,
        "train_config": ckpt.train_config.to_json(),
        "best_epoch": str(ckpt.best_epoch),
        "best_val_auc_pr": repr(ckpt.best_val_auc_pr),
        "best_report": ckpt.best_report.to_json(),
    }
    blob = container.append_footer(ckpt.container_bytes, footer)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    container_bytes, footer = container.split_footer(blob)
    if footer.get("schema") != _CKPT_SCHEMA:
        raise LoadError(
            f"unsupported checkpoint schema {footer.get('schema')!r}")
    report_payload = json.loads(footer["best_report"])
    return Checkpoint(
        container_bytes=container_bytes,
        train_config=TrainConfig.from_json(footer["train_config"]),
        best_epoch=int(footer["best_epoch"]),
        best_val_auc_pr=float(footer["best_val_auc_pr"]),
        best_report=EpochReport(**report_payload))
