"""Clip-level prediction: 1-second chunks with configurable overlap, scored
and averaged into a single per-class vector; plus latency benchmarking.

`predict_clip` scores chunks one at a time (the reference path). The batched
`evaluate_clips` is what the trainer and the CLI share, so recorded validation
metrics reproduce exactly on reload.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dsp, extractor, fusion, wave_encoder
from .errors import ConfigError, DomainError
from .model import LeanModel, forward_scores, model_forward
from .tensor import Tensor


@dataclass
class ClipPrediction:
    clip_id: str
    scores: np.ndarray            # componentwise mean of chunk scores
    num_chunks: int
    chunk_scores: np.ndarray | None = None


def predict_clip(clip: dsp.WaveClip, model: LeanModel, overlap: float = 0.5,
                 keep_chunks: bool = False) -> ClipPrediction:
    """Score a whole clip: chunk, score each chunk, average."""
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must be in [0, 1), got {overlap}")
    clip = dsp.resample(clip)
    patches = dsp.patchify(clip, 1.0 - overlap)
    chunk_scores = np.stack([model_forward(p, model) for p in patches])
    return ClipPrediction(clip.clip_id, chunk_scores.mean(axis=0),
                          len(patches),
                          chunk_scores if keep_chunks else None)


def _patch_features(patch: dsp.Patch1s, need_wave: bool):
    mel = dsp.log_mel(patch)
    wave = dsp.reshape_wave(patch) if need_wave else None
    return mel, wave


def evaluate_clips(model: LeanModel, clips: list, overlap: float = 0.5,
                   batch_size: int = 64, threads: int = 1) -> np.ndarray:
    """Clip-averaged score matrix (N, c) over many clips, batched.

    Chunk order is global clip order, so results are deterministic for a
    fixed batch size; `threads` parallelizes only the pure DSP stage.
    """
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must be in [0, 1), got {overlap}")
    hop = 1.0 - overlap
    need_wave = model.config.mode != "extractor_only"
    owner = []
    patches = []
    for idx, clip in enumerate(clips):
        for patch in dsp.patchify(dsp.resample(clip), hop):
            owner.append(idx)
            patches.append(patch)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            feats = list(pool.map(lambda p: _patch_features(p, need_wave),
                                  patches))
    else:
        feats = [_patch_features(p, need_wave) for p in patches]
    c = model.config.num_classes
    sums = np.zeros((len(clips), c), dtype=np.float64)
    counts = np.zeros(len(clips), dtype=np.int64)
    for start in range(0, len(patches), batch_size):
        stop = min(start + batch_size, len(patches))
        mel = np.stack([feats[i][0] for i in range(start, stop)])
        wave = None
        if need_wave:
            wave = np.stack([feats[i][1] for i in range(start, stop)])
        scores = forward_scores(model, mel, wave).data
        for row, i in enumerate(range(start, stop)):
            sums[owner[i]] += scores[row]
            counts[owner[i]] += 1
    return (sums / counts[:, None]).astype(np.float32)


@dataclass
class LatencyReport:
    runs: int
    stage_ms: dict                 # stage -> {"median": ms, "p95": ms}
    end_to_end_ms: dict            # {"median": ms, "p95": ms}
    samples_ms: list               # raw end-to-end samples, length == runs

    @property
    def stage_sum_median(self) -> float:
        return sum(v["median"] for v in self.stage_ms.values())


def _stats(samples: np.ndarray) -> dict:
    return {"median": float(np.median(samples)),
            "p95": float(np.percentile(samples, 95))}


def bench_latency(model: LeanModel, runs: int = 100,
                  warmup: int = 5) -> LatencyReport:
    """Wall-clock per-stage and end-to-end times on a fixed random 1-s input."""
    if runs < 10:
        raise ConfigError(f"need at least 10 runs, got {runs}")
    rng = np.random.default_rng(0)
    patch = dsp.Patch1s(rng.uniform(-1, 1, dsp.PATCH_SAMPLES).astype(np.float32))
    need_wave = model.config.mode != "extractor_only"
    dtype = model.proj_w.data.dtype
    stage_names = ["dsp", "extractor", "wave_encoder", "fusion", "head"]
    stage_samples = {name: [] for name in stage_names}
    end_to_end = []

    for run in range(warmup + runs):
        t0 = time.perf_counter()
        mel = dsp.log_mel(patch)
        wave = dsp.reshape_wave(patch) if need_wave else None
        t1 = time.perf_counter()
        emb = extractor.forward_embed(mel[None], model.extractor_weights)
        t2 = time.perf_counter()
        hidden = context = None
        if need_wave:
            rows = [Tensor(wave[t:t + 1].astype(dtype))
                    for t in range(wave.shape[0])]
            hidden, context = wave_encoder.encode(rows, model.wave_layers)
        t3 = time.perf_counter()
        e_yam = extractor.project(Tensor(np.atleast_2d(emb).astype(dtype)),
                                  model.proj_w, model.proj_b)
        mode = model.config.mode
        if mode == "extractor_only":
            fused = e_yam
        elif mode == "concat":
            fused = fusion.fuse_concat(e_yam, context)
        elif mode == "affinity":
            fused = fusion.attend_affinity(e_yam, hidden)[2]
        else:
            fused = fusion.attend_bahdanau(e_yam, hidden, model.attention)[2]
        t4 = time.perf_counter()
        fusion.classify(fused, model.head)
        t5 = time.perf_counter()
        if run < warmup:
            continue
        stage_samples["dsp"].append(t1 - t0)
        stage_samples["extractor"].append(t2 - t1)
        stage_samples["wave_encoder"].append(t3 - t2)
        stage_samples["fusion"].append(t4 - t3)
        stage_samples["head"].append(t5 - t4)
        end_to_end.append(t5 - t0)

    to_ms = lambda xs: np.asarray(xs) * 1e3
    return LatencyReport(
        runs=runs,
        stage_ms={k: _stats(to_ms(v)) for k, v in stage_samples.items()},
        end_to_end_ms=_stats(to_ms(end_to_end)),
        samples_ms=[float(v) for v in to_ms(end_to_end)])


def bench_pair(float_model: LeanModel, quant_model: LeanModel,
               runs: int = 100) -> dict:
    """Float and quantized latency side by side on the same machine."""
    return {"float": bench_latency(float_model, runs),
            "quantized": bench_latency(quant_model, runs)}
