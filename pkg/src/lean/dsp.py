"""Audio frontend: raw clips to the two model inputs.

A 1-second 16 kHz patch becomes a (96, 64) mean-normalized log-mel image for
the spatial channel and a (40, 400) row-major fold for the wave channel. All
functions here are pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

SAMPLE_RATE = 16000
PATCH_SAMPLES = 16000          # 1 second
STFT_WINDOW = 400              # 25 ms
STFT_HOP = 160                 # 10 ms
FFT_SIZE = 512
MEL_BANDS = 64
MEL_MIN_HZ = 125.0
MEL_MAX_HZ = 7500.0
LOG_OFFSET = 0.001
MEL_FRAMES = 96                # leading frames kept out of the 98 produced
WAVE_ROWS = 40
WAVE_COLS = 400


@dataclass
class WaveClip:
    """Raw mono audio, samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    clip_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.size < 1:
            raise DomainError("empty clip")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Patch1s:
    """Exactly one second of 16 kHz audio."""

    samples: np.ndarray
    source_clip_id: str = ""
    offset_seconds: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.shape != (PATCH_SAMPLES,):
            raise DimensionError(
                f"patch must hold {PATCH_SAMPLES} samples, got {self.samples.shape}")


def resample(clip: WaveClip, target_rate: int = SAMPLE_RATE) -> WaveClip:
    """Linear-interpolation resampling to target_rate."""
    if clip.sample_rate < 8000:
        raise DomainError(f"source rate {clip.sample_rate} below 8000 Hz")
    if clip.sample_rate == target_rate:
        return clip
    n_in = clip.samples.size
    n_out = int(round(n_in * target_rate / clip.sample_rate))
    positions = np.arange(n_out, dtype=np.float64) * clip.sample_rate / target_rate
    out = np.interp(positions, np.arange(n_in), clip.samples.astype(np.float64))
    return WaveClip(out.astype(np.float32), target_rate, clip.clip_id)


def _tile_to_patch(samples: np.ndarray) -> np.ndarray:
    reps = -(-PATCH_SAMPLES // samples.size)
    return np.tile(samples, reps)[:PATCH_SAMPLES]


def patchify(clip: WaveClip, hop_fraction: float = 1.0) -> list[Patch1s]:
    """Split a 16 kHz clip into 1-second patches.

    Windows advance by hop_fraction seconds; sub-second clips and any trailing
    uncovered remainder are tiled cyclically up to one second.
    """
    if not 0.0 < hop_fraction <= 1.0:
        raise ConfigError(f"hop_fraction must be in (0, 1], got {hop_fraction}")
    if clip.sample_rate != SAMPLE_RATE:
        raise DomainError(f"patchify expects {SAMPLE_RATE} Hz, got {clip.sample_rate}")
    x = clip.samples
    n = x.size
    if n < PATCH_SAMPLES:
        return [Patch1s(_tile_to_patch(x), clip.clip_id, 0.0)]
    hop = int(round(PATCH_SAMPLES * hop_fraction))
    patches = []
    start = 0
    while start + PATCH_SAMPLES <= n:
        patches.append(Patch1s(x[start:start + PATCH_SAMPLES].copy(),
                               clip.clip_id, start / SAMPLE_RATE))
        start += hop
    covered_end = int(patches[-1].offset_seconds * SAMPLE_RATE) + PATCH_SAMPLES
    if covered_end < n:
        tail = x[covered_end:]
        patches.append(Patch1s(_tile_to_patch(tail), clip.clip_id,
                               covered_end / SAMPLE_RATE))
    return patches


def _hz_to_mel(f):
    return 1127.0 * np.log(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


@dataclass
class MelFilterbank:
    """Triangular filters over rfft bins, triangles placed in mel space."""

    weights: np.ndarray          # (MEL_BANDS, FFT_SIZE//2 + 1)
    peak_bins: np.ndarray        # argmax bin per filter
    bin_freqs: np.ndarray        # Hz per rfft bin


@lru_cache(maxsize=1)
def mel_filterbank() -> MelFilterbank:
    n_bins = FFT_SIZE // 2 + 1
    bin_freqs = np.arange(n_bins) * SAMPLE_RATE / FFT_SIZE
    bin_mel = _hz_to_mel(bin_freqs)
    edges = np.linspace(_hz_to_mel(MEL_MIN_HZ), _hz_to_mel(MEL_MAX_HZ),
                        MEL_BANDS + 2)
    weights = np.zeros((MEL_BANDS, n_bins))
    for m in range(MEL_BANDS):
        lower, center, upper = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_mel - lower) / (center - lower)
        down = (upper - bin_mel) / (upper - center)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
    weights[:, 0] = 0.0  # DC never contributes
    return MelFilterbank(weights.astype(np.float32),
                         weights.argmax(axis=1), bin_freqs)


@lru_cache(maxsize=1)
def _hann_window() -> np.ndarray:
    # periodic Hann, matching streaming STFT convention
    n = np.arange(STFT_WINDOW)
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * n / STFT_WINDOW)).astype(np.float32)


def _stft_magnitude(samples: np.ndarray) -> np.ndarray:
    n_frames = (samples.size - STFT_WINDOW) // STFT_HOP + 1
    idx = np.arange(n_frames)[:, None] * STFT_HOP + np.arange(STFT_WINDOW)[None, :]
    frames = samples[idx] * _hann_window()
    return np.abs(np.fft.rfft(frames, n=FFT_SIZE, axis=1))


def log_mel_raw(patch: Patch1s) -> np.ndarray:
    """(96, 64) log-mel image before mean normalization."""
    mag = _stft_magnitude(patch.samples)              # (98, 257)
    mel = mag @ mel_filterbank().weights.T            # (98, 64)
    return np.log(mel + LOG_OFFSET)[:MEL_FRAMES].astype(np.float32)


def log_mel(patch: Patch1s) -> np.ndarray:
    """(96, 64) log-mel image, scalar patch mean subtracted."""
    raw = log_mel_raw(patch)
    return raw - raw.mean()


def reshape_wave(patch: Patch1s) -> np.ndarray:
    """Row-major fold of one second into (40, 400); lossless."""
    if patch.samples.shape != (PATCH_SAMPLES,):
        raise DimensionError(
            f"expected {PATCH_SAMPLES} samples, got {patch.samples.shape}")
    return patch.samples.reshape(WAVE_ROWS, WAVE_COLS)
