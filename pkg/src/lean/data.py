"""WAV decoding, manifest/vocabulary parsing, and the synthetic multi-label
corpus generator used for desk-scale end-to-end runs.

Manifest CSV: header ``fname,labels,split`` with the multi-label field quoted
(RFC 4180); vocabulary CSV: ``index,label``. WAV support covers RIFF PCM
16-bit and 32-bit float, mono or stereo (stereo downmixed by mean).
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, WaveClip
from .errors import ConfigError, DomainError, LoadError


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

def read_wav(path) -> WaveClip:
    """Decode a RIFF/WAVE file into normalized mono samples."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise LoadError(f"{path}: not a RIFF/WAVE file (offset 0)")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        chunk_id = blob[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", blob, pos + 4)
        body_start = pos + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body_start + 16 > len(blob):
                raise LoadError(f"{path}: malformed fmt chunk at offset {pos}")
            fmt = struct.unpack_from("<HHIIHH", blob, body_start)
        elif chunk_id == b"data":
            if body_start + chunk_size > len(blob):
                raise LoadError(
                    f"{path}: data chunk at offset {pos} claims {chunk_size} "
                    f"bytes but file ends at {len(blob)}")
            data = blob[body_start:body_start + chunk_size]
        pos = body_start + chunk_size + (chunk_size & 1)
    if fmt is None or data is None:
        raise LoadError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise LoadError(f"{path}: {channels} channels unsupported")
    if audio_format == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
    else:
        raise LoadError(
            f"{path}: unsupported codec (format {audio_format}, {bits}-bit)")
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    if samples.size == 0:
        raise DomainError(f"{path}: no samples")
    return WaveClip(samples, rate, Path(path).stem)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """16-bit PCM mono writer (corpus generation and test helper)."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    body = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate,
                                    sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(body))
    Path(path).write_bytes(header + body)


# ---------------------------------------------------------------------------
# Vocabulary and manifest
# ---------------------------------------------------------------------------

@dataclass
class Vocabulary:
    names: list

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def vector(self, labels) -> np.ndarray:
        vec = np.zeros(self.size, dtype=np.float32)
        for label in labels:
            if label not in self.names:
                raise LoadError(f"label {label!r} not in vocabulary")
            vec[self.names.index(label)] = 1.0
        return vec

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "label"])
            for i, name in enumerate(self.names):
                writer.writerow([i, name])

    @classmethod
    def load(cls, path) -> "Vocabulary":
        names = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["index", "label"]:
                raise LoadError(f"{path}: bad vocabulary header {header}")
            for row in reader:
                if len(row) != 2 or int(row[0]) != len(names):
                    raise LoadError(f"{path}: non-dense vocabulary row {row}")
                names.append(row[1])
        if len(set(names)) != len(names):
            raise LoadError(f"{path}: duplicate class names")
        return cls(names)


@dataclass
class ManifestRow:
    fname: str
    labels: list
    split: str


@dataclass
class Manifest:
    rows: list

    def split(self, name: str) -> list:
        return [r for r in self.rows if r.split == name]

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fname", "labels", "split"])
            for row in self.rows:
                writer.writerow([row.fname, ",".join(row.labels), row.split])


def load_manifest(csv_path, vocab_path) -> tuple[Manifest, Vocabulary]:
    vocab = Vocabulary.load(vocab_path)
    rows = []
    seen = set()
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["fname", "labels", "split"]:
            raise LoadError(f"{csv_path}: bad manifest header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise LoadError(f"{csv_path}:{lineno}: expected 3 fields")
            fname, label_field, split = row
            labels = [v for v in label_field.split(",") if v]
            if not labels:
                raise LoadError(
                    f"{csv_path}:{lineno}: {fname} has no labels (weak labels "
                    "require at least one)")
            for label in labels:
                if label not in vocab.names:
                    raise LoadError(
                        f"{csv_path}:{lineno}: unknown label {label!r}")
            key = (split, fname)
            if key in seen:
                raise LoadError(f"{csv_path}:{lineno}: duplicate fname {fname} "
                                f"in split {split}")
            seen.add(key)
            rows.append(ManifestRow(fname, labels, split))
    return Manifest(rows), vocab


def label_matrix(rows: list, vocab: Vocabulary) -> np.ndarray:
    return np.stack([vocab.vector(r.labels) for r in rows])


@dataclass
class ClipRecord:
    clip_id: str
    clip: WaveClip
    labels: np.ndarray


def load_split(data_dir, split: str) -> tuple[list, Vocabulary]:
    """Read every clip of one split into memory, resampled to 16 kHz."""
    data_dir = Path(data_dir)
    manifest, vocab = load_manifest(data_dir / "manifest.csv",
                                    data_dir / "vocab.csv")
    records = []
    from .dsp import resample
    for row in manifest.split(split):
        clip = resample(read_wav(data_dir / row.fname))
        records.append(ClipRecord(row.fname, clip, vocab.vector(row.labels)))
    if not records:
        raise ConfigError(f"split {split!r} is empty in {data_dir}")
    return records, vocab


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

_FAMILIES = ("tone", "chirp", "amnoise", "click")


@dataclass(frozen=True)
class ClassDef:
    name: str
    family: str
    band: tuple            # (low Hz, high Hz), disjoint across classes
    mod_rate: float        # AM/click repetition rate, family-dependent


@dataclass
class SynthSpec:
    num_classes: int = 8
    clips_per_split: dict = field(default_factory=lambda: {
        "train": 2000, "val": 400, "eval": 400})
    duration_range: tuple = (0.3, 3.0)
    max_labels: int = 2
    noise_level: float = 0.01
    event_fill: tuple = (0.5, 1.0)   # event length as a fraction of the clip
    seed: int = 0

    def classes(self) -> list:
        # log-spaced disjoint bands between 150 Hz and 6 kHz
        edges = np.geomspace(150.0, 6000.0, self.num_classes + 1)
        out = []
        for i in range(self.num_classes):
            family = _FAMILIES[i % len(_FAMILIES)]
            out.append(ClassDef(f"{family}_{i:02d}", family,
                                (float(edges[i]), float(edges[i + 1])),
                                mod_rate=4.0 + 3.0 * (i % 3)))
        return out


def _synth_event(cdef: ClassDef, n: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    lo, hi = cdef.band
    if cdef.family == "tone":
        f = rng.uniform(lo * 1.1, hi * 0.9)
        return np.sin(2 * np.pi * f * t)
    if cdef.family == "chirp":
        f0 = rng.uniform(lo * 1.05, lo * 1.3)
        f1 = rng.uniform(hi * 0.7, hi * 0.95)
        if rng.random() < 0.5:
            f0, f1 = f1, f0
        phase = 2 * np.pi * (f0 * t + (f1 - f0) * t * t / (2 * t[-1] + 1e-9))
        return np.sin(phase)
    if cdef.family == "amnoise":
        noise = rng.standard_normal(n)
        spectrum = np.fft.rfft(noise)
        freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
        spectrum[(freqs < lo) | (freqs > hi)] = 0.0
        band = np.fft.irfft(spectrum, n)
        band /= max(np.abs(band).max(), 1e-9)
        envelope = 0.55 + 0.45 * np.sin(2 * np.pi * cdef.mod_rate * t)
        return band * envelope
    # click: resonant pings at mod_rate, ringing at the band center
    f = math.sqrt(lo * hi)
    period = int(SAMPLE_RATE / cdef.mod_rate)
    out = np.zeros(n)
    ring_len = min(int(0.04 * SAMPLE_RATE), n)
    ring_t = np.arange(ring_len) / SAMPLE_RATE
    ring = np.exp(-ring_t / 0.012) * np.sin(2 * np.pi * f * ring_t)
    for start in range(0, n, period):
        take = min(ring_len, n - start)
        out[start:start + take] += ring[:take]
    return out


def _synth_clip(spec: SynthSpec, classes: list, rng: np.random.Generator
                ) -> tuple[np.ndarray, list]:
    dur = rng.uniform(*spec.duration_range)
    n = int(round(dur * SAMPLE_RATE))
    k = int(rng.integers(1, spec.max_labels + 1))
    chosen = rng.choice(len(classes), size=k, replace=False)
    mix = np.zeros(n)
    for idx in sorted(chosen):
        cdef = classes[idx]
        fill = rng.uniform(*spec.event_fill)
        length = max(int(n * fill), int(0.2 * SAMPLE_RATE))
        length = min(length, n)
        start = int(rng.integers(0, n - length + 1))
        gain = rng.uniform(0.3, 0.8)
        mix[start:start + length] += gain * _synth_event(cdef, length, rng)
    mix += spec.noise_level * rng.standard_normal(n)
    peak = np.abs(mix).max()
    if peak > 0.98:
        mix *= 0.95 / peak
    return mix.astype(np.float32), [classes[i].name for i in sorted(chosen)]


def synth_generate(spec: SynthSpec, out_dir) -> tuple[Manifest, Vocabulary]:
    """Write a seeded, reproducible corpus: WAVs + manifest + vocabulary."""
    if spec.num_classes < 2:
        raise ConfigError("need at least two classes")
    if not 1 <= spec.max_labels <= spec.num_classes:
        raise ConfigError("max_labels must be in [1, num_classes]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    classes = spec.classes()
    vocab = Vocabulary([c.name for c in classes])
    rng = np.random.default_rng(spec.seed)
    rows = []
    for split in ("train", "val", "eval"):
        for i in range(spec.clips_per_split.get(split, 0)):
            samples, labels = _synth_clip(spec, classes, rng)
            fname = f"{split}_{i:05d}.wav"
            write_wav(out_dir / fname, samples)
            rows.append(ManifestRow(fname, labels, split))
    manifest = Manifest(rows)
    manifest.save(out_dir / "manifest.csv")
    vocab.save(out_dir / "vocab.csv")
    return manifest, vocab
