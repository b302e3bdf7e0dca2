"""Audio frontend: WAV ingestion, log mel spectrograms, patch splitting,
and synthetic class waveforms for desk-scale experiments.

All functions are pure and deterministic; randomness enters only through
explicit seeds.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, IngestionError

PCM_FULL_SCALE = 32768.0  # 16-bit two's complement


@dataclass(frozen=True)
class FrontendConfig:
    """Spectrogram settings. Frame geometry is in milliseconds."""

    sample_rate_hz: int = 16000
    frame_ms: float = 25.0
    shift_ms: float = 15.0
    mel_bins: int = 128
    fft_size: int = 512
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-10
    clip_seconds: float = 1.0

    @property
    def frame_len(self) -> int:
        return int(round(self.frame_ms * self.sample_rate_hz / 1000.0))

    @property
    def frame_shift(self) -> int:
        return int(round(self.shift_ms * self.sample_rate_hz / 1000.0))

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate_hz))

    def validate(self) -> None:
        if self.frame_len <= 0 or self.frame_shift <= 0:
            raise ConfigError("frame length and shift must be positive")
        if self.fft_size < self.frame_len:
            raise ConfigError(f"fft_size {self.fft_size} < frame length {self.frame_len}")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            raise ConfigError("mel range must satisfy 0 <= fmin < fmax <= nyquist")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate_hz: int


@dataclass
class LogMelSpectrogram:
    data: np.ndarray  # (S_f, S_t)

    @property
    def s_f(self) -> int:
        return self.data.shape[0]

    @property
    def s_t(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PatchGrid:
    s_f: int
    s_t: int
    d: int
    rows: int
    cols: int

    @property
    def z(self) -> int:
        return self.rows * self.cols


@dataclass
class PatchSequence:
    """Row-major (frequency-major, then time) list of flattened patches."""

    patches: np.ndarray  # (Z, s_f * s_t)
    grid: PatchGrid


# ---------------------------------------------------------------------------
# WAV files


def load_wav(path, expected_rate_hz: int = 16000) -> Waveform:
    """Read a mono 16-bit PCM RIFF file; samples scaled by 1/32768."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as e:
        raise IngestionError(f"{path}: not a readable PCM WAV file ({e})") from e
    if channels != 1:
        raise IngestionError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise IngestionError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != expected_rate_hz:
        raise IngestionError(f"{path}: sample rate {rate} Hz, expected {expected_rate_hz} Hz")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_FULL_SCALE
    if samples.size == 0:
        raise IngestionError(f"{path}: contains no samples")
    return Waveform(samples=samples, sample_rate_hz=rate)


def write_wav(path, w: Waveform) -> None:
    ints = np.clip(np.rint(w.samples * PCM_FULL_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate_hz)
        wf.writeframes(ints.tobytes())


# ---------------------------------------------------------------------------
# log mel spectrogram


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular mel filters (peak 1.0), shape (mel_bins, fft_size//2 + 1)."""
    n_bins = cfg.fft_size // 2 + 1
    freqs = np.arange(n_bins) * cfg.sample_rate_hz / cfg.fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.mel_bins + 2))
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / np.maximum(ctr - lo, 1e-12)
    falling = (hi - freqs[None, :]) / np.maximum(hi - ctr, 1e-12)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel_spectrogram(w: Waveform, cfg: FrontendConfig) -> LogMelSpectrogram:
    """ln(mel power + log_floor) over Hann-windowed frames.

    Frames lie fully inside the signal: S_t = 1 + (len - frame_len) // shift.
    """
    n = w.samples.size
    frame_len, shift = cfg.frame_len, cfg.frame_shift
    if n < frame_len:
        raise IngestionError(f"clip of {n} samples shorter than one {frame_len}-sample frame")
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, frame_len)[::shift]
    # periodic Hann
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(frame_len) / frame_len)
    spectrum = np.fft.rfft(frames * window, n=cfg.fft_size, axis=1)
    powers = spectrum.real**2 + spectrum.imag**2
    mel = powers @ mel_filterbank(cfg).T
    return LogMelSpectrogram(data=np.log(mel + cfg.log_floor).T.copy())


def fit_to_length(w: Waveform, num_samples: int) -> Waveform:
    """Center-crop or zero-pad so every clip yields the same frame count."""
    n = w.samples.size
    if n == num_samples:
        return w
    if n > num_samples:
        start = (n - num_samples) // 2
        return Waveform(w.samples[start : start + num_samples].copy(), w.sample_rate_hz)
    pad = num_samples - n
    left = pad // 2
    out = np.zeros(num_samples)
    out[left : left + n] = w.samples
    return Waveform(out, w.sample_rate_hz)


# ---------------------------------------------------------------------------
# patch splitting


def patch_counts(big_f: int, big_t: int, s_f: int, s_t: int, d: int) -> PatchGrid:
    """Patch grid at stride d: rows*cols sub-spectra of size s_f x s_t."""
    if d < 1:
        raise DimensionError(f"stride must be >= 1, got {d}")
    if s_f > big_f or s_t > big_t:
        raise DimensionError(f"patch {s_f}x{s_t} larger than spectrum {big_f}x{big_t}")
    if s_f < 1 or s_t < 1:
        raise DimensionError(f"patch extents must be positive, got {s_f}x{s_t}")
    rows = (big_f - s_f) // d + 1
    cols = (big_t - s_t) // d + 1
    return PatchGrid(s_f=s_f, s_t=s_t, d=d, rows=rows, cols=cols)


def patch_split(lms: LogMelSpectrogram, s_f: int, s_t: int, d: int) -> PatchSequence:
    grid = patch_counts(lms.s_f, lms.s_t, s_f, s_t, d)
    patches = np.empty((grid.z, s_f * s_t))
    k = 0
    for i in range(grid.rows):
        for j in range(grid.cols):
            patches[k] = lms.data[i * d : i * d + s_f, j * d : j * d + s_t].ravel()
            k += 1
    return PatchSequence(patches=patches, grid=grid)


# ---------------------------------------------------------------------------
# synthetic classes


@dataclass(frozen=True)
class SynthConfig:
    """Class c is a harmonic stack on a fundamental geometrically spaced
    between base_freq_hz and max_freq_hz, so distinct classes occupy
    disjoint mel bands."""

    num_classes: int = 10
    sample_rate_hz: int = 16000
    clip_seconds: float = 1.0
    base_freq_hz: float = 220.0
    max_freq_hz: float = 4000.0
    noise_amplitude: float = 0.02
    harmonic_amps: tuple = (1.0, 0.45, 0.2)
    peak: float = 0.9

    def fundamental(self, class_id: int) -> float:
        if self.num_classes == 1:
            return self.base_freq_hz
        ratio = self.max_freq_hz / self.base_freq_hz
        return self.base_freq_hz * ratio ** (class_id / (self.num_classes - 1))


def synth_class_waveform(class_id: int, instance_seed: int, cfg: SynthConfig) -> Waveform:
    """Deterministic per (class_id, instance_seed) harmonic-plus-noise clip."""
    if not 0 <= class_id < cfg.num_classes:
        raise ConfigError(f"class_id {class_id} out of range for {cfg.num_classes} classes")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((class_id, instance_seed))))
    n = int(round(cfg.clip_seconds * cfg.sample_rate_hz))
    t = np.arange(n) / cfg.sample_rate_hz
    f0 = cfg.fundamental(class_id) * (1.0 + 0.01 * rng.uniform(-1.0, 1.0))
    x = np.zeros(n)
    for k, amp in enumerate(cfg.harmonic_amps, start=1):
        freq = k * f0
        if freq >= 0.475 * cfg.sample_rate_hz:  # keep clear of Nyquist
            continue
        jitter = 1.0 + 0.1 * rng.uniform(-1.0, 1.0)
        x += amp * jitter * np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))
    if cfg.noise_amplitude > 0:
        x += cfg.noise_amplitude * rng.standard_normal(n)
    top = np.max(np.abs(x))
    if top > 0:
        x *= cfg.peak / top
    return Waveform(samples=x, sample_rate_hz=cfg.sample_rate_hz)


# ---------------------------------------------------------------------------
# manifests

MANIFEST_HEADER = ["path", "label", "split"]
VALID_SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    split: str


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such manifest")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise IngestionError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}")
        rows = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestionError(f"{path}:{ln}: expected 3 fields, got {len(row)}")
            p, label, split = row
            if split not in VALID_SPLITS:
                raise IngestionError(f"{path}:{ln}: split must be train or test, got {split!r}")
            rows.append(ManifestRow(path=p, label=label, split=split))
    return rows


def write_manifest(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in rows:
            writer.writerow([r.path, r.label, r.split])
