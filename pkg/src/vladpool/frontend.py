"""Audio front-end: PCM WAV I/O, log spectrogram with energy row, energy VAD, crops."""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import FrontendConfig


class InvalidInputError(ValueError):
    pass


class UnsupportedFormatError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise InvalidInputError("audio clip is empty")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("audio clip contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise InvalidInputError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass
class Spectrogram:
    """F x T log-spectral features; the last row is log frame energy."""

    data: np.ndarray
    frame_shift_ms: float = 10.0

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def read_wav(path) -> AudioClip:
    """Read 16-bit signed little-endian mono PCM."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise UnsupportedFormatError(f"{path}: {w.getnchannels()} channels, only mono supported")
            if w.getsampwidth() != 2:
                raise UnsupportedFormatError(f"{path}: {8 * w.getsampwidth()}-bit samples, only 16-bit supported")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from None
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(pcm.tobytes())


def n_frames_for(n_samples: int, cfg: FrontendConfig) -> int:
    return math.ceil(n_samples / cfg.shift_samples)


def frame_signal(samples: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Slice into T x window frames, reflect-padding the tail so T = ceil(len / shift)."""
    hop, win = cfg.shift_samples, cfg.window_samples
    t = n_frames_for(samples.size, cfg)
    need = (t - 1) * hop + win
    if need > samples.size:
        samples = np.pad(samples, (0, need - samples.size), mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(samples, win)[::hop]
    return frames[:t]


def stft_spectrogram(clip: AudioClip, cfg: FrontendConfig | None = None) -> Spectrogram:
    cfg = cfg or FrontendConfig()
    if clip.sample_rate_hz != cfg.sample_rate_hz:
        raise InvalidInputError(
            f"sample rate {clip.sample_rate_hz} Hz != configured {cfg.sample_rate_hz} Hz (no resampling)")
    frames = frame_signal(clip.samples, cfg) * np.hamming(cfg.window_samples)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)[:, :cfg.n_spectral_bins]) ** 2
    rows = [np.log(power + cfg.log_floor).T]
    if cfg.include_energy:
        energy = np.sum(frames ** 2, axis=1)
        rows.append(np.log(energy + cfg.log_floor)[None, :])
    return Spectrogram(np.concatenate(rows, axis=0), cfg.shift_ms)


def energy_vad(clip: AudioClip, threshold_db: float = -40.0, min_segment_ms: int = 100,
               frame_ms: float = 10.0) -> list[tuple[int, int]]:
    """Speech regions as ``(start, end)`` sample ranges.

    Non-overlapping ``frame_ms`` frames whose RMS (dB re full scale) reaches
    ``threshold_db`` are kept; runs of kept frames shorter than
    ``min_segment_ms`` are dropped.
    """
    if not math.isfinite(threshold_db):
        raise InvalidInputError("threshold_db must be finite")
    x = clip.samples
    hop = max(1, int(round(clip.sample_rate_hz * frame_ms / 1000.0)))
    n = math.ceil(x.size / hop)
    padded = np.zeros(n * hop)
    padded[:x.size] = x
    counts = np.full(n, hop)
    counts[-1] = x.size - (n - 1) * hop
    rms = np.sqrt(np.sum(padded.reshape(n, hop) ** 2, axis=1) / counts)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(rms)
    voiced = db >= threshold_db

    min_len = min_segment_ms * clip.sample_rate_hz / 1000.0
    segments = []
    edges = np.flatnonzero(np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]])))
    for a, b in zip(edges[::2], edges[1::2]):
        start, end = int(a) * hop, min(int(b) * hop, x.size)
        if end - start >= min_len:
            segments.append((start, end))
    return segments


def random_crop(spec: Spectrogram, frames: int, rng: np.random.Generator) -> Spectrogram:
    """Uniform random contiguous window; short inputs are tiled cyclically first."""
    if frames < 1:
        raise InvalidInputError("crop length must be >= 1")
    t = spec.n_frames
    if t < frames:
        idx = np.arange(frames) % t
        return Spectrogram(spec.data[:, idx], spec.frame_shift_ms)
    start = int(rng.integers(0, t - frames + 1))
    return Spectrogram(spec.data[:, start:start + frames], spec.frame_shift_ms)


def write_spectrogram_dump(path, spec: Spectrogram) -> None:
    """Text dump: header ``F T frame_shift_ms`` then F rows of T values."""
    with open(path, "w") as fh:
        fh.write(f"{spec.n_rows} {spec.n_frames} {spec.frame_shift_ms:g}\n")
        for row in spec.data:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_spectrogram_dump(path) -> Spectrogram:
    lines = Path(path).read_text().splitlines()
    f, t, shift = lines[0].split()
    data = np.array([[float(v) for v in line.split()] for line in lines[1:1 + int(f)]])
    if data.shape != (int(f), int(t)):
        raise InvalidInputError(f"{path}: dump body shape {data.shape} != header {(int(f), int(t))}")
    return Spectrogram(data, float(shift))
