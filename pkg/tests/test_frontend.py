import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vladpool.config import FrontendConfig
from vladpool.frontend import (AudioClip, InvalidInputError, Spectrogram, UnsupportedFormatError,
                               energy_vad, frame_signal, random_crop, read_spectrogram_dump, read_wav,
                               stft_spectrogram, write_spectrogram_dump, write_wav)

CFG = FrontendConfig()
SR = 16000


def naive_spectrogram(x, cfg=CFG):
    """O(n^2) DFT of every Hamming-windowed frame; independent of np.fft."""
    frames = frame_signal(x, cfg)
    win = cfg.window_samples
    n = np.arange(win)
    k = np.arange(cfg.n_spectral_bins)[:, None]
    basis = np.exp(-2j * np.pi * k * n / cfg.fft_size)
    # hamming written out rather than np.hamming
    w = 0.54 - 0.46 * np.cos(2 * np.pi * n / (win - 1))
    out = []
    for f in frames:
        seg = f * w
        power = np.abs(basis @ seg) ** 2
        energy = np.sum(seg ** 2)
        out.append(np.concatenate([np.log(power + cfg.log_floor), [np.log(energy + cfg.log_floor)]]))
    return np.array(out).T


def test_five_seconds_gives_257_by_500():
    clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 5 * SR))
    assert stft_spectrogram(clip).data.shape == (257, 500)


def test_zero_clip_hits_log_floor():
    spec = stft_spectrogram(AudioClip(np.zeros(SR)))
    assert np.all(spec.data == np.log(CFG.log_floor))


def test_sinusoid_peaks_at_bin_16_and_matches_naive_dft():
    t = np.arange(2048) / SR
    x = 0.5 * np.sin(2 * np.pi * (16 * SR / CFG.fft_size) * t)
    spec = stft_spectrogram(AudioClip(x))
    # frames that run past the end see the reflected tail, not a clean tone
    full = (x.size - CFG.window_samples) // CFG.shift_samples + 1
    assert np.all(np.argmax(spec.data[:256, :full], axis=0) == 16)
    ref = naive_spectrogram(x)
    assert np.all(np.abs(spec.data - ref) <= 1e-4 * np.maximum(1.0, np.abs(ref)))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 4096), seed=st.integers(0, 2**16))
def test_matches_naive_dft_on_short_clips(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    spec = stft_spectrogram(AudioClip(x))
    ref = naive_spectrogram(x)
    assert np.all(np.abs(spec.data - ref) <= 1e-4 * np.maximum(1.0, np.abs(ref)))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 20000))
def test_frame_count_law(n):
    x = np.random.default_rng(n).uniform(-1, 1, n)
    assert stft_spectrogram(AudioClip(x)).n_frames == math.ceil(n / CFG.shift_samples)


@settings(max_examples=20, deadline=None)
@given(gain=st.floats(0.05, 0.99), seed=st.integers(0, 1000))
def test_scaling_adds_twice_log_gain(gain, seed):
    # the additive floor is the only non-homogeneous term; make it negligible
    cfg = FrontendConfig(log_floor=1e-30)
    x = np.random.default_rng(seed).uniform(-1, 1, 3000)
    a = stft_spectrogram(AudioClip(x), cfg).data
    b = stft_spectrogram(AudioClip(gain * x), cfg).data
    assert np.max(np.abs(b - a - 2 * np.log(gain))) < 1e-6


def test_invalid_clips_rejected():
    with pytest.raises(InvalidInputError):
        AudioClip(np.array([]))
    with pytest.raises(InvalidInputError):
        AudioClip(np.array([0.0, np.nan]))
    with pytest.raises(InvalidInputError):
        stft_spectrogram(AudioClip(np.zeros(100), sample_rate_hz=8000))


def test_vad_silence_is_empty():
    assert energy_vad(AudioClip(np.zeros(SR)), -40.0, 100) == []


def test_vad_finds_the_tone():
    t = np.arange(SR) / SR
    tone = np.sin(2 * np.pi * 440 * t)
    x = np.concatenate([np.zeros(SR), tone, np.zeros(SR)])
    segs = energy_vad(AudioClip(x), -40.0, 100)
    assert len(segs) == 1
    hop = SR // 100
    start, end = segs[0]
    assert abs(start - SR) <= hop and abs(end - 2 * SR) <= hop
    # direct RMS check of the retained region
    assert 20 * np.log10(np.sqrt(np.mean(x[start:end] ** 2))) > -40


def test_vad_full_tone_is_whole_clip():
    x = np.sin(2 * np.pi * 440 * np.arange(12345) / SR)
    assert energy_vad(AudioClip(x), -40.0, 100) == [(0, 12345)]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 30000))
def test_vad_segments_sorted_disjoint_in_bounds(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, n) * (rng.random(n) < 0.5).cumsum() % 2
    segs = energy_vad(AudioClip(x), -20.0, 20)
    for a, b in segs:
        assert 0 <= a < b <= n and b - a >= 20 * SR / 1000
    for (_, b1), (a2, _) in zip(segs, segs[1:]):
        assert b1 <= a2


def test_crop_full_width_is_identity():
    spec = Spectrogram(np.random.default_rng(0).standard_normal((257, 500)))
    out = random_crop(spec, 500, np.random.default_rng(3))
    assert np.array_equal(out.data, spec.data)


def test_crop_tiles_short_input():
    spec = Spectrogram(np.random.default_rng(0).standard_normal((4, 300)))
    out = random_crop(spec, 500, np.random.default_rng(0))
    assert out.n_frames == 500
    assert np.array_equal(out.data[:, 300], out.data[:, 0])
    assert np.array_equal(out.data[:, :300], spec.data)


def test_crop_is_seed_deterministic():
    spec = Spectrogram(np.arange(1000.0)[None].repeat(2, axis=0))
    a = random_crop(spec, 200, np.random.default_rng(42))
    b = random_crop(spec, 200, np.random.default_rng(42))
    assert a.data[0, 0] == b.data[0, 0]
    assert np.array_equal(a.data[0], np.arange(a.data[0, 0], a.data[0, 0] + 200))


def test_wav_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-0.9, 0.9, 1000)
    write_wav(tmp_path / "a.wav", AudioClip(x))
    y = read_wav(tmp_path / "a.wav")
    assert y.sample_rate_hz == SR
    assert np.max(np.abs(y.samples - x)) < 1 / 32768 * 1.01


def test_wav_rejects_stereo(tmp_path):
    import wave
    with wave.open(str(tmp_path / "s.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(SR)
        w.writeframes(b"\x00" * 400)
    with pytest.raises(UnsupportedFormatError):
        read_wav(tmp_path / "s.wav")


def test_spectrogram_dump_round_trip(tmp_path):
    spec = stft_spectrogram(AudioClip(np.random.default_rng(1).uniform(-1, 1, 800)))
    write_spectrogram_dump(tmp_path / "x.spec", spec)
    header = (tmp_path / "x.spec").read_text().splitlines()[0]
    assert header == "257 5 10"
    back = read_spectrogram_dump(tmp_path / "x.spec")
    assert np.array_equal(back.data, spec.data)
