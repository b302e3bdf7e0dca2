import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffcac.audio import (
    FrontendConfig,
    LogMelSpectrogram,
    ManifestRow,
    SynthConfig,
    Waveform,
    fit_to_length,
    load_wav,
    log_mel_spectrogram,
    mel_filterbank,
    patch_counts,
    patch_split,
    read_manifest,
    synth_class_waveform,
    write_manifest,
    write_wav,
)
from ffcac.errors import ConfigError, DimensionError, IngestionError

from tests.helpers import enumerate_patch_count, reassemble_patches

CFG = FrontendConfig()


# ---------------------------------------------------------------------------
# WAV io


def test_silence_round_trip(tmp_path):
    path = tmp_path / "silence.wav"
    write_wav(path, Waveform(np.zeros(16000), 16000))
    w = load_wav(path)
    assert w.samples.shape == (16000,)
    assert np.all(w.samples == 0.0)


def test_full_scale_square_wave_pcm_scaling(tmp_path):
    square = np.where(np.arange(1600) % 2 == 0, 1.0, -1.0)
    path = tmp_path / "square.wav"
    write_wav(path, Waveform(square, 16000))
    w = load_wav(path)
    # +1.0 clips to the largest positive 16-bit code, -1.0 is exact
    assert np.allclose(np.unique(w.samples), [-1.0, 32767 / 32768])


def test_stereo_rejected(tmp_path):
    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(b"\x00\x00" * 2000)
    with pytest.raises(IngestionError, match="mono"):
        load_wav(path)


def test_wrong_sample_rate_rejected(tmp_path):
    path = tmp_path / "slow.wav"
    write_wav(path, Waveform(np.zeros(8000), 8000))
    with pytest.raises(IngestionError, match="sample rate"):
        load_wav(path, expected_rate_hz=16000)


def test_wrong_sample_width_rejected(tmp_path):
    path = tmp_path / "w8.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(1)
        wf.setframerate(16000)
        wf.writeframes(b"\x00" * 2000)
    with pytest.raises(IngestionError, match="16-bit"):
        load_wav(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(IngestionError, match="no such file"):
        load_wav(tmp_path / "ghost.wav")


def test_garbage_file_rejected(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"not a riff file at all")
    with pytest.raises(IngestionError):
        load_wav(path)


# ---------------------------------------------------------------------------
# log mel spectrogram


def test_frame_count_one_second_clip():
    # 16000 samples, 400-sample frames, 240-sample shift
    w = Waveform(np.zeros(16000), 16000)
    lms = log_mel_spectrogram(w, CFG)
    assert lms.s_t == 1 + (16000 - 400) // 240 == 66
    assert lms.s_f == 128


def test_silence_hits_log_floor():
    lms = log_mel_spectrogram(Waveform(np.zeros(16000), 16000), CFG)
    assert np.allclose(lms.data, np.log(CFG.log_floor))


def test_too_short_clip_rejected():
    with pytest.raises(IngestionError, match="shorter"):
        log_mel_spectrogram(Waveform(np.zeros(399), 16000), CFG)


def test_pure_tone_argmax_bin_constant_and_contains_tone():
    t = np.arange(16000) / 16000
    tone = Waveform(0.8 * np.sin(2 * np.pi * 1000.0 * t), 16000)
    lms = log_mel_spectrogram(tone, CFG)
    argmax = lms.data.argmax(axis=0)
    assert np.all(argmax == argmax[0])
    # independent filterbank oracle: the winning filter must respond at 1 kHz
    fb = mel_filterbank(CFG)
    freqs = np.arange(CFG.fft_size // 2 + 1) * CFG.sample_rate_hz / CFG.fft_size
    k = np.argmin(np.abs(freqs - 1000.0))
    responding = np.flatnonzero(fb[:, k] > 0)
    assert argmax[0] in responding


def test_translation_by_one_frame_shift_moves_columns():
    rng = np.random.default_rng(0)
    x = rng.normal(size=16000) * 0.1
    base = log_mel_spectrogram(Waveform(x, 16000), CFG)
    delayed = log_mel_spectrogram(Waveform(np.concatenate([np.zeros(240), x]), 16000), CFG)
    assert np.max(np.abs(delayed.data[:, 1 : base.s_t] - base.data[:, : base.s_t - 1])) <= 1e-9


def test_all_entries_finite_on_random_input():
    rng = np.random.default_rng(1)
    lms = log_mel_spectrogram(Waveform(rng.uniform(-1, 1, 8000), 16000), CFG)
    assert np.all(np.isfinite(lms.data))


def test_fit_to_length_pads_and_crops():
    w = Waveform(np.ones(100), 16000)
    padded = fit_to_length(w, 200)
    assert padded.samples.shape == (200,) and padded.samples.sum() == 100
    cropped = fit_to_length(w, 50)
    assert cropped.samples.shape == (50,) and np.all(cropped.samples == 1.0)


# ---------------------------------------------------------------------------
# patch splitting


def test_single_patch_when_sizes_match():
    lms = LogMelSpectrogram(np.arange(12.0).reshape(3, 4))
    seq = patch_split(lms, 3, 4, 2)
    assert seq.grid.z == 1
    assert np.array_equal(seq.patches[0], lms.data.ravel())


def test_overlapping_patch_count_case():
    grid = patch_counts(128, 106, 16, 16, 10)
    assert (grid.rows, grid.cols, grid.z) == (12, 10, 120)


def test_non_overlapping_patch_count_case():
    grid = patch_counts(128, 160, 16, 16, 16)
    assert (grid.rows, grid.cols, grid.z) == (8, 10, 80)


def test_patch_larger_than_spectrum_rejected():
    lms = LogMelSpectrogram(np.zeros((8, 8)))
    with pytest.raises(DimensionError):
        patch_split(lms, 9, 8, 1)
    with pytest.raises(DimensionError):
        patch_split(lms, 8, 8, 0)


@settings(max_examples=100, deadline=None)
@given(
    st.integers(1, 64), st.integers(1, 64),
    st.integers(1, 64), st.integers(1, 64), st.integers(1, 12),
)
def test_patch_count_matches_enumeration(big_f, big_t, s_f, s_t, d):
    if s_f > big_f or s_t > big_t:
        with pytest.raises(DimensionError):
            patch_counts(big_f, big_t, s_f, s_t, d)
        return
    grid = patch_counts(big_f, big_t, s_f, s_t, d)
    assert grid.z == enumerate_patch_count(big_f, big_t, s_f, s_t, d)


def test_patch_order_is_frequency_major():
    lms = LogMelSpectrogram(np.arange(16.0).reshape(4, 4))
    seq = patch_split(lms, 2, 2, 2)
    # patch 0 is top-left, patch 1 moves along time, patch 2 drops in frequency
    assert np.array_equal(seq.patches[0], [0, 1, 4, 5])
    assert np.array_equal(seq.patches[1], [2, 3, 6, 7])
    assert np.array_equal(seq.patches[2], [8, 9, 12, 13])


def test_nonoverlapping_reassembly_is_exact():
    # d = s_f = s_t: tiles cover the cropped spectrogram exactly once
    rng = np.random.default_rng(2)
    lms = LogMelSpectrogram(rng.normal(size=(20, 14)))
    seq = patch_split(lms, 5, 5, 5)
    assert (seq.grid.rows, seq.grid.cols) == (4, 2)
    rebuilt = reassemble_patches(seq.patches, seq.grid.rows, seq.grid.cols, 5, 5)
    assert np.array_equal(rebuilt, lms.data[:20, :10])


# ---------------------------------------------------------------------------
# synthetic classes


def test_synth_deterministic():
    cfg = SynthConfig()
    a = synth_class_waveform(3, 99, cfg)
    b = synth_class_waveform(3, 99, cfg)
    assert np.array_equal(a.samples, b.samples)


def test_synth_instances_differ():
    cfg = SynthConfig()
    a = synth_class_waveform(3, 1, cfg)
    b = synth_class_waveform(3, 2, cfg)
    assert not np.array_equal(a.samples, b.samples)


def test_synth_amplitude_bounded():
    cfg = SynthConfig()
    for c in range(cfg.num_classes):
        w = synth_class_waveform(c, 5, cfg)
        assert np.max(np.abs(w.samples)) <= 1.0


def test_synth_disjoint_dominant_mel_bins_without_noise():
    cfg = SynthConfig(noise_amplitude=0.0)
    bins = []
    for c in range(cfg.num_classes):
        lms = log_mel_spectrogram(synth_class_waveform(c, 0, cfg), CFG)
        bins.append(int(np.argmax(lms.data.mean(axis=1))))
    assert len(set(bins)) == cfg.num_classes


def test_synth_class_out_of_range():
    with pytest.raises(ConfigError):
        synth_class_waveform(10, 0, SynthConfig(num_classes=10))


# ---------------------------------------------------------------------------
# manifests


def test_manifest_round_trip(tmp_path):
    rows = [
        ManifestRow("a.wav", "cat", "train"),
        ManifestRow("b.wav", "dog", "test"),
    ]
    path = tmp_path / "manifest.csv"
    write_manifest(path, rows)
    assert read_manifest(path) == rows
    raw = path.read_bytes()
    assert raw.startswith(b"path,label,split\n")
    assert b"\r" not in raw  # LF line endings


def test_manifest_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("file,cls,part\na.wav,cat,train\n")
    with pytest.raises(IngestionError, match="header"):
        read_manifest(path)


def test_manifest_bad_split(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("path,label,split\na.wav,cat,validation\n")
    with pytest.raises(IngestionError, match="split"):
        read_manifest(path)
