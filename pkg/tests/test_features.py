import numpy as np
import pytest

from sivq.errors import ValidationError
from sivq.features import (DEFAULT_FEATURES, FeatureConfig, extract_features,
                           ensure_features, mel_center_frequencies,
                           mel_filterbank)


def test_one_second_gives_fifty_frames():
    wave = np.random.default_rng(0).normal(size=16000) * 0.1
    assert extract_features(wave).shape[0] == 50


@pytest.mark.parametrize("seconds", [0.34, 0.5, 1.27, 2.0])
def test_frame_count_tracks_duration(seconds):
    n = int(round(seconds * 16000))
    wave = np.random.default_rng(1).normal(size=n) * 0.1
    frames = extract_features(wave)
    assert frames.shape[0] == int(np.floor(n / 320 + 0.5))


def test_silence_normalizes_to_zeros():
    feats = extract_features(np.zeros(8000))
    assert np.allclose(feats, 0.0)


def test_sine_energy_in_expected_mel_band():
    t = np.arange(16000) / 16000.0
    wave = np.sin(2 * np.pi * 440.0 * t)
    cfg = DEFAULT_FEATURES
    win = np.hanning(cfg.window_samples)
    seg = wave[:cfg.window_samples] * win
    spectrum = np.abs(np.fft.rfft(seg, n=cfg.n_fft)) ** 2
    mel_direct = mel_filterbank(cfg) @ spectrum
    expected_bin = int(np.argmax(mel_direct))
    # independent expectation: the filter whose center is closest to 440 Hz
    centers = mel_center_frequencies(cfg)
    assert abs(expected_bin - int(np.argmin(np.abs(centers - 440.0)))) <= 1

    # un-normalized band energies: recover argmax from raw mel energies
    raw_logmel = np.log(
        (np.abs(np.fft.rfft(
            np.lib.stride_tricks.sliding_window_view(
                np.pad(wave, (40, 400)), cfg.window_samples)[::320][:50] * win,
            n=cfg.n_fft, axis=1)) ** 2) @ mel_filterbank(cfg).T + 1e-10)
    assert abs(int(np.argmax(raw_logmel.mean(axis=0))) - expected_bin) <= 1


def test_short_waveform_rejected():
    with pytest.raises(ValidationError, match="shorter than one window"):
        extract_features(np.zeros(100))
    with pytest.raises(ValidationError, match="empty"):
        extract_features(np.zeros(0))


def test_mel_filterbank_shape_and_coverage():
    cfg = FeatureConfig(n_mels=24)
    bank = mel_filterbank(cfg)
    assert bank.shape == (24, cfg.n_fft // 2 + 1)
    assert np.all(bank >= 0)
    assert np.all(bank.sum(axis=1) > 0)


def test_ensure_features_fills_audio_corpus(audio_corpus):
    ensure_features(audio_corpus)
    for utt in audio_corpus.utterances:
        assert utt.features is not None
        assert utt.features.shape == (utt.n_frames, DEFAULT_FEATURES.n_mels)
