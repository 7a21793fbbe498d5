"""Log-mel spectral frames at 50 Hz with per-utterance normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import CorpusManifest, SAMPLE_RATE
from .errors import ValidationError


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = SAMPLE_RATE
    window_ms: float = 25.0
    hop_ms: float = 20.0
    n_mels: int = 40
    n_fft: int = 512
    fmin_hz: float = 20.0
    fmax_hz: float = 7800.0
    variance_floor: float = 1e-8

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))


DEFAULT_FEATURES = FeatureConfig()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = config.n_fft // 2 + 1
    fft_hz = np.arange(n_bins) * config.sample_rate / config.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin_hz),
                                  hz_to_mel(config.fmax_hz),
                                  config.n_mels + 2))
    bank = np.zeros((config.n_mels, n_bins))
    for m in range(config.n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (fft_hz - lo) / max(mid - lo, 1e-9)
        down = (hi - fft_hz) / max(hi - mid, 1e-9)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def mel_center_frequencies(config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin_hz),
                                  hz_to_mel(config.fmax_hz),
                                  config.n_mels + 2))
    return edges[1:-1]


def frame_count(n_samples: int, config: FeatureConfig = DEFAULT_FEATURES) -> int:
    """Frames produced for a waveform: consistent with round(duration * 50)."""
    return int(math.floor(n_samples / config.hop_samples + 0.5))


def extract_features(wave: np.ndarray,
                     config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """Log-mel frames, mean-variance normalized per utterance.

    The frame count equals round(duration_s * frame_rate), so labels aligned
    to the manifest arithmetic always line up with extracted features.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ValidationError(f"expected mono waveform, got shape {wave.shape}")
    if wave.size == 0:
        raise ValidationError("empty waveform")
    win = config.window_samples
    hop = config.hop_samples
    if wave.size < win:
        raise ValidationError(
            f"waveform of {wave.size} samples is shorter than one window ({win})")

    n_frames = frame_count(wave.size, config)
    pad_left = (win - hop) // 2
    needed = (n_frames - 1) * hop + win
    pad_right = max(0, needed - pad_left - wave.size)
    padded = np.pad(wave, (pad_left, pad_right))

    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * np.hanning(win)[None, :]
    spectrum = np.abs(np.fft.rfft(frames, n=config.n_fft, axis=1)) ** 2
    mel = spectrum @ mel_filterbank(config).T
    logmel = np.log(mel + 1e-10)

    mean = logmel.mean(axis=0, keepdims=True)
    var = logmel.var(axis=0, keepdims=True)
    return (logmel - mean) / np.sqrt(var + config.variance_floor)


def ensure_features(corpus: CorpusManifest,
                    config: FeatureConfig = DEFAULT_FEATURES) -> CorpusManifest:
    """Fill in features for waveform-only utterances (audio-mode corpora)."""
    for utt in corpus.utterances:
        if utt.features is None:
            if utt.waveform is None:
                raise ValidationError(
                    f"utterance {utt.utterance_id!r} has no waveform or features")
            utt.features = extract_features(utt.waveform, config)
            if utt.features.shape[0] != utt.n_frames:
                raise ValidationError(
                    f"utterance {utt.utterance_id!r}: extracted "
                    f"{utt.features.shape[0]} frames but manifest has "
                    f"{utt.n_frames} labels")
    return corpus
