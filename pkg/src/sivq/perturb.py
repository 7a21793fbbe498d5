"""Content-preserving speaker perturbation.

Audio path: short-time analysis, cepstral spectral-envelope estimation,
frequency-axis warp of the envelope (formant scaling), phase-vocoder shift
of the excitation residual (F0 scaling), resynthesis, then a random-EQ
biquad cascade.  Output length always equals input length so frame-aligned
labels survive the transform.

Feature path: synthetic feature-mode frames are re-rendered analytically
under a different voice, which gives exact expectations for unit tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sp_signal

from .corpus import SAMPLE_RATE, SpeakerVoice, SyntheticWorld
from .errors import ValidationError

# Analysis geometry for the envelope/excitation decomposition.
_N_FFT = 1024
_HOP = 256
_LIFTER_MS = 1.25          # cepstral cutoff quefrency
_LOW_SHELF_HZ = 250.0
_HIGH_SHELF_HZ = 4000.0


@dataclass(frozen=True)
class PerturbParams:
    """One sampled speaker transform."""

    formant_ratio: float
    f0_ratio: float
    eq_peaks: tuple[tuple[float, float, float], ...] = ()  # (center, bandwidth, gain dB)
    low_shelf_gain_db: float = 0.0
    high_shelf_gain_db: float = 0.0

    def validate(self) -> None:
        for name, r in (("formant_ratio", self.formant_ratio),
                        ("f0_ratio", self.f0_ratio)):
            if not (0.5 <= r <= 2.0):
                raise ValidationError(f"{name}={r:g} outside [1/2, 2]")
        last = 0.0
        for center, bandwidth, gain in self.eq_peaks:
            if not (last < center < 8000.0):
                raise ValidationError(
                    f"EQ centers must be strictly increasing in (0, 8000); got "
                    f"{center:g} after {last:g}")
            if bandwidth <= 0:
                raise ValidationError(f"EQ bandwidth must be positive; got {bandwidth:g}")
            if abs(gain) > 12.0:
                raise ValidationError(f"|EQ gain| must be <= 12 dB; got {gain:g}")
            last = center
        for gain in (self.low_shelf_gain_db, self.high_shelf_gain_db):
            if abs(gain) > 12.0:
                raise ValidationError(f"|shelf gain| must be <= 12 dB; got {gain:g}")

    def to_dict(self) -> dict:
        return {
            "formant_ratio": self.formant_ratio,
            "f0_ratio": self.f0_ratio,
            "eq_peaks": [list(p) for p in self.eq_peaks],
            "low_shelf_gain_db": self.low_shelf_gain_db,
            "high_shelf_gain_db": self.high_shelf_gain_db,
        }


IDENTITY_PARAMS = PerturbParams(formant_ratio=1.0, f0_ratio=1.0)


@dataclass(frozen=True)
class PerturbConfig:
    """Sampling ranges for speaker transforms."""

    formant_range: tuple[float, float] = (1.0, 1.4)
    f0_range: tuple[float, float] = (1.0, 2.0)
    invert_prob: float = 0.5
    n_eq_peaks: int = 8
    eq_gain_range_db: float = 12.0
    seed: int = 0

    def validate(self) -> None:
        if not (self.formant_range[0] == 1.0 and self.formant_range[1] >= 1.0):
            raise ValidationError("formant_range must be (1, hi) with hi >= 1")
        if not (self.f0_range[0] == 1.0 and self.f0_range[1] >= 1.0):
            raise ValidationError("f0_range must be (1, hi) with hi >= 1")
        if not (0.0 <= self.invert_prob <= 1.0):
            raise ValidationError("invert_prob must lie in [0, 1]")
        if self.n_eq_peaks < 0:
            raise ValidationError("n_eq_peaks must be >= 0")
        if not (0.0 <= self.eq_gain_range_db <= 12.0):
            raise ValidationError("eq_gain_range_db must lie in [0, 12]")


def sample_perturb_params(config: PerturbConfig,
                          rng_state: np.random.Generator | int) -> PerturbParams:
    """Draw a random speaker transform; deterministic given rng_state.

    Each scale is drawn uniformly above 1 and inverted with probability
    invert_prob, which keeps up- and down-shifts symmetric in log space.
    EQ peak centers sit in disjoint log-spaced bands so they stay strictly
    increasing.
    """
    config.validate()
    rng = (rng_state if isinstance(rng_state, np.random.Generator)
           else np.random.default_rng(rng_state))

    def scale(hi: float) -> float:
        r = float(rng.uniform(1.0, hi))
        if rng.uniform() < config.invert_prob:
            r = 1.0 / r
        return r

    formant_ratio = scale(config.formant_range[1])
    f0_ratio = scale(config.f0_range[1])

    peaks = []
    if config.n_eq_peaks > 0:
        edges = np.geomspace(100.0, 7000.0, config.n_eq_peaks + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            center = float(rng.uniform(lo, hi))
            bandwidth = float(rng.uniform(center / 3.0, center / 1.5))
            gain = float(rng.uniform(-config.eq_gain_range_db,
                                     config.eq_gain_range_db))
            peaks.append((center, bandwidth, gain))
    low = float(rng.uniform(-config.eq_gain_range_db, config.eq_gain_range_db))
    high = float(rng.uniform(-config.eq_gain_range_db, config.eq_gain_range_db))
    params = PerturbParams(formant_ratio=formant_ratio, f0_ratio=f0_ratio,
                           eq_peaks=tuple(peaks),
                           low_shelf_gain_db=low, high_shelf_gain_db=high)
    params.validate()
    return params


# ---------------------------------------------------------------------------
# audio pipeline


def _wrap_phase(x: np.ndarray) -> np.ndarray:
    return (x + np.pi) % (2 * np.pi) - np.pi


def _cepstral_envelope(log_mag: np.ndarray, n_fft: int,
                       n_iters: int = 4) -> np.ndarray:
    """Low-quefrency envelope of a (bins, frames) log-magnitude array.

    Iterated liftering against max(spectrum, envelope) pushes the fit up to
    the harmonic peaks instead of averaging across inter-harmonic valleys,
    and a -60 dB relative floor keeps the valleys from dominating the fit.
    """
    q_cut = int(round(_LIFTER_MS * 1e-3 * SAMPLE_RATE))
    lifter = np.zeros(n_fft)
    lifter[:q_cut + 1] = 1.0
    lifter[n_fft - q_cut:] = 1.0

    floor = log_mag.max(axis=0, keepdims=True) - 60.0 / 20.0 * np.log(10.0)
    target = np.maximum(log_mag, floor)
    env = np.fft.rfft(
        np.fft.irfft(target, n=n_fft, axis=0) * lifter[:, None],
        n=n_fft, axis=0).real
    for _ in range(n_iters):
        target = np.maximum(target, env)
        env = np.fft.rfft(
            np.fft.irfft(target, n=n_fft, axis=0) * lifter[:, None],
            n=n_fft, axis=0).real
    return env


def _warp_bins(values: np.ndarray, ratio: float) -> np.ndarray:
    """Map values(k) -> values(k / ratio) along the bin axis (axis 0)."""
    n_bins = values.shape[0]
    src = np.arange(n_bins, dtype=np.float64) / ratio
    grid = np.arange(n_bins, dtype=np.float64)
    out = np.empty_like(values)
    for t in range(values.shape[1]):
        out[:, t] = np.interp(src, grid, values[:, t])
    return out


def _time_stretch(wave: np.ndarray, analysis_hop: int, synthesis_hop: int
                  ) -> np.ndarray:
    """Phase-vocoder time stretch by synthesis_hop / analysis_hop.

    Per-frame magnitudes are reused unchanged; synthesis phases accumulate
    each bin's instantaneous frequency over the new hop, which keeps
    partials at their original frequencies while time dilates.
    """
    _, _, z = sp_signal.stft(wave, fs=SAMPLE_RATE, window="hann",
                             nperseg=_N_FFT, noverlap=_N_FFT - analysis_hop,
                             boundary="zeros", padded=True)
    mag = np.abs(z)
    phase = np.angle(z)
    n_bins = mag.shape[0]
    bin_freq = 2 * np.pi * np.arange(n_bins) / _N_FFT          # rad / sample
    delta = np.diff(phase, axis=1) - bin_freq[:, None] * analysis_hop
    inst = np.empty_like(phase)
    inst[:, 0] = bin_freq
    inst[:, 1:] = bin_freq[:, None] + _wrap_phase(delta) / analysis_hop

    new_phase = np.empty_like(phase)
    new_phase[:, 0] = phase[:, 0]
    for t in range(1, phase.shape[1]):
        new_phase[:, t] = new_phase[:, t - 1] + inst[:, t] * synthesis_hop
    _, out = sp_signal.istft(mag * np.exp(1j * new_phase), fs=SAMPLE_RATE,
                             window="hann", nperseg=_N_FFT,
                             noverlap=_N_FFT - synthesis_hop, boundary=True)
    return out


def _pitch_shift(wave: np.ndarray, ratio: float) -> np.ndarray:
    """Scale all frequencies by ratio at constant duration.

    Classic stretch-then-resample: time-stretch by ratio with coherent
    phases, then resample by exactly 1/ratio, which compresses time and
    multiplies every frequency by ratio.  The caller trims or pads the
    small length remainder from frame quantization.
    """
    analysis_hop = 128
    synthesis_hop = int(round(ratio * analysis_hop))
    ratio_eff = synthesis_hop / analysis_hop
    stretched = _time_stretch(wave, analysis_hop, synthesis_hop)
    return sp_signal.resample(stretched, int(round(stretched.size / ratio_eff)))


def _rbj_peaking(center: float, bandwidth: float, gain_db: float) -> np.ndarray:
    a_lin = 10.0 ** (gain_db / 40.0)
    w0 = 2 * np.pi * center / SAMPLE_RATE
    alpha = math.sin(w0) * bandwidth / (2.0 * center)
    b = np.array([1 + alpha * a_lin, -2 * math.cos(w0), 1 - alpha * a_lin])
    a = np.array([1 + alpha / a_lin, -2 * math.cos(w0), 1 - alpha / a_lin])
    return np.concatenate([b / a[0], a / a[0]])


def _rbj_shelf(corner: float, gain_db: float, high: bool) -> np.ndarray:
    a_lin = 10.0 ** (gain_db / 40.0)
    w0 = 2 * np.pi * corner / SAMPLE_RATE
    cosw, sinw = math.cos(w0), math.sin(w0)
    alpha = sinw / 2.0 * math.sqrt(2.0)
    sq = 2.0 * math.sqrt(a_lin) * alpha
    if high:
        b = np.array([a_lin * ((a_lin + 1) + (a_lin - 1) * cosw + sq),
                      -2 * a_lin * ((a_lin - 1) + (a_lin + 1) * cosw),
                      a_lin * ((a_lin + 1) + (a_lin - 1) * cosw - sq)])
        a = np.array([(a_lin + 1) - (a_lin - 1) * cosw + sq,
                      2 * ((a_lin - 1) - (a_lin + 1) * cosw),
                      (a_lin + 1) - (a_lin - 1) * cosw - sq])
    else:
        b = np.array([a_lin * ((a_lin + 1) - (a_lin - 1) * cosw + sq),
                      2 * a_lin * ((a_lin - 1) - (a_lin + 1) * cosw),
                      a_lin * ((a_lin + 1) - (a_lin - 1) * cosw - sq)])
        a = np.array([(a_lin + 1) + (a_lin - 1) * cosw + sq,
                      -2 * ((a_lin - 1) + (a_lin + 1) * cosw),
                      (a_lin + 1) + (a_lin - 1) * cosw - sq])
    return np.concatenate([b / a[0], a / a[0]])


def _eq_sos(params: PerturbParams) -> np.ndarray | None:
    sections = [_rbj_peaking(c, bw, g) for c, bw, g in params.eq_peaks]
    sections.append(_rbj_shelf(_LOW_SHELF_HZ, params.low_shelf_gain_db, high=False))
    sections.append(_rbj_shelf(_HIGH_SHELF_HZ, params.high_shelf_gain_db, high=True))
    return np.stack(sections) if sections else None


def spectral_envelope(wave: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average cepstrally-liftered log envelope of a waveform.

    Returns (frequencies_hz, log_envelope); used both inside the perturbation
    pipeline and as the measurement tool for formant-shift verification.
    """
    _, _, z = sp_signal.stft(wave, fs=SAMPLE_RATE, window="hann",
                             nperseg=_N_FFT, noverlap=_N_FFT - _HOP,
                             boundary="zeros", padded=True)
    log_mag = np.log(np.abs(z) + 1e-12)
    env = _cepstral_envelope(log_mag, _N_FFT)
    freqs = np.arange(env.shape[0]) * SAMPLE_RATE / _N_FFT
    return freqs, env.mean(axis=1)


def _fit_length(wave: np.ndarray, n: int) -> np.ndarray:
    if wave.size >= n:
        return wave[:n]
    return np.pad(wave, (0, n - wave.size))


def _stft(wave: np.ndarray) -> np.ndarray:
    _, _, z = sp_signal.stft(wave, fs=SAMPLE_RATE, window="hann",
                             nperseg=_N_FFT, noverlap=_N_FFT - _HOP,
                             boundary="zeros", padded=True)
    return z


def _istft(z: np.ndarray) -> np.ndarray:
    _, out = sp_signal.istft(z, fs=SAMPLE_RATE, window="hann",
                             nperseg=_N_FFT, noverlap=_N_FFT - _HOP,
                             boundary=True)
    return out


def perturb_waveform(wave: np.ndarray, params: PerturbParams) -> np.ndarray:
    """Apply a speaker transform; output has exactly the input's length.

    Envelope and excitation are separated by cepstral liftering; the
    envelope's frequency axis is warped by formant_ratio while the
    excitation is pitch-shifted by f0_ratio, then the two are recombined
    and an EQ cascade applied.  Ratios of exactly 1 leave their stage
    untouched, so identity parameters reduce to an analysis/synthesis
    round trip.
    """
    params.validate()
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ValidationError(f"expected mono waveform, got shape {wave.shape}")
    if wave.size == 0:
        raise ValidationError("empty waveform")
    n = wave.size

    z = _stft(wave)
    log_mag = np.log(np.abs(z) + 1e-12)
    log_env = _cepstral_envelope(log_mag, _N_FFT)
    warped_env = (_warp_bins(log_env, params.formant_ratio)
                  if params.formant_ratio != 1.0 else log_env)

    if params.f0_ratio != 1.0:
        residual = _fit_length(_istft(z * np.exp(-log_env)), n)
        shifted = _fit_length(_pitch_shift(residual, params.f0_ratio), n)
        new_z = np.exp(warped_env) * _stft(shifted)
    elif params.formant_ratio != 1.0:
        new_z = np.exp(warped_env - log_env) * z
    else:
        new_z = z

    out = _fit_length(_istft(new_z), n)
    sos = _eq_sos(params)
    if sos is not None:
        out = sp_signal.sosfilt(sos, out)
    return out


# ---------------------------------------------------------------------------
# feature-mode counterpart


def perturb_synthetic(features: np.ndarray, labels: np.ndarray,
                      world: SyntheticWorld, voice_in: SpeakerVoice,
                      voice_out: SpeakerVoice,
                      rng: np.random.Generator | None = None,
                      noise_std: float | None = None) -> np.ndarray:
    """Re-render feature-mode frames under a different voice.

    Labels are untouched by construction; noise is redrawn.  The input must
    actually come from the given world and voice, otherwise the residual
    left after subtracting the expected clean render exceeds what the
    world's noise level can explain.
    """
    if noise_std is None:
        noise_std = world.spec.noise_std
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape != (len(labels), world.spec.feature_dim):
        raise ValidationError(
            f"features of shape {features.shape} not traceable to a synthetic "
            f"manifest with {len(labels)} labels and feature_dim "
            f"{world.spec.feature_dim}")
    expected = world.render_frames(labels, voice_in, 0.0)
    residual = np.abs(features - expected).max()
    allowed = 1e-9 if world.spec.noise_std == 0 else 8.0 * world.spec.noise_std
    if residual > allowed:
        raise ValidationError(
            f"features not traceable to a synthetic manifest: residual "
            f"{residual:.3g} exceeds {allowed:.3g} for the claimed voice")
    return world.render_frames(labels, voice_out, noise_std, rng)


def shift_voice(voice: SpeakerVoice, params: PerturbParams) -> SpeakerVoice:
    """Compose a voice with sampled ratios (feature-mode analogue of EQ-less
    waveform perturbation)."""
    return SpeakerVoice(formant_scale=voice.formant_scale * params.formant_ratio,
                        f0_scale=voice.f0_scale * params.f0_ratio)
