"""Speaker perturbation on audio: formant scaling, F0 scaling, random EQ.

Builds a synthetic vowel with known formant peaks, applies transforms, and
measures what moved.  Output length always equals input length, which is
what keeps frame-aligned labels valid downstream.
"""

import numpy as np
from scipy import signal as sp

from sivq import PerturbConfig, sample_perturb_params
from sivq.corpus import save_wav
from sivq.perturb import PerturbParams, perturb_waveform, spectral_envelope

SR = 16000


def vowel(f0, formants, seconds=1.0, sigma=300.0, amp=2.5):
    t = np.arange(int(seconds * SR)) / SR
    wave = np.zeros_like(t)
    for h in range(1, int(7800 / f0) + 1):
        fh = h * f0
        log_env = sum(amp * np.exp(-0.5 * ((fh - fm) / sigma) ** 2)
                      for fm in formants)
        wave += np.exp(log_env) * np.sin(2 * np.pi * fh * t + 0.1 * h)
    return 0.4 * wave / np.abs(wave).max()


def dominant_f0(wave):
    w = wave - wave.mean()
    ac = np.correlate(w, w, mode="full")[len(w) - 1:]
    lag_lo, lag_hi = SR // 500, SR // 60
    seg = ac[lag_lo:lag_hi]
    lag = lag_lo + np.flatnonzero(seg >= 0.9 * seg.max())[0]
    return SR / lag


x = vowel(f0=120.0, formants=(500.0, 1500.0, 2500.0))
save_wav("demo_vowel_in.wav", x)
print(f"input: f0 ~ {dominant_f0(x):.1f} Hz, formants at 500/1500/2500 Hz")

# Formant-only shift: envelope peaks move, pitch stays.
y = perturb_waveform(x, PerturbParams(formant_ratio=1.25, f0_ratio=1.0))
save_wav("demo_vowel_formant.wav", y)
freqs, env = spectral_envelope(y)
for lo, hi in ((450, 800), (1400, 2200), (2300, 3600)):
    sel = (freqs > lo) & (freqs < hi)
    print(f"  formant x1.25 -> envelope peak in [{lo},{hi}]: "
          f"{freqs[sel][np.argmax(env[sel])]:.0f} Hz")
print(f"  f0 after formant shift: {dominant_f0(y):.1f} Hz (unchanged)")

# F0-only shift: pitch moves, envelope stays.
y2 = perturb_waveform(x, PerturbParams(formant_ratio=1.0, f0_ratio=1.5))
save_wav("demo_vowel_pitch.wav", y2)
print(f"f0 x1.5 -> {dominant_f0(y2):.1f} Hz")

# The full random transform, as used during training: one draw per view.
config = PerturbConfig()          # formant U(1, 1.4), F0 U(1, 2), both
rng = np.random.default_rng(7)    # inverted with probability 1/2, plus EQ
for i in range(3):
    params = sample_perturb_params(config, rng)
    out = perturb_waveform(x, params)
    print(f"draw {i}: formant x{params.formant_ratio:.3f}, "
          f"f0 x{params.f0_ratio:.3f}, "
          f"{len(params.eq_peaks)} EQ peaks -> "
          f"{out.size} samples (input {x.size})")
