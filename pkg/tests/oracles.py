"""Independent reference computations used by unit and acceptance tests.

Everything here deliberately avoids the code paths it checks: purities come
from explicit loops, the assignment objective from a dual bisection and a
grid scan, and signal measurements from Welch spectra and autocorrelation.
"""

import math

import numpy as np
from scipy import signal as sp_signal

from sivq.sinkhorn import plan_objective


def brute_force_purity(counts: np.ndarray) -> dict[str, float]:
    """Direct loops over the purity/PNMI definitions."""
    total = counts.sum()
    n_phones, n_codes = counts.shape
    phone_purity = 0.0
    for k in range(n_codes):
        col = counts[:, k].sum()
        if col:
            phone_purity += (col / total) * (counts[:, k].max() / col)
    cluster_purity = 0.0
    for i in range(n_phones):
        row = counts[i].sum()
        if row:
            cluster_purity += (row / total) * (counts[i].max() / row)
    h_phone = 0.0
    for i in range(n_phones):
        p = counts[i].sum() / total
        if p > 0:
            h_phone -= p * math.log(p)
    mi = 0.0
    for i in range(n_phones):
        for k in range(n_codes):
            p = counts[i, k] / total
            if p > 0:
                pi = counts[i].sum() / total
                pk = counts[:, k].sum() / total
                mi += p * math.log(p / (pi * pk))
    return {"cluster_purity": cluster_purity, "phone_purity": phone_purity,
            "pnmi": mi / h_phone}


def dual_bisection_oracle_k2(scores: np.ndarray, epsilon: float) -> float:
    """Exact optimum of the smoothing objective for K=2 via the dual.

    With q_b = Q[b,0] in [0, 1/B] and sum_b q_b = 1/2, stationarity gives
    q_b = (1/B) * sigmoid((s_b - lam)/epsilon) with s_b the score margin;
    lam is found by bisection on the column constraint.  Entirely
    independent of the row/column scaling iteration.
    """
    b = scores.shape[0]
    margin = scores[:, 0] - scores[:, 1]

    def col_sum(lam):
        return np.sum(1.0 / b / (1.0 + np.exp((lam - margin) / epsilon)))

    lo, hi = margin.min() - 60 * epsilon, margin.max() + 60 * epsilon
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if col_sum(mid) > 0.5:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    x = 1.0 / b / (1.0 + np.exp((lam - margin) / epsilon))
    q = np.stack([x, 1.0 / b - x], axis=1)
    return plan_objective(q, scores, epsilon)


def grid_oracle_k2(scores: np.ndarray, epsilon: float, steps: int = 60) -> float:
    """Coarse brute-force scan of the B=4, K=2 transportation polytope."""
    b = scores.shape[0]
    assert b == 4
    cap = 1.0 / b
    grid = np.linspace(0.0, cap, steps + 1)
    x1, x2, x3 = np.meshgrid(grid, grid, grid, indexing="ij")
    x4 = 0.5 - x1 - x2 - x3
    ok = (x4 >= 0.0) & (x4 <= cap)
    qs = np.stack([x1[ok], x2[ok], x3[ok], x4[ok]], axis=1)
    best = -np.inf
    for x in qs:
        q = np.stack([x, cap - x], axis=1)
        best = max(best, plan_objective(q, scores, epsilon))
    return best


def gaussian_vowel(f0=100.0, formants=(500.0, 1500.0, 2500.0), seconds=1.0,
                   sigma=300.0, amp=2.5):
    """Harmonic comb shaped by a Gaussian log-envelope with known peaks."""
    n = int(seconds * 16000)
    t = np.arange(n) / 16000.0
    wave = np.zeros(n)
    for h in range(1, int(7800 / f0) + 1):
        fh = h * f0
        log_env = sum(amp * np.exp(-0.5 * ((fh - fm) / sigma) ** 2)
                      for fm in formants)
        wave += np.exp(log_env) * np.sin(2 * np.pi * fh * t + 0.1 * h)
    return 0.4 * wave / np.abs(wave).max()


def envelope_peaks(wave, targets, tol=0.2):
    """Peak-pick the spectral envelope around each expected formant.

    The envelope is sampled at the harmonic peaks of a Welch PSD and refined
    parabolically; independent of the pipeline's cepstral estimator.
    """
    f, p = sp_signal.welch(wave, fs=16000, nperseg=8192)
    logp = 10 * np.log10(p + 1e-20)
    peaks, props = sp_signal.find_peaks(logp, height=logp.max() - 60,
                                        distance=3)
    hf, hv = f[peaks], props["peak_heights"]
    out = []
    for tgt in targets:
        sel = (hf > tgt * (1 - tol)) & (hf < tgt * (1 + tol))
        ii = np.flatnonzero(sel)
        k = ii[np.argmax(hv[ii])]
        if 0 < k < len(hf) - 1:
            a, b, c = hv[k - 1], hv[k], hv[k + 1]
            denom = a - 2 * b + c
            off = 0.5 * (a - c) / denom if denom != 0 else 0.0
            out.append(hf[k] + off * (hf[k + 1] - hf[k - 1]) / 2)
        else:
            out.append(hf[k])
    return out


def autocorr_f0(wave, lo=60.0, hi=500.0):
    """Autocorrelation pitch tracker with a subharmonic guard."""
    w = wave - wave.mean()
    ac = np.correlate(w, w, mode="full")[len(w) - 1:]
    lag_lo, lag_hi = int(16000 / hi), int(16000 / lo)
    seg = ac[lag_lo:lag_hi]
    cands = np.flatnonzero(seg >= 0.9 * seg.max())
    lag = lag_lo + cands[0]
    a, b, c = ac[lag - 1], ac[lag], ac[lag + 1]
    denom = a - 2 * b + c
    lag = lag + (0.5 * (a - c) / denom if denom != 0 else 0.0)
    return 16000.0 / lag
