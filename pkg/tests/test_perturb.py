import numpy as np
import pytest
import scipy.stats
from scipy import signal as sp_signal

from oracles import autocorr_f0, envelope_peaks, gaussian_vowel
from sivq.corpus import SpeakerVoice, SyntheticSpec, SyntheticWorld
from sivq.errors import ValidationError
from sivq.perturb import (IDENTITY_PARAMS, PerturbConfig, PerturbParams,
                          perturb_synthetic, perturb_waveform,
                          sample_perturb_params, shift_voice)


class TestParamSampling:
    def test_degenerate_ranges_give_identity_ratios(self, rng):
        config = PerturbConfig(formant_range=(1.0, 1.0), f0_range=(1.0, 1.0))
        for _ in range(20):
            p = sample_perturb_params(config, rng)
            assert p.formant_ratio == 1.0 and p.f0_ratio == 1.0

    def test_uniform_distribution_ks(self):
        config = PerturbConfig(formant_range=(1.0, 1.4), invert_prob=0.0)
        rng = np.random.default_rng(77)
        draws = np.array([sample_perturb_params(config, rng).formant_ratio
                          for _ in range(10_000)])
        stat = scipy.stats.kstest(draws, scipy.stats.uniform(1.0, 0.4).cdf)
        assert stat.pvalue > 0.01

    def test_inversion_spans_reciprocal_range(self):
        config = PerturbConfig(f0_range=(1.0, 2.0), invert_prob=1.0)
        rng = np.random.default_rng(3)
        draws = [sample_perturb_params(config, rng).f0_ratio
                 for _ in range(200)]
        assert all(0.5 <= r <= 1.0 for r in draws)

    def test_deterministic_given_rng_state(self):
        config = PerturbConfig()
        a = sample_perturb_params(config, 42)
        b = sample_perturb_params(config, 42)
        assert a == b

    def test_eq_centers_strictly_increasing(self, rng):
        config = PerturbConfig(n_eq_peaks=8)
        for _ in range(20):
            p = sample_perturb_params(config, rng)
            centers = [c for c, _, _ in p.eq_peaks]
            assert all(x < y for x, y in zip(centers, centers[1:]))
            assert all(0 < c < 8000 for c in centers)

    def test_params_validation(self):
        with pytest.raises(ValidationError):
            PerturbParams(formant_ratio=2.5, f0_ratio=1.0).validate()
        with pytest.raises(ValidationError):
            PerturbParams(formant_ratio=1.0, f0_ratio=1.0,
                          eq_peaks=((500.0, 100.0, 15.0),)).validate()
        with pytest.raises(ValidationError):
            PerturbParams(formant_ratio=1.0, f0_ratio=1.0,
                          eq_peaks=((500.0, 100.0, 3.0),
                                    (400.0, 100.0, 3.0))).validate()


class TestWaveformPipeline:
    def test_identity_round_trip_below_minus_40db(self):
        x = gaussian_vowel()
        y = perturb_waveform(x, IDENTITY_PARAMS)
        rel = np.linalg.norm(y - x) / np.linalg.norm(x)
        assert 20 * np.log10(rel) <= -40.0

    def test_formant_scaling_moves_envelope_peaks(self):
        x = gaussian_vowel(formants=(500.0, 1500.0, 2500.0))
        y = perturb_waveform(x, PerturbParams(formant_ratio=1.2, f0_ratio=1.0))
        got = envelope_peaks(y, (600.0, 1800.0, 3000.0))
        for peak, target in zip(got, (600.0, 1800.0, 3000.0)):
            assert abs(peak - target) / target <= 0.03

    def test_f0_doubling(self):
        x = gaussian_vowel(f0=110.0)
        y = perturb_waveform(x, PerturbParams(formant_ratio=1.0, f0_ratio=2.0))
        f0 = autocorr_f0(y)
        assert abs(f0 - 220.0) / 220.0 <= 0.03

    def test_length_preserved_on_random_inputs(self, rng):
        config = PerturbConfig()
        for _ in range(25):
            n = int(rng.integers(3000, 20000))
            wave = 0.1 * rng.normal(size=n)
            params = sample_perturb_params(config, rng)
            assert perturb_waveform(wave, params).size == n

    def test_bit_determinism(self, rng):
        wave = 0.1 * rng.normal(size=9000)
        params = sample_perturb_params(PerturbConfig(), 5)
        a = perturb_waveform(wave, params)
        b = perturb_waveform(wave, params)
        assert np.array_equal(a, b)

    def test_eq_only_changes_spectrum_not_length(self, rng):
        wave = gaussian_vowel(seconds=0.5)
        params = PerturbParams(formant_ratio=1.0, f0_ratio=1.0,
                               eq_peaks=((300.0, 150.0, -9.0),
                                         (2000.0, 800.0, 9.0)),
                               low_shelf_gain_db=-6.0, high_shelf_gain_db=6.0)
        out = perturb_waveform(wave, params)
        assert out.size == wave.size
        f, pin = sp_signal.welch(wave, fs=16000, nperseg=2048)
        _, pout = sp_signal.welch(out, fs=16000, nperseg=2048)
        band = (f > 1500) & (f < 2500)
        low = (f > 200) & (f < 400)
        gain_hi = 10 * np.log10(pout[band].sum() / pin[band].sum())
        gain_lo = 10 * np.log10(pout[low].sum() / pin[low].sum())
        assert gain_hi > 3.0
        assert gain_lo < -3.0

    def test_rejects_bad_input(self):
        with pytest.raises(ValidationError):
            perturb_waveform(np.zeros(0), IDENTITY_PARAMS)
        with pytest.raises(ValidationError):
            perturb_waveform(np.zeros((10, 2)), IDENTITY_PARAMS)


class TestSyntheticPerturb:
    @pytest.fixture()
    def world(self):
        spec = SyntheticSpec(n_phones=5, n_speakers=3, feature_dim=16,
                             noise_std=0.0, transition_depth=1.0, seed=21)
        return SyntheticWorld.from_spec(spec)

    def test_same_voice_is_identity(self, world):
        labels = np.array([0, 0, 1, 2, 2, 2])
        v = world.voices[0]
        feats = world.render_frames(labels, v, 0.0)
        out = perturb_synthetic(feats, labels, world, v, v)
        assert np.array_equal(out, feats)

    def test_voice_swap_matches_direct_render(self, world):
        labels = np.array([1, 1, 1, 3, 3, 4])
        v1, v2 = world.voices[0], world.voices[1]
        feats1 = world.render_frames(labels, v1, 0.0)
        swapped = perturb_synthetic(feats1, labels, world, v1, v2)
        feats2 = world.render_frames(labels, v2, 0.0)
        assert np.max(np.abs(swapped - feats2)) == 0.0

    def test_labels_never_change(self, world, rng):
        labels = np.array([0, 1, 1, 2, 4, 4, 4])
        v = world.voices[2]
        feats = world.render_frames(labels, v, 0.0)
        out = perturb_synthetic(feats, labels, world, v,
                                SpeakerVoice(1.3, 0.8))
        assert out.shape == feats.shape  # frame-for-frame alignment

    def test_untraceable_features_rejected(self, world):
        labels = np.array([0, 1, 2])
        v = world.voices[0]
        feats = world.render_frames(labels, v, 0.0) + 1.0
        with pytest.raises(ValidationError, match="not traceable"):
            perturb_synthetic(feats, labels, world, v, world.voices[1])

    def test_shift_voice_composes_ratios(self):
        v = SpeakerVoice(formant_scale=1.1, f0_scale=0.9)
        p = PerturbParams(formant_ratio=1.2, f0_ratio=2.0)
        out = shift_voice(v, p)
        assert np.isclose(out.formant_scale, 1.32)
        assert np.isclose(out.f0_scale, 1.8)
