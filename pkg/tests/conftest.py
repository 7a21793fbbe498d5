import numpy as np
import pytest

from sivq.corpus import SyntheticSpec, generate_synthetic_corpus


@pytest.fixture(scope="session")
def small_corpus():
    spec = SyntheticSpec(n_phones=8, n_speakers=4, phone_frequency_skew=0.8,
                         feature_dim=24, noise_std=0.05, seed=11,
                         n_utterances=40, phones_per_utterance=(3, 6))
    return generate_synthetic_corpus(spec)


@pytest.fixture(scope="session")
def audio_corpus():
    spec = SyntheticSpec(n_phones=4, n_speakers=2, feature_dim=24,
                         noise_std=0.01, mode="audio", seed=5,
                         n_utterances=6, phones_per_utterance=(2, 4),
                         frames_per_phone=(4, 8))
    return generate_synthetic_corpus(spec)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
