import numpy as np
import pytest

from sivq.corpus import FrameBatchPair, SyntheticSpec, generate_synthetic_corpus
from sivq.errors import ValidationError
from sivq.model import init_params
from sivq.perturb import PerturbConfig
from sivq.training import (Adam, TrainConfig, codebook_utilization,
                           compute_targets, forward_loss, loss_gradients,
                           lr_schedule, processed_speech_hours, swapped_loss,
                           train, _forward_view)


def _random_pair(rng, b, d0):
    return FrameBatchPair(rng.normal(size=(b, d0)), rng.normal(size=(b, d0)),
                          np.zeros(b, dtype=int), np.zeros(b, dtype=int))


def _random_stochastic(rng, b, k):
    p = rng.uniform(0.01, 1.0, size=(b, k))
    return p / p.sum(axis=1, keepdims=True)


class TestSwappedLoss:
    def test_perfect_one_hot_prediction_is_zero(self):
        p = np.eye(4)
        assert swapped_loss(p, p, p, p) == 0.0

    def test_uniform_everything_gives_log_k(self):
        k = 8
        u = np.full((5, k), 1.0 / k)
        assert np.isclose(swapped_loss(u, u, u, u), np.log(k), atol=1e-12)

    def test_matches_naive_double_sum(self, rng):
        b, k = 3, 4
        p, pt, q, qt = (_random_stochastic(rng, b, k) for _ in range(4))
        naive = 0.0
        for i in range(b):
            for j in range(k):
                naive -= qt[i, j] * np.log(p[i, j]) + q[i, j] * np.log(pt[i, j])
        naive /= 2 * b
        assert np.isclose(swapped_loss(p, pt, q, qt), naive, atol=1e-12)

    def test_symmetry_under_view_swap(self, rng):
        b, k = 6, 5
        p, pt, q, qt = (_random_stochastic(rng, b, k) for _ in range(4))
        assert np.isclose(swapped_loss(p, pt, q, qt),
                          swapped_loss(pt, p, qt, q), atol=1e-15)

    def test_lower_bound_is_target_entropy(self, rng):
        b, k = 10, 6
        q, qt = _random_stochastic(rng, b, k), _random_stochastic(rng, b, k)
        floor = 0.5 * (np.mean([-np.sum(r * np.log(r)) for r in q])
                       + np.mean([-np.sum(r * np.log(r)) for r in qt]))
        for _ in range(20):
            p, pt = _random_stochastic(rng, b, k), _random_stochastic(rng, b, k)
            assert swapped_loss(p, pt, q, qt) >= floor - 1e-9
        # equality when predictions match targets rowwise
        assert np.isclose(swapped_loss(q, qt, qt, q), floor, atol=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        p = _random_stochastic(rng, 4, 3)
        with pytest.raises(ValidationError):
            swapped_loss(p, p, p, _random_stochastic(rng, 4, 5))


class TestGradients:
    def test_finite_differences_small_configs(self, rng):
        # the full 100-configuration sweep runs in the acceptance suite
        worst = 0.0
        for _ in range(10):
            b = int(rng.integers(2, 9))
            k = int(rng.integers(2, 6))
            d = int(rng.integers(2, 7))
            d0 = int(rng.integers(2, 7))
            hid = int(rng.integers(2, 7))
            layers = int(rng.integers(0, 4))
            frozen = int(rng.integers(0, layers + 1))
            enc, proj, cb = init_params(d0, hid, layers, frozen, k, d,
                                        tau=0.3, seed=int(rng.integers(1 << 30)))
            cfg = TrainConfig(k=k, d=d, tau=0.3, epsilon=0.05, hidden_dim=hid,
                              n_layers=layers, n_frozen=frozen)
            pair = _random_pair(rng, b, d0)
            f1 = _forward_view(pair.original, enc, proj, cb)
            f2 = _forward_view(pair.perturbed, enc, proj, cb)
            targets = compute_targets(f1["z"], f2["z"], cb, cfg)
            _, grads, _ = loss_gradients(pair, enc, proj, cb, cfg,
                                         targets=targets)
            blocks = [(enc.weights[i], f"enc_w_{i}")
                      for i in range(frozen, layers)]
            blocks += [(proj.weight, "proj_w"), (proj.bias, "proj_b"),
                       (cb.codewords, "codewords")]
            h = 1e-6
            for arr, name in blocks:
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = arr[idx]
                    arr[idx] = orig + h
                    up = forward_loss(pair, enc, proj, cb, targets)
                    arr[idx] = orig - h
                    down = forward_loss(pair, enc, proj, cb, targets)
                    arr[idx] = orig
                    fd = (up - down) / (2 * h)
                    g = grads[name][idx]
                    worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-8))
        assert worst <= 1e-4

    def test_frozen_blocks_exactly_zero(self, rng):
        enc, proj, cb = init_params(5, 6, 3, 2, k=4, d=4, seed=1)
        cfg = TrainConfig(k=4, d=4, hidden_dim=6, n_layers=3, n_frozen=2)
        _, grads, _ = loss_gradients(_random_pair(rng, 6, 5), enc, proj, cb, cfg)
        for i in range(2):
            assert np.all(grads[f"enc_w_{i}"] == 0.0)
            assert np.all(grads[f"enc_b_{i}"] == 0.0)
        assert np.any(grads["enc_w_2"] != 0.0)

    def test_codeword_tangent_gradient_matches_projected_fd(self, rng):
        # moving a codeword along the sphere tangent then renormalizing
        # matches the tangent component of the analytic gradient
        enc, proj, cb = init_params(5, 6, 2, 1, k=4, d=5, seed=2)
        cfg = TrainConfig(k=4, d=5, hidden_dim=6, n_layers=2, n_frozen=1)
        pair = _random_pair(rng, 7, 5)
        f1 = _forward_view(pair.original, enc, proj, cb)
        f2 = _forward_view(pair.perturbed, enc, proj, cb)
        targets = compute_targets(f1["z"], f2["z"], cb, cfg)
        _, grads, _ = loss_gradients(pair, enc, proj, cb, cfg, targets=targets)
        h = 1e-6
        for k_idx in range(4):
            c = cb.codewords[k_idx].copy()
            v = rng.normal(size=5)
            v -= (v @ c) * c
            v /= np.linalg.norm(v)
            g_tan = grads["codewords"][k_idx] @ v

            def loss_at(t):
                moved = c + t * v
                cb.codewords[k_idx] = moved / np.linalg.norm(moved)
                val = forward_loss(pair, enc, proj, cb, targets)
                cb.codewords[k_idx] = c
                return val

            fd = (loss_at(h) - loss_at(-h)) / (2 * h)
            assert abs(fd - g_tan) / max(abs(fd), abs(g_tan), 1e-8) <= 1e-4

    def test_nonfinite_gradient_reports_block(self, rng):
        enc, proj, cb = init_params(4, 5, 1, 0, k=3, d=4, seed=3)
        cfg = TrainConfig(k=3, d=4, hidden_dim=5, n_layers=1, n_frozen=0)
        pair = _random_pair(rng, 4, 4)
        f1 = _forward_view(pair.original, enc, proj, cb)
        f2 = _forward_view(pair.perturbed, enc, proj, cb)
        bad = (np.full((4, 3), np.nan), f2["p"])
        with pytest.raises(ValidationError, match="non-finite gradient"):
            loss_gradients(pair, enc, proj, cb, cfg, targets=bad)


class TestSchedule:
    def test_anchor_points(self):
        cfg = TrainConfig()
        assert lr_schedule(0, cfg) == 0.0
        assert lr_schedule(2500, cfg) == 1e-4
        assert lr_schedule(5000, cfg) == 1e-6

    def test_piecewise_linear_midpoints(self):
        cfg = TrainConfig()
        assert np.isclose(lr_schedule(1250, cfg), 5e-5)
        assert np.isclose(lr_schedule(3750, cfg), (1e-4 + 1e-6) / 2)

    def test_out_of_range_rejected(self):
        cfg = TrainConfig()
        with pytest.raises(ValidationError):
            lr_schedule(-1, cfg)
        with pytest.raises(ValidationError):
            lr_schedule(5001, cfg)


class TestBookkeeping:
    def test_processed_hours_paper_value(self):
        hours = processed_speech_hours(5000, 256.0)
        assert np.isclose(hours, 355.5555, atol=1e-3)
        assert round(hours) == 356

    def test_processed_hours_trivia(self):
        assert processed_speech_hours(0, 256.0) == 0.0
        assert processed_speech_hours(1, 3600.0) == 1.0

    def test_utilization(self, rng):
        assert codebook_utilization(np.zeros(10, dtype=int), 8) == 1 / 8
        assert codebook_utilization(np.arange(8), 8) == 1.0
        ids = rng.integers(0, 256, size=100_000)
        assert codebook_utilization(ids, 256) == len(set(ids.tolist())) / 256
        with pytest.raises(ValidationError):
            codebook_utilization(np.array([5]), 4)


class TestAdam:
    def test_moves_toward_minimum(self):
        x = np.array([5.0])
        opt = Adam({"x": x})
        for _ in range(500):
            opt.step({"x": 2 * x}, lr=0.05)
        assert abs(x[0]) < 1e-2


@pytest.fixture(scope="module")
def train_corpus():
    spec = SyntheticSpec(n_phones=6, n_speakers=4, feature_dim=16,
                         noise_std=0.05, transition_depth=1.0, seed=9,
                         n_utterances=24, phones_per_utterance=(3, 6))
    return generate_synthetic_corpus(spec)


def _tiny_config(**kw):
    base = dict(k=8, d=8, hidden_dim=12, n_layers=2, n_frozen=1,
                batch_seconds=8.0, total_steps=20, warmup_steps=5,
                lr_peak=3e-3, lr_final=1e-5, seed=5)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainLoop:
    def test_zero_steps_returns_init(self, train_corpus):
        cfg = _tiny_config(total_steps=0, warmup_steps=0)
        result, log = train(train_corpus, cfg, PerturbConfig())
        enc0, proj0, cb0 = init_params(16, 12, 2, 1, k=8, d=8, tau=cfg.tau,
                                       seed=5)
        assert len(log.records) == 0
        for a, b in zip(result.encoder.weights, enc0.weights):
            assert np.array_equal(a, b)
        assert np.array_equal(result.codebook.codewords, cb0.codewords)

    def test_same_seed_bit_identical_losses(self, train_corpus):
        cfg = _tiny_config()
        _, log1 = train(train_corpus, cfg, PerturbConfig())
        _, log2 = train(train_corpus, cfg, PerturbConfig())
        assert np.array_equal(log1.losses(), log2.losses())

    def test_frozen_layer_untouched_by_training(self, train_corpus):
        cfg = _tiny_config()
        enc0, _, _ = init_params(16, 12, 2, 1, k=8, d=8, tau=cfg.tau, seed=5)
        result, _ = train(train_corpus, cfg, PerturbConfig())
        assert np.array_equal(result.encoder.weights[0], enc0.weights[0])
        assert not np.array_equal(result.encoder.weights[1], enc0.weights[1])

    def test_codewords_unit_norm_after_training(self, train_corpus):
        result, _ = train(train_corpus, _tiny_config(), PerturbConfig())
        norms = np.linalg.norm(result.codebook.codewords, axis=1)
        assert np.abs(norms - 1.0).max() <= 1e-6

    def test_log_has_one_record_per_step(self, train_corpus):
        _, log = train(train_corpus, _tiny_config(total_steps=13,
                                                  warmup_steps=3),
                       PerturbConfig())
        assert [r.step for r in log.records] == list(range(1, 14))

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            _tiny_config(warmup_steps=50, total_steps=10).validate()
        with pytest.raises(ValidationError):
            _tiny_config(lr_peak=1e-6, lr_final=1e-4).validate()
        with pytest.raises(ValidationError):
            _tiny_config(target_mode="nope").validate()
