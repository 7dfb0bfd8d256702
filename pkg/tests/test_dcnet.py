import numpy as np
import pytest
import torch

from bootsep import dcnet
from bootsep.dcnet import (
    DcnetError,
    EmbeddingNetwork,
    NetworkConfig,
    NotTrainedError,
    PlateauScheduler,
    TrainingConfig,
    forward,
    load_checkpoint,
    loss_gradient,
    save_checkpoint,
    train,
    weighted_dc_loss,
)
from bootsep.signal import Waveform


def small_net(seed=0, dtype=torch.float64, n_freq=11, d=3):
    cfg = NetworkConfig(n_freq=n_freq, embedding_dim=d, hidden_size=6, num_layers=2)
    return EmbeddingNetwork(cfg, seed=seed, dtype=dtype)


def random_instance(seed, t=5, f=11):
    rng = np.random.default_rng(seed)
    log_mag = rng.uniform(-50, 0, size=(t, f))
    labels = rng.integers(0, 2, size=(t, f))
    weights = rng.uniform(0, 1, size=(t, f))
    weights /= weights.sum()
    return log_mag, labels, weights


def brute_force_loss(v, labels, weights, n_sources=2):
    v = np.asarray(v)
    y = np.eye(n_sources)[np.asarray(labels).reshape(-1)]
    w = np.asarray(weights).reshape(-1)
    total = 0.0
    for i in range(v.shape[0]):
        for j in range(v.shape[0]):
            total += w[i] * w[j] * (v[i] @ v[j] - y[i] @ y[j]) ** 2
    return total


class TestForward:
    def test_unit_norm_rows(self):
        net = small_net()
        log_mag, _, _ = random_instance(0)
        v = forward(net, log_mag)
        np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-6)

    def test_zero_input_zero_head_constant_embeddings(self):
        net = small_net()
        with torch.no_grad():
            net.dense.weight.zero_()
            net.dense.bias.zero_()
        v = forward(net, np.full((4, 11), -60.0))
        assert np.allclose(v, v[0])

    def test_deterministic(self):
        log_mag, _, _ = random_instance(1)
        a = forward(small_net(seed=3), log_mag)
        b = forward(small_net(seed=3), log_mag)
        assert np.array_equal(a, b)

    def test_non_finite_input_rejected(self):
        net = small_net()
        bad = np.full((2, 11), np.nan)
        with pytest.raises(DcnetError):
            forward(net, bad)

    def test_parameter_count_reported(self):
        net = small_net()
        assert net.n_parameters == sum(p.numel() for p in net.parameters())


class TestWeightedDcLoss:
    def test_perfect_embeddings_zero_loss(self):
        labels = np.array([0, 1, 0, 1])
        v = np.eye(2)[labels]
        w = np.full(4, 0.25)
        assert weighted_dc_loss(v, labels, w, 2) == pytest.approx(0.0, abs=1e-12)

    def test_two_bin_hand_case(self):
        v = np.array([[1.0, 0.0], [1.0, 0.0]])
        labels = np.array([0, 1])
        w = np.array([1.0, 1.0])
        assert weighted_dc_loss(v, labels, w, 2) == pytest.approx(2.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(4, 31))
        d = int(rng.integers(2, 6))
        v = rng.standard_normal((m, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        labels = rng.integers(0, 2, size=m)
        w = rng.uniform(0, 1, size=m)
        assert weighted_dc_loss(v, labels, w, 2) == pytest.approx(
            brute_force_loss(v, labels, w), abs=1e-9
        )

    def test_orthogonal_invariance(self):
        rng = np.random.default_rng(11)
        v = rng.standard_normal((20, 4))
        labels = rng.integers(0, 2, size=20)
        w = rng.uniform(0, 1, size=20)
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        assert weighted_dc_loss(v @ q, labels, w, 2) == pytest.approx(
            weighted_dc_loss(v, labels, w, 2), abs=1e-9
        )

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(12)
        v = rng.standard_normal((15, 3))
        labels = rng.integers(0, 2, size=15)
        w = rng.uniform(0, 1, size=15)
        assert weighted_dc_loss(v, 1 - labels, w, 2) == pytest.approx(
            weighted_dc_loss(v, labels, w, 2), abs=1e-9
        )

    def test_weight_doubling_quadruples(self):
        rng = np.random.default_rng(13)
        v = rng.standard_normal((10, 3))
        labels = rng.integers(0, 2, size=10)
        w = rng.uniform(0, 1, size=10)
        assert weighted_dc_loss(v, labels, 2 * w, 2) == pytest.approx(
            4 * weighted_dc_loss(v, labels, w, 2), rel=1e-9
        )

    def test_non_negative(self):
        rng = np.random.default_rng(14)
        for seed in range(5):
            v = rng.standard_normal((12, 3))
            labels = rng.integers(0, 2, size=12)
            w = rng.uniform(0, 1, size=12)
            assert weighted_dc_loss(v, labels, w, 2) >= 0

    def test_negative_weights_rejected(self):
        with pytest.raises(DcnetError):
            weighted_dc_loss(np.ones((2, 2)), np.array([0, 1]), np.array([1.0, -1.0]), 2)

    def test_length_mismatch_rejected(self):
        with pytest.raises(DcnetError):
            weighted_dc_loss(np.ones((3, 2)), np.array([0, 1]), np.ones(3), 2)


class TestLossGradient:
    def test_matches_central_differences(self):
        net = small_net(seed=5)
        batch = random_instance(5)
        grad = loss_gradient(net, batch, n_sources=2)
        p0 = dcnet.parameter_vector(net)
        rng = np.random.default_rng(6)
        idx = rng.choice(p0.size, size=60, replace=False)

        def loss_at(vec):
            dcnet.set_parameter_vector(net, vec)
            v = forward(net, batch[0])
            return weighted_dc_loss(v, batch[1], batch[2], 2)

        for i in idx:
            e = np.zeros_like(p0)
            e[i] = 1e-5
            fd = (loss_at(p0 + e) - loss_at(p0 - e)) / 2e-5
            denom = max(abs(grad[i]), abs(fd), 1e-8)
            assert abs(grad[i] - fd) / denom < 1e-4

    def test_zero_weights_zero_gradient(self):
        net = small_net(seed=7)
        log_mag, labels, _ = random_instance(7)
        grad = loss_gradient(net, (log_mag, labels, np.zeros_like(log_mag)), 2)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)


class TestPlateauScheduler:
    def test_two_triggers_quarter_rate(self):
        sched = PlateauScheduler(1e-3, patience=5, decay=0.5)
        sched.step(1.0)  # establishes the best
        lr = 1e-3
        for _ in range(2):
            for _ in range(5):
                lr = sched.step(1.0)  # no improvement
        assert lr == pytest.approx(1e-3 * 0.25)

    def test_improvement_resets_patience(self):
        sched = PlateauScheduler(1e-3, patience=3, decay=0.5)
        sched.step(1.0)
        sched.step(1.0)
        sched.step(1.0)
        sched.step(0.5)  # improvement
        sched.step(0.6)
        sched.step(0.6)
        assert sched.lr == 1e-3


def toy_training_data(n_mixtures=8, seed=0, t=20, f=11):
    """Separable toy corpus: two disjoint frequency bands."""
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n_mixtures):
        log_mag = rng.uniform(-60, -40, size=(t, f))
        labels = np.zeros((t, f), dtype=int)
        split = f // 2
        labels[:, split:] = 1
        loud = rng.uniform(-10, 0, size=(t, f))
        on = rng.uniform(size=(t, f)) < 0.5
        log_mag[on] = loud[on]
        weights = np.exp(log_mag / 20.0)
        weights /= weights.sum()
        items.append((log_mag, labels, weights))
    return items


class TestTrain:
    def test_toy_corpus_loss_drops(self):
        data = toy_training_data(10)
        net = small_net(seed=1, dtype=torch.float32)
        cfg = TrainingConfig(epochs=50, batch_size=4, max_frames=400, seed=0)
        result = train(net, data[:8], data[8:], cfg)
        assert result.train_losses[-1] <= 0.1 * result.train_losses[0]
        assert net.trained

    def test_deterministic_training(self):
        data = toy_training_data(6, seed=1)
        results = []
        for _ in range(2):
            net = small_net(seed=2, dtype=torch.float32)
            cfg = TrainingConfig(epochs=3, batch_size=3, seed=4)
            r = train(net, data[:4], data[4:], cfg)
            results.append((dcnet.parameter_vector(net), r.train_losses))
        assert np.array_equal(results[0][0], results[1][0])
        assert results[0][1] == results[1][1]

    def test_empty_dataset_rejected(self):
        net = small_net()
        with pytest.raises(DcnetError):
            train(net, [], [], TrainingConfig())

    def test_bad_config_rejected(self):
        with pytest.raises(DcnetError):
            TrainingConfig(epochs=0)
        with pytest.raises(DcnetError):
            TrainingConfig(lr_decay=1.5)


class TestInfer:
    def trained_toy_net(self):
        data = toy_training_data(8, seed=2, f=129)
        net = EmbeddingNetwork(
            NetworkConfig(n_freq=129, embedding_dim=4, hidden_size=8, num_layers=1),
            seed=3,
            dtype=torch.float32,
        )
        train(net, data[:6], data[6:], TrainingConfig(epochs=2, batch_size=4))
        return net

    def test_untrained_flagged(self):
        net = small_net(n_freq=129)
        w = Waveform(np.zeros((1, 1600)) + 0.01, 8000)
        with pytest.raises(NotTrainedError):
            dcnet.infer(net, w, 2)

    def test_bad_source_count(self):
        net = self.trained_toy_net()
        w = Waveform(0.1 * np.random.default_rng(0).standard_normal((1, 1600)), 8000)
        with pytest.raises(DcnetError):
            dcnet.infer(net, w, 1)

    def test_stems_sum_to_input(self):
        net = self.trained_toy_net()
        w = Waveform(0.1 * np.random.default_rng(1).standard_normal((1, 2048)), 8000)
        stems = dcnet.infer(net, w, 2, seed=5)
        assert len(stems) == 2
        total = stems[0].samples + stems[1].samples
        assert np.abs(total - w.samples).max() < 1e-6


class TestKmeansOnEmbeddings:
    def test_exact_groups_recovered(self):
        from bootsep.cluster import kmeans

        rng = np.random.default_rng(3)
        units = np.eye(3)[:2]
        assignment = rng.integers(0, 2, size=40)
        data = units[assignment]
        labels, _, inertia = kmeans(data, 2, seed=0)
        assert inertia == pytest.approx(0.0, abs=1e-12)
        # same partition up to relabeling
        assert len({(a, b) for a, b in zip(assignment, labels)}) == 2


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = small_net(seed=9, dtype=torch.float32)
        net.trained = True
        path = tmp_path / "model.ckpt"
        save_checkpoint(net, path, extra={"epoch": 3})
        back, header = load_checkpoint(path)
        assert header["epoch"] == 3
        assert back.trained
        np.testing.assert_array_equal(
            dcnet.parameter_vector(back).astype(np.float32),
            dcnet.parameter_vector(net).astype(np.float32),
        )

    def test_byte_identical_rewrites(self, tmp_path):
        net = small_net(seed=10, dtype=torch.float32)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(net, p1)
        save_checkpoint(net, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_non_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(DcnetError):
            load_checkpoint(path)
