import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import central_difference, max_relative_error, soft_loss_reference
from softvc import units_soft as us
from softvc.core import FeatureSequence, UnitSequence
from softvc.errors import ConfigError, DataError
from softvc.optim import Adam, TrainConfig
from softvc.synthetic import centroid_corpus


def _fs(frames):
    return FeatureSequence("u", "s", np.asarray(frames))


class TestCosine:
    def test_self_similarity(self):
        v = np.array([3.0, -4.0, 0.5])
        assert us.cosine_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert us.cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_diagonal(self):
        assert us.cosine_similarity([1, 0], [1, 1]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_mismatch(self):
        with pytest.raises(DataError):
            us.cosine_similarity([1, 0], [1, 0, 0])


class TestSoftDistribution:
    def test_identical_embeddings_uniform(self):
        E = np.tile([0.3, -1.0, 2.0], (5, 1))
        p = us.soft_distribution(np.array([1.0, 2.0, 3.0]), E, 0.1)
        np.testing.assert_allclose(p, np.full(5, 0.2), atol=1e-12)

    @pytest.mark.parametrize("tau,expected", [(1.0, (0.73106, 0.26894)), (0.5, (0.88080, 0.11920))])
    def test_two_unit_closed_form(self, tau, expected):
        E = np.array([[1.0, 0.0], [0.0, 1.0]])
        p = us.soft_distribution(np.array([1.0, 0.0]), E, tau)
        np.testing.assert_allclose(p, expected, atol=1e-5)

    def test_lower_tau_sharpens(self):
        E = np.array([[1.0, 0.0], [0.0, 1.0]])
        s = np.array([1.0, 0.0])
        assert us.soft_distribution(s, E, 0.5)[0] > us.soft_distribution(s, E, 1.0)[0]

    @pytest.mark.parametrize("tau", [0.0, -0.1])
    def test_bad_tau(self, tau):
        with pytest.raises(ConfigError):
            us.soft_distribution(np.ones(2), np.eye(2), tau)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 10.0))
    def test_ordering_matches_similarities(self, seed, tau):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=6)
        E = rng.normal(size=(7, 6))
        p = us.soft_distribution(s, E, tau)
        sims = np.array([us.cosine_similarity(s, e) for e in E])
        assert abs(p.sum() - 1) <= 1e-6 and np.all(p > 0)
        assert np.argmax(p) == np.argmax(sims)


class TestForward:
    def test_identity_projection(self):
        X = np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32)
        params = us.SoftEncoderParams(np.eye(3), np.zeros(3), np.eye(3))
        soft, dist = us.soft_forward(_fs(X), params)
        np.testing.assert_array_equal(soft.vectors, X.astype(np.float64))
        np.testing.assert_array_equal(us.encode_soft(_fs(X), params).vectors, soft.vectors)

    def test_zero_projection_uniform(self):
        params = us.SoftEncoderParams(np.zeros((4, 3)), np.zeros(4), np.random.default_rng(1).normal(size=(5, 4)))
        _, dist = us.soft_forward(_fs(np.ones((2, 3))), params)
        np.testing.assert_allclose(dist, 0.2, atol=1e-12)

    def test_rows_sum_to_one(self):
        params = us.init_soft_params(5, 7, 4, seed=3)
        _, dist = us.soft_forward(_fs(np.random.default_rng(2).normal(size=(3, 5))), params)
        assert dist.shape == (3, 7)
        np.testing.assert_allclose(dist.sum(axis=1), 1.0, atol=1e-6)

    @pytest.mark.parametrize("T", [1, 5, 50])
    def test_shape(self, T):
        params = us.init_soft_params(5, 7, 4, seed=3)
        assert us.encode_soft(_fs(np.ones((T, 5))), params).vectors.shape == (T, 4)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            us.soft_forward(_fs(np.ones((2, 6))), us.init_soft_params(5, 3, 4))


class TestCrossEntropy:
    def test_certain(self):
        assert us.cross_entropy([0.0, 1.0], 1) == 0.0

    @pytest.mark.parametrize("K", [2, 100])
    def test_uniform(self, K):
        assert us.cross_entropy(np.full(K, 1 / K), 0) == pytest.approx(math.log(K))

    def test_label_range(self):
        with pytest.raises(DataError):
            us.cross_entropy([0.5, 0.5], 2)


class TestGradients:
    def _instance(self, seed):
        rng = np.random.default_rng(seed)
        params = us.SoftEncoderParams(rng.normal(size=(4, 5)), rng.normal(size=4), rng.normal(size=(3, 4)), 0.1)
        return params, rng.normal(size=(6, 5)), rng.integers(0, 3, size=6)

    def test_loss_matches_reference(self):
        params, X, y = self._instance(0)
        ref = soft_loss_reference(params.W, params.b, params.E, params.tau, X, y)
        assert us.soft_loss(params, X, y) == pytest.approx(ref, rel=1e-12)
        assert us.soft_loss_and_gradients(params, X, y)[0] == pytest.approx(ref, rel=1e-12)

    def test_finite_differences(self):
        params, X, y = self._instance(1)
        grads = us.soft_gradients(params, X, y).arrays()
        arrays = params.arrays()
        numeric = central_difference(lambda: soft_loss_reference(arrays["W"], arrays["b"], arrays["E"], 0.1, X, y), arrays)
        assert max_relative_error(grads, numeric) <= 1e-4

    def test_duplicated_batch_same_gradient(self):
        params, X, y = self._instance(2)
        g1 = us.soft_gradients(params, X, y).arrays()
        g2 = us.soft_gradients(params, np.vstack([X, X]), np.concatenate([y, y])).arrays()
        for name in g1:
            np.testing.assert_allclose(g1[name], g2[name], rtol=1e-12, atol=1e-14)

    def test_split_additivity(self):
        params, X, y = self._instance(3)
        full = us.soft_gradients(params, X, y).arrays()
        a = us.soft_gradients(params, X[:2], y[:2]).arrays()
        b = us.soft_gradients(params, X[2:], y[2:]).arrays()
        for name in full:
            np.testing.assert_allclose(full[name], (2 * a[name] + 4 * b[name]) / 6, rtol=1e-10, atol=1e-13)


class TestAdam:
    def test_first_step_moves_by_lr_times_sign(self):
        p = {"x": np.array([1.0, -2.0])}
        Adam(p, lr=0.1).step({"x": np.array([3.0, -0.5])})
        # bias-corrected first step is lr * g / (|g| + eps)
        np.testing.assert_allclose(p["x"], [0.9, -1.9], atol=1e-7)


class TestTraining:
    def _dataset(self, n=400, seed=0):
        corpus = centroid_corpus(K=4, D=6, n=n, sigma=0.01, seed=seed)
        return corpus, [(corpus.frames, UnitSequence("x", corpus.labels, 4))]

    def test_zero_lr_keeps_parameters(self):
        _, data = self._dataset()
        init = us.init_soft_params(6, 4, 8, seed=1)
        trained, _ = us.train_soft_encoder(data, TrainConfig(learning_rate=0.0, steps=20, batch_frames=32), init)
        for name, arr in init.arrays().items():
            assert arr.tobytes() == trained.arrays()[name].tobytes()
        full = us.soft_loss(init, data[0][0], data[0][1].units)
        assert us.soft_loss(trained, data[0][0], data[0][1].units) == full

    def test_deterministic(self):
        _, data = self._dataset()
        cfg = TrainConfig(learning_rate=1e-3, steps=30, batch_frames=32, seed=5)
        _, a = us.train_soft_encoder(data, cfg, dim=8)
        _, b = us.train_soft_encoder(data, cfg, dim=8)
        assert a == b

    def test_loss_decreases(self):
        corpus, data = self._dataset()
        cfg = TrainConfig(learning_rate=1e-2, steps=200, batch_frames=64, seed=0)
        init = us.init_soft_params(6, 4, 16, seed=0)
        trained, _ = us.train_soft_encoder(data, cfg, init)
        assert us.soft_loss(trained, corpus.frames, corpus.labels) < us.soft_loss(init, corpus.frames, corpus.labels)

    def test_k_mismatch(self):
        _, data = self._dataset()
        with pytest.raises(ConfigError):
            us.train_soft_encoder(data, TrainConfig(steps=1), us.init_soft_params(6, 5, 8))

    def test_checkpoint_round_trip(self, tmp_path):
        params = us.init_soft_params(5, 3, 4, seed=2)
        for arr in params.arrays().values():
            arr[...] = arr.astype(np.float32)
        us.save_soft_encoder(params, tmp_path / "se.ckpt", seed=2, step=9)
        back, meta = us.load_soft_encoder(tmp_path / "se.ckpt")
        for name, arr in params.arrays().items():
            assert back.arrays()[name].tobytes() == arr.tobytes()
        assert meta["step"] == 9 and back.tau == params.tau
