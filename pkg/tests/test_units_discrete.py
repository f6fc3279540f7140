import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import brute_force_kmeans_inertia, nearest_by_scan
from softvc.core import FeatureSequence
from softvc.errors import DataError
from softvc.units_discrete import Codebook, encode_discrete, kmeans_fit, nearest_centroid, speaker_normalize


def _fs(frames, speaker="s", uid="u"):
    return FeatureSequence(uid, speaker, np.asarray(frames, dtype=np.float64))


class TestSpeakerNormalize:
    def test_two_points(self):
        (out,) = speaker_normalize([_fs([[1.0], [3.0]])])
        np.testing.assert_allclose(out.frames, [[-1.0], [1.0]])

    def test_constant_dimension_maps_to_zero(self):
        (out,) = speaker_normalize([_fs([[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]])])
        np.testing.assert_array_equal(out.frames[:, 1], 0.0)

    def test_offsets_removed(self):
        content = np.random.default_rng(0).normal(size=(30, 4))
        a = _fs(content + np.array([1.0, -2.0, 3.0, 0.5]), "A", "a")
        b = _fs(content - 7.0, "B", "b")
        na, nb = speaker_normalize([a, b])
        # frames are stored as float32
        np.testing.assert_allclose(na.frames, nb.frames, atol=1e-5)

    def test_pools_utterances_of_one_speaker(self):
        a = _fs([[0.0]], "A", "a1")
        b = _fs([[2.0]], "A", "a2")
        na, nb = speaker_normalize([a, b])
        assert (na.frames[0, 0], nb.frames[0, 0]) == (-1.0, 1.0)

    def test_single_frame_speaker(self):
        with pytest.raises(DataError):
            speaker_normalize([_fs([[1.0, 2.0]])])


class TestKMeans:
    def test_four_points(self):
        X = np.array([[0, 0], [0, 2], [10, 0], [10, 2]], dtype=float)
        cb = kmeans_fit(X, K=2, seed=0)
        got = sorted(map(tuple, cb.centroids.tolist()))
        assert got == [(0.0, 1.0), (10.0, 1.0)]
        assert cb.inertia == pytest.approx(4.0, abs=1e-12)
        assert brute_force_kmeans_inertia(X, 2) == pytest.approx(4.0)

    def test_n_equals_k(self):
        X = np.random.default_rng(1).normal(size=(5, 3))
        cb = kmeans_fit(X, K=5, seed=3)
        assert sorted(map(tuple, cb.centroids.tolist())) == sorted(map(tuple, X.tolist()))
        assert cb.inertia == 0.0

    def test_k1_is_mean(self):
        X = np.random.default_rng(2).normal(size=(40, 3))
        cb = kmeans_fit(X, K=1)
        np.testing.assert_allclose(cb.centroids[0], X.mean(axis=0), atol=1e-12)

    def test_too_few_frames(self):
        with pytest.raises(DataError):
            kmeans_fit(np.zeros((2, 2)), K=3)

    def test_reproducible(self):
        X = np.random.default_rng(4).normal(size=(300, 5))
        a = kmeans_fit(X, K=7, seed=11)
        b = kmeans_fit(X, K=7, seed=11)
        assert a.centroids.tobytes() == b.centroids.tobytes()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 3))
    def test_matches_brute_force(self, seed, n, K):
        K = min(K, n)
        X = np.random.default_rng(seed).normal(size=(n, 2))
        cb = kmeans_fit(X, K=K, seed=seed)
        assert abs(cb.inertia - brute_force_kmeans_inertia(X, K)) <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_inertia_history_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(int(rng.integers(20, 120)), 3))
        cb = kmeans_fit(X, K=int(rng.integers(2, 8)), seed=seed, n_init=1, refine=False)
        h = cb.inertia_history
        assert all(b <= a * (1 + 1e-12) for a, b in zip(h, h[1:]))

    def test_save_load_bit_exact(self, tmp_path):
        X = np.random.default_rng(5).normal(size=(60, 4))
        cb = kmeans_fit(X, K=4, seed=2)
        cb.centroids = cb.centroids.astype(np.float32).astype(np.float64)
        cb.save(tmp_path / "cb.vccb")
        back = Codebook.load(tmp_path / "cb.vccb")
        assert back.centroids.tobytes() == cb.centroids.tobytes()
        assert (back.K, back.D, back.seed) == (4, 4, 2)


class TestEncode:
    def setup_method(self):
        self.C = np.random.default_rng(9).normal(size=(10, 4))
        self.cb = Codebook(self.C)

    def test_centroid_maps_to_itself(self):
        units = encode_discrete(_fs(self.C), self.cb).units
        np.testing.assert_array_equal(units, np.arange(10))

    def test_frame_equal_to_centroid_7(self):
        assert encode_discrete(_fs(self.C[7:8]), self.cb).units.tolist() == [7]

    def test_tie_goes_to_lower_index(self):
        C = np.zeros((6, 2))
        C[2] = [-1.0, 0.0]
        C[5] = [1.0, 0.0]
        C[[0, 1, 3, 4]] = [[50, 50], [60, 60], [70, 70], [80, 80]]
        assert nearest_centroid(np.zeros((1, 2)), C).tolist() == [2]

    def test_matches_scan(self):
        X = np.random.default_rng(10).normal(size=(20, 4))
        got = encode_discrete(_fs(X), self.cb).units.tolist()
        assert got == [nearest_by_scan(x, self.C) for x in X]

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            encode_discrete(_fs(np.zeros((3, 5))), self.cb)
