"""Constructed corpora with known structure, for tests and demos.

Centroid corpora place frames at ``centroid + N(0, sigma^2)``; the lookup
corpus additionally ties every unit to a fixed mel frame so the acoustic model
has an exact target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from softvc.core import FeatureSequence


@dataclass
class CentroidCorpus:
    centroids: np.ndarray  # K x D
    frames: np.ndarray  # N x D
    labels: np.ndarray  # N, generating centroid per frame

    @property
    def K(self) -> int:
        return self.centroids.shape[0]


def centroid_corpus(K: int = 10, D: int = 8, n: int = 2000, sigma: float = 0.01, seed: int = 0,
                    centroids: np.ndarray | None = None) -> CentroidCorpus:
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(K, D)) if centroids is None else np.asarray(centroids, dtype=np.float64)
    labels = rng.integers(0, C.shape[0], size=n)
    frames = C[labels] + sigma * rng.normal(size=(n, C.shape[1]))
    return CentroidCorpus(C, frames, labels)


def ambiguous_pair_corpus(K: int = 10, D: int = 8, n: int = 2000, sigma: float = 0.01,
                          pair_gap: float = 0.5, pair_sigma: float = 0.25, seed: int = 0) -> CentroidCorpus:
    """Centroid corpus where units 0 and 1 sit ``pair_gap`` apart with wide, overlapping clouds.

    Frames near the midpoint of the pair are genuinely ambiguous, the way
    frames of acoustically similar sounds are.
    """
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(K, D))
    direction = rng.normal(size=D)
    C[1] = C[0] + pair_gap * direction / np.linalg.norm(direction)
    labels = rng.integers(0, K, size=n)
    scale = np.where(labels < 2, pair_sigma, sigma)
    frames = C[labels] + scale[:, None] * rng.normal(size=(n, D))
    return CentroidCorpus(C, frames, labels)


@dataclass
class LookupCorpus:
    centroids: np.ndarray  # K x D feature centroids
    mel_table: np.ndarray  # K x n_mels, the mel frame each unit produces
    utterances: list[FeatureSequence]
    unit_ids: list[np.ndarray]  # generating unit per feature frame
    upsample_factor: int

    def target_mel(self, i: int) -> np.ndarray:
        return np.repeat(self.mel_table[self.unit_ids[i]], self.upsample_factor, axis=0)


def lookup_corpus(K: int = 8, D: int = 6, n_mels: int = 128, n_utts: int = 12, frames_per_utt: int = 40,
                  sigma: float = 0.01, upsample_factor: int = 2, seed: int = 0) -> LookupCorpus:
    """Utterances whose every unit deterministically produces one mel frame."""
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(K, D))
    table = rng.normal(scale=1.0, size=(K, n_mels)) - 6.0
    utts, ids = [], []
    for u in range(n_utts):
        units = rng.integers(0, K, size=frames_per_utt)
        feats = C[units] + sigma * rng.normal(size=(frames_per_utt, D))
        utts.append(FeatureSequence(f"utt{u:03d}", f"spk{u % 3}", feats))
        ids.append(units)
    return LookupCorpus(C, table, utts, ids, upsample_factor)
