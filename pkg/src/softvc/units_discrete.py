"""Discrete content encoder: speaker normalization, k-means, nearest centroid."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from softvc.core import FeatureSequence, UnitSequence, read_json_sidecar, read_tensor_kind, write_json_sidecar, write_tensor
from softvc.errors import ConfigError, DataError

log = logging.getLogger(__name__)

DEFAULT_K = 100
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 100
NORM_EPS = 1e-8

# Frames are encoded in chunks so the T x K x D difference tensor stays small.
_CHUNK_ELEMENTS = 1 << 22


@dataclass
class Codebook:
    """K centroids defining the dictionary of discrete units."""

    centroids: np.ndarray
    seed: int = 0
    inertia: float = float("nan")
    iterations: int = 0
    inertia_history: list[float] = field(default_factory=list, repr=False)
    speaker_normalized: bool = False

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise DataError(f"centroids must be a K x D matrix, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DataError("centroids contain NaN or Inf")
        self.centroids = c

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def D(self) -> int:
        return self.centroids.shape[1]

    def save(self, path) -> None:
        write_tensor("VCCB", self.centroids, path)
        write_json_sidecar(
            path,
            {
                "K": self.K,
                "D": self.D,
                "seed": int(self.seed),
                "inertia": float(self.inertia),
                "iterations": int(self.iterations),
                "speaker_normalized": bool(self.speaker_normalized),
            },
        )

    @classmethod
    def load(cls, path) -> "Codebook":
        centroids = read_tensor_kind(path, "VCCB")
        meta = read_json_sidecar(path)
        if (meta.get("K"), meta.get("D")) != centroids.shape:
            raise DataError(f"{path}: sidecar K/D {meta.get('K')}/{meta.get('D')} disagree with tensor {centroids.shape}")
        return cls(
            centroids,
            seed=int(meta.get("seed", 0)),
            inertia=float(meta.get("inertia", float("nan"))),
            iterations=int(meta.get("iterations", 0)),
            speaker_normalized=bool(meta.get("speaker_normalized", False)),
        )


# ---------------------------------------------------------------------------
# Speaker normalization
# ---------------------------------------------------------------------------


def speaker_normalize(features: list[FeatureSequence], eps: float = NORM_EPS) -> list[FeatureSequence]:
    """Standardize each feature dimension per speaker over that speaker's pooled frames.

    Output order matches input order.  Dimensions with zero variance map to 0.
    """
    groups: dict[str, list[int]] = {}
    for i, fs in enumerate(features):
        groups.setdefault(fs.speaker_id, []).append(i)
    out: list[FeatureSequence | None] = [None] * len(features)
    for speaker, idx in groups.items():
        pooled = np.concatenate([features[i].frames.astype(np.float64) for i in idx])
        if pooled.shape[0] < 2:
            raise DataError(f"speaker {speaker!r} has a single frame; cannot standardize")
        mean = pooled.mean(axis=0)
        std = np.maximum(pooled.std(axis=0), eps)
        for i in idx:
            fs = features[i]
            normed = (fs.frames.astype(np.float64) - mean) / std
            out[i] = FeatureSequence(fs.utterance_id, fs.speaker_id, normed, fs.frame_period_ms)
    return out  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _sq_dist_fast(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    N = X.shape[0]
    chosen = [int(rng.integers(N))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(N, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(N), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return X[chosen].copy()


def _assign(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, float]:
    labels = np.argmin(_sq_dist_fast(X, C), axis=1)
    inertia = float(((X - C[labels]) ** 2).sum())
    return labels, inertia


def _update(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> np.ndarray:
    K, D = C.shape
    counts = np.bincount(labels, minlength=K)
    sums = np.zeros((K, D))
    np.add.at(sums, labels, X)
    new = C.copy()
    filled = counts > 0
    new[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if empty.size:
        # farthest points from their (updated) centroids take over the empty clusters
        dist = ((X - new[labels]) ** 2).sum(1)
        for k in empty:
            far = int(np.argmax(dist))
            new[k] = X[far]
            dist[far] = -1.0
        log.debug("reseeded %d empty cluster(s)", empty.size)
    return new


def _transfer_pass(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> int:
    """Single-point moves that strictly lower inertia (Hartigan's rule).

    Moving ``x`` from cluster ``a`` to ``b`` changes inertia by
    ``n_b/(n_b+1) |x-c_b|^2 - n_a/(n_a-1) |x-c_a|^2``.  A vectorized screen
    picks candidate points; each is then re-checked against the current
    centroids before moving.  Updates ``C`` and ``labels`` in place.
    """
    K = C.shape[0]
    N = X.shape[0]
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    d2 = _sq_dist_fast(X, C)
    gain = counts / (counts + 1.0) * d2
    gain[np.arange(N), labels] = np.inf
    na = counts[labels]
    with np.errstate(divide="ignore", invalid="ignore"):
        loss = np.where(na > 1, na / (na - 1.0), np.inf) * d2[np.arange(N), labels]
    moves = 0
    for i in np.flatnonzero(gain.min(1) < loss * (1.0 - 1e-9)):
        a = labels[i]
        if counts[a] <= 1:
            continue
        x = X[i]
        dist = ((C - x) ** 2).sum(1)
        g = counts / (counts + 1.0) * dist
        g[a] = np.inf
        b = int(np.argmin(g))
        if g[b] < counts[a] / (counts[a] - 1.0) * dist[a] * (1.0 - 1e-12):
            C[a] = (C[a] * counts[a] - x) / (counts[a] - 1.0)
            C[b] = (C[b] * counts[b] + x) / (counts[b] + 1.0)
            counts[a] -= 1.0
            counts[b] += 1.0
            labels[i] = b
            moves += 1
    return moves


def _lloyd(X: np.ndarray, C: np.ndarray, tol: float, max_iter: int):
    labels, inertia = _assign(X, C)
    history = [inertia]
    iterations = 0
    for _ in range(max_iter):
        C = _update(X, C, labels)
        new_labels, inertia = _assign(X, C)
        iterations += 1
        prev = history[-1]
        if inertia > prev * (1.0 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means inertia increased: {prev} -> {inertia}")
        history.append(inertia)
        unchanged = np.array_equal(new_labels, labels)
        labels = new_labels
        if unchanged or prev == 0 or (prev - inertia) / prev < tol:
            break
    return C, labels, inertia, iterations, history


def _refine(X, C, labels, history, max_passes: int):
    C = C.copy()
    labels = labels.copy()
    for k in np.unique(labels):
        C[k] = X[labels == k].mean(axis=0)
    for _ in range(max_passes):
        if _transfer_pass(X, C, labels) == 0:
            break
        # recompute exact means so the reported centroids match the partition
        for k in range(C.shape[0]):
            C[k] = X[labels == k].mean(axis=0)
        inertia = float(((X - C[labels]) ** 2).sum())
        if inertia > history[-1] * (1.0 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means inertia increased: {history[-1]} -> {inertia}")
        history.append(inertia)
    return C, history[-1]


def kmeans_fit(
    frames,
    K: int = DEFAULT_K,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    n_init: int = 10,
    refine: bool = True,
) -> Codebook:
    """Fit a codebook with k-means++ seeding and Lloyd iterations.

    Iteration stops once the relative inertia change drops below ``tol`` or
    after ``max_iter`` updates.  With ``refine`` the Lloyd fixed point is then
    polished by single-point transfers, which escape many local minima that
    Lloyd cannot.  Seeding is repeated ``n_init`` times from one RNG stream
    and the lowest-inertia run is kept.
    """
    X = np.asarray(frames, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"frames must be N x D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("frames contain NaN or Inf")
    if K < 1:
        raise ConfigError("K must be >= 1")
    if X.shape[0] < K:
        raise DataError(f"need at least K={K} frames, got {X.shape[0]}")
    if tol < 0 or max_iter < 1 or n_init < 1:
        raise ConfigError("need tol >= 0, max_iter >= 1, n_init >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        C0 = _kmeanspp(X, K, rng)
        C, labels, inertia, iterations, history = _lloyd(X, C0, tol, max_iter)
        if refine and K > 1:
            C, inertia = _refine(X, C, labels, history, max_iter)
        if best is None or inertia < best[1]:
            best = (C, inertia, iterations, history)
    C, inertia, iterations, history = best
    log.info("k-means K=%d: inertia %.6g after %d iteration(s)", K, inertia, iterations)
    return Codebook(C, seed=seed, inertia=inertia, iterations=iterations, inertia_history=history)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def nearest_centroid(frames, centroids) -> np.ndarray:
    """Index of the Euclidean-nearest centroid per row; ties go to the lowest index."""
    X = np.asarray(frames, dtype=np.float64)
    C = np.asarray(centroids, dtype=np.float64)
    if X.ndim != 2 or C.ndim != 2 or X.shape[1] != C.shape[1]:
        raise DataError(f"feature dim {X.shape[-1]} does not match codebook dim {C.shape[-1]}")
    chunk = max(1, _CHUNK_ELEMENTS // (C.shape[0] * C.shape[1]))
    out = np.empty(X.shape[0], dtype=np.int64)
    for start in range(0, X.shape[0], chunk):
        block = X[start:start + chunk]
        d = ((block[:, None, :] - C[None, :, :]) ** 2).sum(-1)
        out[start:start + chunk] = np.argmin(d, axis=1)
    return out


def encode_discrete(features: FeatureSequence, codebook: Codebook) -> UnitSequence:
    if features.dim != codebook.D:
        raise DataError(f"feature dim {features.dim} does not match codebook dim {codebook.D}")
    units = nearest_centroid(features.frames, codebook.centroids)
    return UnitSequence(features.utterance_id, units, codebook.K)
