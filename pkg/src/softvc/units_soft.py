"""Soft content encoder.

A linear layer maps each backbone frame ``x_t`` to a soft unit
``s_t = W x_t + b``.  Each soft unit defines a distribution over the K
discrete units through cosine similarity with a trainable embedding table::

    p(d_t = i | s_t) = softmax_i( cos(s_t, e_i) / tau )

Training minimizes the mean cross-entropy against k-means labels.  Only the
head (W, b, E) is trained here; ``tau`` is a fixed hyperparameter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from softvc.core import FeatureSequence, SoftUnitSequence, UnitSequence, read_container, write_container
from softvc.errors import ConfigError, DataError
from softvc.optim import Adam, TrainConfig, epoch_batches

log = logging.getLogger(__name__)

NORM_EPS = 1e-8
DEFAULT_TAU = 0.1
DEFAULT_DIM = 256


@dataclass
class SoftEncoderParams:
    W: np.ndarray  # D_s x D_in
    b: np.ndarray  # D_s
    E: np.ndarray  # K x D_s
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        self.E = np.array(self.E, dtype=np.float64)
        if self.W.ndim != 2 or self.E.ndim != 2:
            raise DataError("W and E must be matrices")
        if self.b.shape[0] != self.W.shape[0] or self.E.shape[1] != self.W.shape[0]:
            raise DataError(
                f"inconsistent shapes W{self.W.shape} b{self.b.shape} E{self.E.shape}"
            )
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        for name in ("W", "b", "E"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"{name} contains NaN or Inf")

    @property
    def D_in(self) -> int:
        return self.W.shape[1]

    @property
    def D_s(self) -> int:
        return self.W.shape[0]

    @property
    def K(self) -> int:
        return self.E.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "E": self.E}

    def copy(self) -> "SoftEncoderParams":
        return SoftEncoderParams(self.W.copy(), self.b.copy(), self.E.copy(), self.tau)


@dataclass
class SoftGradients:
    W: np.ndarray
    b: np.ndarray
    E: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "E": self.E}


def init_soft_params(D_in: int, K: int, D_s: int = DEFAULT_DIM, tau: float = DEFAULT_TAU, seed: int = 0) -> SoftEncoderParams:
    """W ~ U(-1/sqrt(D_in), 1/sqrt(D_in)), b = 0, unit-norm random rows for E."""
    if min(D_in, K, D_s) < 1:
        raise ConfigError("D_in, K and D_s must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(D_in)
    W = rng.uniform(-bound, bound, size=(D_s, D_in))
    E = rng.normal(size=(K, D_s))
    E /= np.maximum(np.linalg.norm(E, axis=1, keepdims=True), NORM_EPS)
    return SoftEncoderParams(W, np.zeros(D_s), E, tau)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


def cosine_similarity(a, b, eps: float = NORM_EPS) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(a @ b / (max(np.linalg.norm(a), eps) * max(np.linalg.norm(b), eps)))


def _normalize_rows(M: np.ndarray, eps: float = NORM_EPS) -> tuple[np.ndarray, np.ndarray]:
    norms = np.maximum(np.linalg.norm(M, axis=-1, keepdims=True), eps)
    return M / norms, norms


def cosine_matrix(S: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities, ``T x K``."""
    U, _ = _normalize_rows(np.atleast_2d(S))
    V, _ = _normalize_rows(E)
    return U @ V.T


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ConfigError(f"tau must be > 0, got {tau}")


def soft_distribution(s, E, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Distribution over the K discrete units for one soft unit ``s``."""
    _check_tau(tau)
    s = np.asarray(s, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if s.ndim != 1 or E.ndim != 2 or E.shape[1] != s.shape[0]:
        raise DataError(f"soft unit of dim {s.shape} incompatible with embeddings {E.shape}")
    return np.exp(log_softmax(cosine_matrix(s, E)[0] / tau))


def _project(X: np.ndarray, params: SoftEncoderParams) -> np.ndarray:
    if X.ndim != 2 or X.shape[1] != params.D_in:
        raise DataError(f"feature dim {X.shape[-1]} does not match encoder input dim {params.D_in}")
    return X @ params.W.T + params.b


def soft_forward(features: FeatureSequence, params: SoftEncoderParams) -> tuple[SoftUnitSequence, np.ndarray]:
    """Soft units and their ``T x K`` distributions for one utterance."""
    S = _project(features.frames.astype(np.float64), params)
    logits = cosine_matrix(S, params.E) / params.tau
    return SoftUnitSequence(features.utterance_id, S), np.exp(log_softmax(logits))


def encode_soft(features: FeatureSequence, params: SoftEncoderParams) -> SoftUnitSequence:
    return SoftUnitSequence(features.utterance_id, _project(features.frames.astype(np.float64), params))


def cross_entropy(dist, label: int) -> float:
    """``-log p_label`` for an already-normalized distribution."""
    dist = np.asarray(dist, dtype=np.float64).reshape(-1)
    if not 0 <= label < dist.shape[0]:
        raise DataError(f"label {label} out of range for K={dist.shape[0]}")
    with np.errstate(divide="ignore"):
        return float(-np.log(dist[label]))


def cross_entropy_from_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy via log-softmax."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    K = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DataError(f"labels out of range for K={K}")
    return -log_softmax(logits)[np.arange(labels.size), labels]


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def _normalize_backward(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Backprop through ``u = v / max(|v|, eps)``."""
    radial = (grad_unit * unit).sum(axis=-1, keepdims=True)
    clipped = norms[..., 0] <= eps
    out = (grad_unit - unit * radial) / norms
    if np.any(clipped):
        out[clipped] = grad_unit[clipped] / eps
    return out


def soft_loss_and_gradients(params: SoftEncoderParams, frames, labels) -> tuple[float, SoftGradients]:
    """Mean cross-entropy over a batch and its gradient w.r.t. W, b and E."""
    X = np.asarray(frames, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("batch must be a non-empty T x D_in matrix")
    if y.shape[0] != X.shape[0]:
        raise DataError(f"{X.shape[0]} frames but {y.shape[0]} labels")
    T = X.shape[0]
    S = _project(X, params)
    U, s_norm = _normalize_rows(S)
    V, e_norm = _normalize_rows(params.E)
    logits = (U @ V.T) / params.tau
    logp = log_softmax(logits)
    losses = cross_entropy_from_logits(logits, y)
    probs = np.exp(logp)
    probs[np.arange(T), y] -= 1.0
    d_sims = probs / (T * params.tau)
    dU = d_sims @ V
    dV = d_sims.T @ U
    dS = _normalize_backward(dU, U, s_norm)
    dE = _normalize_backward(dV, V, e_norm)
    return float(losses.mean()), SoftGradients(dS.T @ X, dS.sum(axis=0), dE)


def soft_gradients(params: SoftEncoderParams, frames, labels) -> SoftGradients:
    return soft_loss_and_gradients(params, frames, labels)[1]


def soft_loss(params: SoftEncoderParams, frames, labels) -> float:
    X = np.asarray(frames, dtype=np.float64)
    logits = cosine_matrix(_project(X, params), params.E) / params.tau
    return float(cross_entropy_from_logits(logits, labels).mean())


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _stack_dataset(dataset: Iterable, K: int | None) -> tuple[np.ndarray, np.ndarray, int | None]:
    xs, ys = [], []
    for feats, labels in dataset:
        X = feats.frames if isinstance(feats, FeatureSequence) else feats
        X = np.asarray(X, dtype=np.float64)
        if isinstance(labels, UnitSequence):
            if K is not None and labels.K != K:
                raise ConfigError(f"labels come from a K={labels.K} codebook, expected K={K}")
            K = labels.K
            labels = labels.units
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"features {X.shape} do not align with {y.shape[0]} labels")
        xs.append(X)
        ys.append(y)
    if not xs:
        raise DataError("empty training set")
    return np.concatenate(xs), np.concatenate(ys), K


def train_soft_encoder(
    dataset: Sequence,
    config: TrainConfig | None = None,
    params: SoftEncoderParams | None = None,
    *,
    K: int | None = None,
    dim: int = DEFAULT_DIM,
    tau: float = DEFAULT_TAU,
) -> tuple[SoftEncoderParams, list[float]]:
    """Fit the soft-encoder head on ``(features, labels)`` pairs with Adam.

    ``labels`` may be :class:`UnitSequence` objects or integer arrays.  When
    ``params`` is omitted they are initialized from ``config.seed``.  Returns
    the trained parameters (inputs are never mutated) and the per-step batch
    loss, recorded before each update.
    """
    config = config or TrainConfig()
    if params is not None:
        if K is not None and K != params.K:
            raise ConfigError(f"K={K} does not match embedding table with {params.K} rows")
        K = params.K
    X, y, K = _stack_dataset(dataset, K)
    if K is None:
        K = int(y.max()) + 1
    if y.min() < 0 or y.max() >= K:
        raise ConfigError(f"labels exceed the dictionary size K={K}")
    if params is None:
        params = init_soft_params(X.shape[1], K, dim, tau, seed=config.seed)
    else:
        params = params.copy()
    if X.shape[1] != params.D_in:
        raise DataError(f"feature dim {X.shape[1]} does not match encoder input dim {params.D_in}")

    rng = np.random.default_rng(config.seed)
    arrays = params.arrays()
    opt = Adam.from_config(arrays, config)
    batches = epoch_batches(X.shape[0], config.batch_frames, rng)
    curve: list[float] = []
    for step in range(config.steps):
        idx = next(batches)
        loss, grads = soft_loss_and_gradients(params, X[idx], y[idx])
        curve.append(loss)
        opt.step(grads.arrays())
        if (step + 1) % 1000 == 0:
            log.info("soft step %d loss %.5f", step + 1, loss)
    return params, curve


def frame_accuracy(params: SoftEncoderParams, frames, labels) -> float:
    """Fraction of frames whose most probable unit equals the label."""
    X = np.asarray(frames, dtype=np.float64)
    sims = cosine_matrix(_project(X, params), params.E)
    return float(np.mean(np.argmax(sims, axis=1) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_soft_encoder(params: SoftEncoderParams, path, seed: int = 0, step: int = 0) -> None:
    meta = {"D_in": params.D_in, "D_s": params.D_s, "K": params.K, "tau": params.tau, "seed": int(seed), "step": int(step)}
    write_container("VCSE", params.arrays(), meta, path)


def load_soft_encoder(path) -> tuple[SoftEncoderParams, dict]:
    _, tensors, meta = read_container(path, "VCSE")
    missing = {"W", "b", "E"} - set(tensors)
    if missing:
        raise DataError(f"{path}: checkpoint lacks {sorted(missing)}")
    params = SoftEncoderParams(tensors["W"], tensors["b"], tensors["E"], float(meta["tau"]))
    if (params.D_in, params.D_s, params.K) != (meta.get("D_in"), meta.get("D_s"), meta.get("K")):
        raise DataError(f"{path}: sidecar dimensions disagree with stored tensors")
    return params, meta
