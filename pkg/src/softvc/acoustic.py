"""Unit-to-mel acoustic model and the end-to-end conversion pipeline.

The model is frame-wise and non-autoregressive::

    h0 = embed(d_t)            (discrete)   or   P s_t + c   (soft)
    h0 -> repeat `upsample_factor` times
    h1 = relu(W1 h0 + b1)
    h2 = relu(W2 h1 + b2)
    y  = W_out h2 + b_out      (n_mels log-mel values)
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from softvc import dsp
from softvc.core import FeatureSequence, SoftUnitSequence, UnitSequence, read_container, write_container
from softvc.errors import ConfigError, DataError, SoftVCError
from softvc.optim import Adam, TrainConfig, epoch_batches
from softvc.units_discrete import Codebook, encode_discrete
from softvc.units_discrete import speaker_normalize as speaker_normalize_features
from softvc.units_soft import SoftEncoderParams, encode_soft

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = 256
DEFAULT_UPSAMPLE = 2
MODES = ("discrete", "soft")

_LAYERS = ("W1", "b1", "W2", "b2", "W_out", "b_out")


@dataclass
class AcousticParams:
    mode: str
    input_map: np.ndarray  # K x H embedding (discrete) or H x D_s projection (soft)
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    input_bias: np.ndarray | None = None  # soft mode only
    upsample_factor: int = DEFAULT_UPSAMPLE
    step: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.upsample_factor < 1:
            raise ConfigError("upsample_factor must be >= 1")
        for name in ("input_map",) + _LAYERS:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        H = self.W1.shape[0]
        if self.mode == "soft":
            if self.input_bias is None:
                self.input_bias = np.zeros(H)
            self.input_bias = np.array(self.input_bias, dtype=np.float64).reshape(-1)
            map_ok = self.input_map.shape[0] == H and self.input_bias.shape == (H,)
        else:
            self.input_bias = None
            map_ok = self.input_map.shape[1] == H
        shapes_ok = (
            map_ok
            and self.W1.shape == (H, H)
            and self.b1.shape == (H,)
            and self.W2.shape == (H, H)
            and self.b2.shape == (H,)
            and self.W_out.shape[1] == H
            and self.b_out.shape == (self.W_out.shape[0],)
        )
        if not shapes_ok:
            raise DataError("inconsistent acoustic parameter shapes")
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains NaN or Inf")

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_mels(self) -> int:
        return self.W_out.shape[0]

    @property
    def input_dim(self) -> int:
        """K for discrete mode, D_s for soft mode."""
        return self.input_map.shape[0] if self.mode == "discrete" else self.input_map.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"input_map": self.input_map}
        if self.input_bias is not None:
            out["input_bias"] = self.input_bias
        out.update({name: getattr(self, name) for name in _LAYERS})
        return out

    def copy(self) -> "AcousticParams":
        arrays = {k: v.copy() for k, v in self.arrays().items()}
        return AcousticParams(self.mode, upsample_factor=self.upsample_factor, step=self.step, **arrays)


def init_acoustic_params(
    mode: str,
    input_dim: int,
    hidden: int = DEFAULT_HIDDEN,
    n_mels: int = dsp.N_MELS,
    upsample_factor: int = DEFAULT_UPSAMPLE,
    seed: int = 0,
) -> AcousticParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, N(0, 1) embeddings."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    rng = np.random.default_rng(seed)

    def linear(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    if mode == "discrete":
        input_map = rng.normal(size=(input_dim, hidden))
    else:
        input_map = linear(hidden, input_dim)
    return AcousticParams(
        mode=mode,
        input_map=input_map,
        W1=linear(hidden, hidden),
        b1=np.zeros(hidden),
        W2=linear(hidden, hidden),
        b2=np.zeros(hidden),
        W_out=linear(n_mels, hidden),
        b_out=np.zeros(n_mels),
        input_bias=np.zeros(hidden) if mode == "soft" else None,
        upsample_factor=upsample_factor,
    )


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def upsample_units(seq, factor: int):
    """Repeat every element (or row) ``factor`` times, preserving order."""
    if factor < 1:
        raise ConfigError("upsample factor must be >= 1")
    if isinstance(seq, UnitSequence):
        return UnitSequence(seq.utterance_id, np.repeat(seq.units, factor), seq.K)
    if isinstance(seq, SoftUnitSequence):
        return SoftUnitSequence(seq.utterance_id, np.repeat(seq.vectors, factor, axis=0))
    if isinstance(seq, np.ndarray):
        return np.repeat(seq, factor, axis=0)
    return [x for x in seq for _ in range(factor)]


def _unit_inputs(units, params: AcousticParams) -> np.ndarray:
    """Raw per-frame inputs: integer ids (discrete) or T x D_s vectors (soft)."""
    if isinstance(units, UnitSequence):
        if params.mode != "discrete":
            raise DataError("discrete units given to a soft-input acoustic model")
        if units.K > params.input_map.shape[0]:
            raise DataError(f"unit dictionary K={units.K} exceeds embedding table of {params.input_map.shape[0]}")
        return units.units
    if isinstance(units, SoftUnitSequence):
        if params.mode != "soft":
            raise DataError("soft units given to a discrete-input acoustic model")
        if units.vectors.shape[1] != params.input_map.shape[1]:
            raise DataError(f"soft unit dim {units.vectors.shape[1]} != model input dim {params.input_map.shape[1]}")
        return units.vectors
    raise DataError(f"unsupported unit container {type(units).__name__}")


def _embed(inputs: np.ndarray, params: AcousticParams) -> np.ndarray:
    if params.mode == "discrete":
        ids = np.asarray(inputs, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= params.input_map.shape[0]):
            raise DataError("unit id out of range for the embedding table")
        return params.input_map[ids]
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_map.shape[1]:
        raise DataError(f"soft inputs {X.shape} do not match projection {params.input_map.shape}")
    return X @ params.input_map.T + params.input_bias


def _stack_forward(h0: np.ndarray, params: AcousticParams):
    a1 = h0 @ params.W1.T + params.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ params.W2.T + params.b2
    h2 = np.maximum(a2, 0.0)
    y = h2 @ params.W_out.T + params.b_out
    return y, (h0, a1, h1, a2, h2)


def acoustic_forward(units, params: AcousticParams) -> dsp.MelSpectrogram:
    """Map → upsample → hidden stack; returns ``T * factor`` mel frames."""
    h0 = _embed(_unit_inputs(units, params), params)
    h0 = upsample_units(h0, params.upsample_factor)
    y, _ = _stack_forward(h0, params)
    return dsp.MelSpectrogram(y)


def acoustic_loss(params: AcousticParams, inputs, targets) -> float:
    y, _ = _stack_forward(_embed(inputs, params), params)
    return float(np.mean((y - targets) ** 2))


def acoustic_loss_and_gradients(params: AcousticParams, inputs, targets) -> tuple[float, dict[str, np.ndarray]]:
    """MSE over already-upsampled frame inputs and matching mel targets."""
    targets = np.asarray(targets, dtype=np.float64)
    y, (h0, a1, h1, a2, h2) = _stack_forward(_embed(inputs, params), params)
    if y.shape != targets.shape:
        raise DataError(f"prediction {y.shape} and target {targets.shape} differ")
    diff = y - targets
    dy = 2.0 * diff / diff.size
    grads = {"W_out": dy.T @ h2, "b_out": dy.sum(0)}
    dh2 = dy @ params.W_out
    da2 = dh2 * (a2 > 0)
    grads["W2"] = da2.T @ h1
    grads["b2"] = da2.sum(0)
    dh1 = da2 @ params.W2
    da1 = dh1 * (a1 > 0)
    grads["W1"] = da1.T @ h0
    grads["b1"] = da1.sum(0)
    dh0 = da1 @ params.W1
    if params.mode == "discrete":
        d_map = np.zeros_like(params.input_map)
        np.add.at(d_map, np.asarray(inputs, dtype=np.int64), dh0)
        grads["input_map"] = d_map
    else:
        X = np.asarray(inputs, dtype=np.float64)
        grads["input_map"] = dh0.T @ X
        grads["input_bias"] = dh0.sum(0)
    return float(np.mean(diff**2)), grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _frame_pairs(pairs, params: AcousticParams, align: str):
    inputs, targets = [], []
    for units, mel in pairs:
        raw = _unit_inputs(units, params)
        up = upsample_units(np.asarray(raw), params.upsample_factor)
        mel_frames = mel.frames if isinstance(mel, dsp.MelSpectrogram) else np.asarray(mel, dtype=np.float64)
        if mel_frames.ndim != 2 or mel_frames.shape[1] != params.n_mels:
            raise DataError(f"target mel has shape {mel_frames.shape}, model predicts {params.n_mels} bands")
        n = min(len(up), mel_frames.shape[0])
        if len(up) != mel_frames.shape[0]:
            if align == "strict":
                raise DataError(f"{len(up)} upsampled units vs {mel_frames.shape[0]} mel frames")
            log.info("truncating %d units / %d mel frames to %d", len(up), mel_frames.shape[0], n)
        inputs.append(up[:n])
        targets.append(mel_frames[:n])
    if not inputs:
        raise DataError("empty acoustic dataset")
    return np.concatenate(inputs), np.concatenate(targets)


def dataset_loss(params: AcousticParams, pairs: Sequence, align: str = "truncate") -> float:
    """Frame-pooled MSE of the model over ``(units, mel)`` pairs."""
    return acoustic_loss(params, *_frame_pairs(pairs, params, align))


def train_acoustic(
    pairs: Sequence,
    config: TrainConfig | None = None,
    params: AcousticParams | None = None,
    *,
    mode: str | None = None,
    input_dim: int | None = None,
    hidden: int = DEFAULT_HIDDEN,
    n_mels: int = dsp.N_MELS,
    upsample_factor: int = DEFAULT_UPSAMPLE,
    validation: Sequence | None = None,
    eval_every: int = 100,
    align: str = "truncate",
) -> tuple[AcousticParams, list[float]]:
    """Fit the acoustic model to ``(units, mel)`` pairs by Adam on MSE.

    With ``validation`` pairs, the parameters with the lowest validation loss
    (checked every ``eval_every`` steps and at the end) are returned and
    ``params.step`` records the step they come from.
    """
    config = config or TrainConfig(learning_rate=1e-3, steps=50000)
    pairs = list(pairs)
    if not pairs:
        raise DataError("empty acoustic dataset")
    if align not in ("truncate", "strict"):
        raise ConfigError("align must be 'truncate' or 'strict'")
    if params is None:
        first = pairs[0][0]
        if mode is None:
            mode = "discrete" if isinstance(first, UnitSequence) else "soft"
        if input_dim is None:
            if mode == "discrete":
                input_dim = max(u.K for u, _ in pairs)
            else:
                input_dim = first.vectors.shape[1]
        params = init_acoustic_params(mode, input_dim, hidden, n_mels, upsample_factor, seed=config.seed)
    else:
        params = params.copy()
    X, Y = _frame_pairs(pairs, params, align)
    val = _frame_pairs(validation, params, align) if validation else None

    rng = np.random.default_rng(config.seed)
    arrays = params.arrays()
    opt = Adam.from_config(arrays, config)
    batches = epoch_batches(X.shape[0], config.batch_frames, rng)
    curve: list[float] = []
    best: tuple[float, AcousticParams] | None = None

    def check_validation(step):
        nonlocal best
        loss = acoustic_loss(params, *val)
        if best is None or loss < best[0]:
            snapshot = params.copy()
            snapshot.step = step
            best = (loss, snapshot)
        log.info("acoustic step %d validation loss %.6f", step, loss)

    for step in range(config.steps):
        idx = next(batches)
        loss, grads = acoustic_loss_and_gradients(params, X[idx], Y[idx])
        curve.append(loss)
        opt.step(grads)
        if val is not None and (step + 1) % eval_every == 0:
            check_validation(step + 1)
    params.step = config.steps
    if val is not None:
        if config.steps % eval_every:
            check_validation(config.steps)
        return best[1], curve
    return params, curve


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_acoustic(params: AcousticParams, path, seed: int = 0) -> None:
    meta = {
        "mode": params.mode,
        "H": params.hidden,
        "n_mels": params.n_mels,
        "upsample_factor": params.upsample_factor,
        "seed": int(seed),
        "step": int(params.step),
    }
    meta["K" if params.mode == "discrete" else "D_s"] = params.input_dim
    write_container("VCAC", params.arrays(), meta, path)


def load_acoustic(path) -> tuple[AcousticParams, dict]:
    _, tensors, meta = read_container(path, "VCAC")
    mode = meta.get("mode")
    if mode not in MODES:
        raise DataError(f"{path}: sidecar mode {mode!r} invalid")
    need = {"input_map", *_LAYERS} | ({"input_bias"} if mode == "soft" else set())
    missing = need - set(tensors)
    if missing:
        raise DataError(f"{path}: checkpoint lacks {sorted(missing)}")
    b = {k: tensors[k].reshape(-1) for k in ("b1", "b2", "b_out", "input_bias") if k in tensors}
    params = AcousticParams(
        mode=mode,
        input_map=tensors["input_map"],
        W1=tensors["W1"],
        b1=b["b1"],
        W2=tensors["W2"],
        b2=b["b2"],
        W_out=tensors["W_out"],
        b_out=b["b_out"],
        input_bias=b.get("input_bias"),
        upsample_factor=int(meta["upsample_factor"]),
        step=int(meta.get("step", 0)),
    )
    return params, meta


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except SoftVCError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc


def content_units(features: FeatureSequence, content, speaker_normalize: bool | None = None):
    """Run the content encoder: a Codebook gives discrete units, soft params give soft units."""
    if isinstance(content, Codebook):
        if speaker_normalize is None:
            speaker_normalize = content.speaker_normalized
        if speaker_normalize:
            features = speaker_normalize_features([features])[0]
        return encode_discrete(features, content)
    if isinstance(content, SoftEncoderParams):
        return encode_soft(features, content)
    raise ConfigError(f"content encoder must be a Codebook or SoftEncoderParams, got {type(content).__name__}")


def convert_to_mel(features: FeatureSequence, content, acoustic_params: AcousticParams) -> dsp.MelSpectrogram:
    with _stage("content-encoder"):
        units = content_units(features, content)
    with _stage("acoustic-model"):
        return acoustic_forward(units, acoustic_params)


def convert(
    source_features: FeatureSequence,
    content,
    acoustic_params: AcousticParams,
    griffin_lim_iters: int = dsp.GRIFFIN_LIM_ITERS,
) -> dsp.Waveform:
    """Features → units → mel → Griffin-Lim waveform."""
    mel = convert_to_mel(source_features, content, acoustic_params)
    with _stage("vocoder"):
        return dsp.griffin_lim(mel, griffin_lim_iters)
