"""Waveform I/O, log-mel analysis and Griffin-Lim synthesis.

Signal parameters follow the target-speaker setup: 16 kHz audio, 128 mel
bands, 10 ms hop (160 samples) and a 64 ms Hann window (1024 samples), with
the FFT size equal to the window.  Frames are taken fully inside the signal
(no centre padding), so ``T = (N - 1024) // 160 + 1``.
"""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass

import numpy as np

from softvc.errors import ConfigError, DataError, FormatError

SAMPLE_RATE = 16000
N_FFT = 1024
WIN_LENGTH = 1024
HOP_LENGTH = 160
N_MELS = 128
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = 1e-5
GRIFFIN_LIM_ITERS = 32


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size < 1:
            raise DataError("waveform must hold at least one sample")
        if self.sample_rate_hz <= 0:
            raise DataError("sample rate must be positive")

    def __len__(self) -> int:
        return self.samples.size


@dataclass
class MelSpectrogram:
    """Log-mel energies, one row per 10 ms frame."""

    frames: np.ndarray
    hop_ms: float = 10.0
    window_ms: float = 64.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise DataError(f"mel must be a non-empty T x M matrix, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DataError("mel contains NaN or Inf")
        self.frames = frames

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------


def decode_wav(data: bytes) -> Waveform:
    """Decode RIFF/WAVE PCM 16-bit mono bytes, scaling samples by 1/32768."""
    try:
        with wave.open(io.BytesIO(data), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"invalid WAV data: {exc}") from exc
    if channels != 1:
        raise FormatError(f"expected mono audio, got {channels} channels")
    if width != 2:
        raise FormatError(f"expected 16-bit PCM, got {8 * width}-bit samples")
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise FormatError("WAV file holds no samples")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def encode_wav(waveform: Waveform) -> bytes:
    """Encode as 16-bit PCM mono; samples outside [-1, 1) are clipped."""
    scaled = np.round(waveform.samples * 32768.0)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(waveform.sample_rate_hz))
        wf.writeframes(pcm.tobytes())
    return buf.getvalue()


def read_wav(path) -> Waveform:
    with open(path, "rb") as fh:
        return decode_wav(fh.read())


def write_wav(waveform: Waveform, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav(waveform))


# ---------------------------------------------------------------------------
# Mel analysis
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    """HTK mel scale, ``2595 * log10(1 + f / 700)``."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """The ``n_mels + 2`` edge/centre frequencies of the triangular filters."""
    mels = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(
    sample_rate: int = SAMPLE_RATE,
    n_fft: int = N_FFT,
    n_mels: int = N_MELS,
    f_min: float = F_MIN,
    f_max: float = F_MAX,
) -> np.ndarray:
    """Triangular HTK-mel filters as an ``n_mels x (n_fft // 2 + 1)`` matrix.

    Filter ``m`` rises linearly from edge ``m`` to a peak of 1 at edge
    ``m + 1`` and falls back to zero at edge ``m + 2``; weights are evaluated
    at the FFT bin frequencies.
    """
    if n_mels < 1:
        raise ConfigError("n_mels must be >= 1")
    if n_fft < 2:
        raise ConfigError("n_fft must be >= 2")
    if not (0 <= f_min < f_max <= sample_rate / 2):
        raise ConfigError(
            f"need 0 <= f_min < f_max <= sample_rate/2, got f_min={f_min}, f_max={f_max}, sr={sample_rate}"
        )
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_center_frequencies(n_mels, f_min, f_max)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (centre - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.max(axis=1) <= 0)
    if empty.size:
        raise ConfigError(
            f"{empty.size} mel filter(s) fall between FFT bins; reduce n_mels or raise n_fft"
        )
    return fb


def hann_window(length: int = WIN_LENGTH) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def num_frames(n_samples: int, win_length: int = WIN_LENGTH, hop: int = HOP_LENGTH) -> int:
    if n_samples < win_length:
        raise DataError(f"signal of {n_samples} samples is shorter than one {win_length}-sample window")
    return (n_samples - win_length) // hop + 1


def num_samples(n_frames: int, win_length: int = WIN_LENGTH, hop: int = HOP_LENGTH) -> int:
    return (n_frames - 1) * hop + win_length


def stft(x: np.ndarray, window: np.ndarray | None = None, hop: int = HOP_LENGTH) -> np.ndarray:
    """Complex STFT ``T x (n_fft // 2 + 1)`` with frames fully inside ``x``."""
    if window is None:
        window = hann_window()
    n = window.size
    num_frames(x.size, n, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[::hop]
    return np.fft.rfft(frames * window, n=n, axis=1)


def istft(spec: np.ndarray, window: np.ndarray | None = None, hop: int = HOP_LENGTH) -> np.ndarray:
    """Least-squares inverse of :func:`stft` (window-weighted overlap-add)."""
    if window is None:
        window = hann_window()
    n = window.size
    T = spec.shape[0]
    frames = np.fft.irfft(spec, n=n, axis=1) * window
    length = num_samples(T, n, hop)
    y = np.zeros(length)
    norm = np.zeros(length)
    wsq = window**2
    for t in range(T):
        start = t * hop
        y[start:start + n] += frames[t]
        norm[start:start + n] += wsq
    covered = norm > 1e-10
    y[covered] /= norm[covered]
    y[~covered] = 0.0
    return y


def mel_spectrogram(waveform: Waveform, n_mels: int = N_MELS) -> MelSpectrogram:
    """Natural-log mel power spectrogram, ``log(max(fb @ |X|^2, 1e-5))``."""
    if waveform.sample_rate_hz != SAMPLE_RATE:
        raise DataError(
            f"expected {SAMPLE_RATE} Hz audio, got {waveform.sample_rate_hz} Hz (no resampling)"
        )
    if len(waveform) < WIN_LENGTH:
        raise DataError(f"waveform of {len(waveform)} samples is shorter than one window")
    power = np.abs(stft(waveform.samples)) ** 2
    fb = mel_filterbank(SAMPLE_RATE, N_FFT, n_mels, F_MIN, F_MAX)
    return MelSpectrogram(np.log(np.maximum(power @ fb.T, LOG_FLOOR)))


# ---------------------------------------------------------------------------
# Griffin-Lim
# ---------------------------------------------------------------------------


def mel_to_magnitude(mel: MelSpectrogram | np.ndarray) -> np.ndarray:
    """Approximate linear magnitudes via the filterbank transpose."""
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel, dtype=np.float64)
    fb = mel_filterbank(SAMPLE_RATE, N_FFT, frames.shape[1], F_MIN, F_MAX)
    # log-mel above 80 would overflow the power domain
    power = np.maximum(np.exp(np.minimum(frames, 80.0)) @ fb, 0.0)
    return np.sqrt(power)


def spectral_convergence(magnitude: np.ndarray, y: np.ndarray) -> float:
    """``|| |STFT(y)| - M ||_F / ||M||_F``."""
    est = np.abs(stft(y))
    return float(np.linalg.norm(est - magnitude) / max(np.linalg.norm(magnitude), 1e-12))


def griffin_lim_magnitude(
    magnitude: np.ndarray, n_iters: int = GRIFFIN_LIM_ITERS
) -> tuple[np.ndarray, list[float]]:
    """Phase reconstruction from a ``T x (n_fft // 2 + 1)`` magnitude.

    Starts from zero phase.  Returns the signal and the spectral convergence
    measured after each iteration's inverse transform.
    """
    if n_iters < 1:
        raise ConfigError("n_iters must be >= 1")
    phase = np.ones_like(magnitude, dtype=np.complex128)
    errors = []
    for _ in range(n_iters):
        y = istft(magnitude * phase)
        rebuilt = stft(y)
        errors.append(
            float(np.linalg.norm(np.abs(rebuilt) - magnitude) / max(np.linalg.norm(magnitude), 1e-12))
        )
        mag = np.abs(rebuilt)
        phase = np.where(mag > 1e-12, rebuilt / np.maximum(mag, 1e-12), 1.0)
    return istft(magnitude * phase), errors


def griffin_lim(mel: MelSpectrogram | np.ndarray, n_iters: int = GRIFFIN_LIM_ITERS) -> Waveform:
    """Invert a log-mel spectrogram to a 16 kHz waveform."""
    if n_iters < 1:
        raise ConfigError("n_iters must be >= 1")
    y, _ = griffin_lim_magnitude(mel_to_magnitude(mel), n_iters)
    return Waveform(y, SAMPLE_RATE)
