"""
Content encoder, acoustic model, vocoder
========================================

An end-to-end run on a constructed corpus where every unit has a fixed
mel frame.  The acoustic model learns that lookup, and Griffin-Lim turns
the predicted spectrogram into audio.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from softvc import acoustic, dsp
from softvc.optim import TrainConfig
from softvc.synthetic import lookup_corpus
from softvc.units_discrete import Codebook, encode_discrete

corpus = lookup_corpus(K=8, D=6, n_utts=12, frames_per_utt=40, seed=0)
codebook = Codebook(corpus.centroids)
pairs = [(encode_discrete(u, codebook), corpus.target_mel(i)) for i, u in enumerate(corpus.utterances[:10])]

# %%
config = TrainConfig(learning_rate=1e-3, steps=3000, batch_frames=64, seed=0)
model, curve = acoustic.train_acoustic(pairs, config, hidden=64)
print("training MSE:", acoustic.dataset_loss(model, pairs))

# %% [markdown]
# Held-out utterance: units from the codebook, mel from the model.

# %%
held = corpus.utterances[11]
mel = acoustic.convert_to_mel(held, codebook, model)
print("mel frames:", len(mel), "for", held.num_frames, "feature frames")
print("held-out MSE:", float(np.mean((mel.frames - corpus.target_mel(11)) ** 2)))

# %%
wave = acoustic.convert(held, codebook, model, griffin_lim_iters=32)
print("samples:", len(wave), "expected", (held.num_frames * 2 - 1) * 160 + 1024)
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "converted.wav"
    dsp.write_wav(wave, path)
    print("wrote", path.stat().st_size, "bytes")

# %% [markdown]
# Griffin-Lim on its own: a 440 Hz tone survives the mel round trip.

# %%
t = np.arange(16000) / 16000
tone = dsp.mel_spectrogram(dsp.Waveform(0.5 * np.sin(2 * np.pi * 440 * t)))
y, errors = dsp.griffin_lim_magnitude(dsp.mel_to_magnitude(tone), 32)
print("spectral convergence:", round(errors[0], 3), "->", round(errors[-1], 3))
print("peak:", np.argmax(np.abs(np.fft.rfft(y))) * 16000 / y.size, "Hz")
