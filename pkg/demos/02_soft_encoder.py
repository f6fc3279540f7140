"""
Soft speech units
=================

A soft encoder projects each frame and scores it against a learned unit
embedding table with cosine similarity.  Trained to predict the k-means
labels, it produces distributions that stay uncertain where discrete
assignment has to pick a side.
"""

# %%
import numpy as np

from softvc.core import FeatureSequence
from softvc.optim import TrainConfig
from softvc.synthetic import ambiguous_pair_corpus
from softvc.units_discrete import encode_discrete, kmeans_fit
from softvc.units_soft import frame_accuracy, soft_forward, soft_loss, train_soft_encoder

# Units 0 and 1 of this corpus are close neighbours with overlapping clouds,
# the way two similar sounds might be.
corpus = ambiguous_pair_corpus(K=10, D=8, n=2000, seed=0)
codebook = kmeans_fit(corpus.frames, K=10, seed=0)
features = FeatureSequence("train", "spk", corpus.frames)
labels = encode_discrete(features, codebook)

# %%
config = TrainConfig(learning_rate=1e-3, steps=2000, batch_frames=256, seed=0)
params, curve = train_soft_encoder([(features, labels)], config)
print("batch loss: first", round(curve[0], 3), "last", round(curve[-1], 3))
print("mean cross-entropy:", round(soft_loss(params, corpus.frames, labels.units), 4))
print("frame accuracy:", round(frame_accuracy(params, corpus.frames, labels.units), 4))

# %% [markdown]
# Probe a frame just to one side of the boundary between the two closest
# units.  Discrete encoding commits to one of them; the soft distribution
# keeps substantial mass on both.

# %%
C = codebook.centroids
d = ((C[:, None] - C[None]) ** 2).sum(-1) + np.diag(np.full(len(C), np.inf))
a, b = np.unravel_index(np.argmin(d), d.shape)
probe = (0.5 * (C[a] + C[b]) + 1e-3 * (C[a] - C[b]))[None, :]
probe_fs = FeatureSequence("probe", "spk", probe)
print("discrete unit:", encode_discrete(probe_fs, codebook).units.tolist())
_, dist = soft_forward(probe_fs, params)
print(f"soft mass on unit {a}: {dist[0, a]:.3f}, unit {b}: {dist[0, b]:.3f}")

# %% [markdown]
# Far from any boundary the distribution is nearly one-hot.

# %%
_, dist = soft_forward(FeatureSequence("clean", "spk", C[5:6]), params)
print("mass on the matching unit:", round(float(dist[0].max()), 4))
