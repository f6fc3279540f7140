"""
Discovering discrete speech units with k-means
==============================================

Frames drawn around a handful of hidden centroids stand in for
self-supervised speech features.  We fit a codebook, encode an utterance
and look at how clustering quality depends on K.
"""

# %%
import numpy as np

from softvc.core import FeatureSequence
from softvc.synthetic import centroid_corpus
from softvc.units_discrete import encode_discrete, kmeans_fit, speaker_normalize

corpus = centroid_corpus(K=10, D=8, n=3000, sigma=0.05, seed=0)
print("frames:", corpus.frames.shape)

# %% [markdown]
# Fit a 10-unit codebook.  ``inertia_history`` records the within-cluster
# sum of squares after every Lloyd update; it never goes up.

# %%
codebook = kmeans_fit(corpus.frames, K=10, seed=0)
print("inertia:", round(codebook.inertia, 3), "after", codebook.iterations, "iterations")
print("history:", [round(h, 1) for h in codebook.inertia_history])

# %% [markdown]
# Encoding a sequence is a nearest-centroid lookup per frame.

# %%
utt = FeatureSequence("utt0", "spk0", corpus.frames[:25])
units = encode_discrete(utt, codebook)
print("units:", units.units.tolist())

# %% [markdown]
# With a codebook learned on unlabeled data, unit ids are an arbitrary
# permutation of the generating labels.  Purity measures how consistently
# each unit maps to one hidden centroid.

# %%
assigned = encode_discrete(FeatureSequence("all", "spk0", corpus.frames), codebook).units
purity = sum(np.bincount(corpus.labels[assigned == k]).max() for k in np.unique(assigned)) / len(assigned)
print(f"purity: {purity:.3f}")

# %% [markdown]
# Inertia keeps falling with K, but the drop flattens once K exceeds the
# true number of clusters.

# %%
for K in (2, 5, 10, 20):
    print(K, round(kmeans_fit(corpus.frames, K=K, seed=0, n_init=3).inertia, 2))

# %% [markdown]
# Speaker normalization removes per-speaker offsets before clustering.

# %%
offset_a = FeatureSequence("a", "A", corpus.frames[:500] + 3.0)
offset_b = FeatureSequence("b", "B", corpus.frames[:500] - 3.0)
na, nb = speaker_normalize([offset_a, offset_b])
print("max difference after normalization:", float(np.abs(na.frames - nb.frames).max()))
