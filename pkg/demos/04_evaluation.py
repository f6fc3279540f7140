"""
Scoring converted speech
========================

Intelligibility is scored with word and phoneme error rates, speaker
similarity with an equal error rate, and naturalness with a mean opinion
score.  Transcripts, embeddings and ratings would normally come from an
ASR system, a speaker-verification model and listeners.
"""

# %%
import numpy as np

from softvc import metrics

refs = ["the cat sat on the mat", "a fin on the fish"]
hyps = ["the cat sit on the mat", "a thin on the fish"]
print("WER:", round(metrics.transcript_error_rate(refs, hyps), 4))

# %% [markdown]
# A per-phoneme breakdown shows which sounds go wrong.

# %%
al = metrics.align(["f", "i", "n"], ["th", "i", "n"])
print([op.kind for op in al.ops])
print(metrics.per_symbol_error_rates([al]))

# %% [markdown]
# Speaker similarity: converted embeddings scored against enrollment
# utterances of the target speaker, next to an equal number of authentic
# target pairs.  An EER near 0.5 means the verifier cannot tell them apart.

# %%
rng = np.random.default_rng(0)
speaker = rng.normal(size=32)
pool = [speaker + 0.5 * rng.normal(size=32) for _ in range(60)]
good = [speaker + 0.5 * rng.normal(size=32) for _ in range(10)]
poor = [rng.normal(size=32) for _ in range(10)]
for name, converted in (("close to target", good), ("unrelated", poor)):
    trials = metrics.build_trials(converted, pool, n_enroll=50, seed=1)
    print(f"{name}: EER = {metrics.compute_eer(trials):.3f}")

# %%
print("MOS:", metrics.mos_ci([4, 5, 4, 3, 5, 4, 4, 5]))
