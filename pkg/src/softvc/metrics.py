"""Objective evaluation: edit-distance error rates, per-phoneme breakdown, EER, MOS.

Transcripts and speaker embeddings come from external ASR / x-vector
systems; everything here operates on symbol sequences and score lists.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, NamedTuple, Sequence

import numpy as np

from softvc.errors import DataError
from softvc.units_soft import cosine_similarity

MATCH, SUBSTITUTE, DELETE, INSERT = "match", "substitute", "delete", "insert"
MOS_SCALE = (1, 5)
Z_95 = 1.96


class AlignOp(NamedTuple):
    kind: str
    ref_index: int | None
    hyp_index: int | None


@dataclass
class Alignment:
    ref: tuple
    hyp: tuple
    ops: list[AlignOp]

    def _count(self, kind: str) -> int:
        return sum(op.kind == kind for op in self.ops)

    @property
    def matches(self) -> int:
        return self._count(MATCH)

    @property
    def substitutions(self) -> int:
        return self._count(SUBSTITUTE)

    @property
    def deletions(self) -> int:
        return self._count(DELETE)

    @property
    def insertions(self) -> int:
        return self._count(INSERT)

    @property
    def n_ref(self) -> int:
        return len(self.ref)

    @property
    def cost(self) -> int:
        return self.substitutions + self.deletions + self.insertions


@dataclass
class TrialSet:
    genuine_scores: np.ndarray
    impostor_scores: np.ndarray

    def __post_init__(self):
        self.genuine_scores = np.asarray(self.genuine_scores, dtype=np.float64).reshape(-1)
        self.impostor_scores = np.asarray(self.impostor_scores, dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------------------
# Alignment and error rates
# ---------------------------------------------------------------------------


def align(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> Alignment:
    """Minimal-cost Levenshtein alignment with unit S/D/I costs.

    The backtrace prefers match, then substitution, deletion, insertion.
    """
    ref = tuple(ref)
    hyp = tuple(hyp)
    if not ref:
        raise DataError("reference must be non-empty; error rate undefined")
    n, m = len(ref), len(hyp)
    # plain lists: sequences are short and numpy scalar indexing dominates otherwise
    dp = [list(range(m + 1))]
    for i in range(1, n + 1):
        prev = dp[-1]
        row = [i] * (m + 1)
        r = ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
        dp.append(row)

    ops: list[AlignOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            same = ref[i - 1] == hyp[j - 1]
            if same and dp[i][j] == dp[i - 1][j - 1]:
                ops.append(AlignOp(MATCH, i - 1, j - 1))
                i, j = i - 1, j - 1
                continue
            if not same and dp[i][j] == dp[i - 1][j - 1] + 1:
                ops.append(AlignOp(SUBSTITUTE, i - 1, j - 1))
                i, j = i - 1, j - 1
                continue
        if i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            ops.append(AlignOp(DELETE, i - 1, None))
            i -= 1
        else:
            ops.append(AlignOp(INSERT, None, j - 1))
            j -= 1
    ops.reverse()
    return Alignment(ref, hyp, ops)


def error_rate(alignment: Alignment) -> float:
    """``(S + D + I) / N_ref``; can exceed 1."""
    return alignment.cost / alignment.n_ref


def corpus_error_rate(alignments: Iterable[Alignment]) -> float:
    """Pooled error rate: total edits over total reference length."""
    alignments = list(alignments)
    if not alignments:
        raise DataError("no alignments")
    return sum(a.cost for a in alignments) / sum(a.n_ref for a in alignments)


def transcript_error_rate(refs: Sequence[str], hyps: Sequence[str]) -> float:
    """Corpus WER/PER over whitespace-separated transcript pairs."""
    if len(refs) != len(hyps):
        raise DataError(f"{len(refs)} references but {len(hyps)} hypotheses")
    return corpus_error_rate(align(r.split(), h.split()) for r, h in zip(refs, hyps))


def per_symbol_error_rates(
    alignments: Iterable[Alignment], inventory: Iterable[Hashable] | None = None
) -> dict:
    """Per reference symbol: (substitutions + deletions) / occurrences.

    Insertions have no reference symbol and are left out.  Symbols that never
    occur in the references are omitted; ``inventory`` restricts the output.
    """
    alignments = list(alignments)
    if not alignments:
        raise DataError("no alignments")
    occurrences: Counter = Counter()
    errors: Counter = Counter()
    for a in alignments:
        occurrences.update(a.ref)
        for op in a.ops:
            if op.kind in (SUBSTITUTE, DELETE):
                errors[a.ref[op.ref_index]] += 1
    symbols = occurrences.keys() if inventory is None else [s for s in inventory if occurrences[s]]
    return {s: errors[s] / occurrences[s] for s in symbols}


# ---------------------------------------------------------------------------
# Speaker verification
# ---------------------------------------------------------------------------


def build_trials(
    converted: Sequence,
    enrollment_pool: Sequence,
    n_enroll: int = 50,
    seed: int = 42,
) -> TrialSet:
    """Score converted utterances against target-speaker enrollments.

    Each converted embedding is paired with ``n_enroll`` enrollment embeddings
    drawn without replacement.  For each converted example one target
    utterance is also drawn as an authentic query and paired with
    ``n_enroll`` *other* pool utterances, so both sets have equal size.
    ``converted`` and ``enrollment_pool`` hold vectors or ``(id, vector)``.
    """
    conv = [_vector(c) for c in converted]
    pool = [_vector(e) for e in enrollment_pool]
    if not conv:
        raise DataError("no converted embeddings")
    if n_enroll < 1:
        raise DataError("n_enroll must be >= 1")
    if len(pool) < n_enroll + 1:
        raise DataError(f"enrollment pool of {len(pool)} is too small for n_enroll={n_enroll} (need {n_enroll + 1})")
    rng = np.random.default_rng(seed)
    impostor, genuine = [], []
    for c in conv:
        for k in rng.choice(len(pool), size=n_enroll, replace=False):
            impostor.append(cosine_similarity(c, pool[k]))
        q = int(rng.integers(len(pool)))
        others = np.delete(np.arange(len(pool)), q)
        for k in rng.choice(others, size=n_enroll, replace=False):
            genuine.append(cosine_similarity(pool[q], pool[k]))
    return TrialSet(np.array(genuine), np.array(impostor))


def _vector(item) -> np.ndarray:
    if isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], str):
        item = item[1]
    return np.asarray(item, dtype=np.float64).reshape(-1)


def compute_eer(trials: TrialSet) -> float:
    """Equal error rate from a threshold sweep over all distinct scores.

    ``FAR(t)`` is the fraction of impostor scores ``>= t`` and ``FRR(t)`` the
    fraction of genuine scores ``< t``.  The sweep also includes ``+inf``.
    At the first threshold where ``FAR <= FRR`` the curves are linearly
    interpolated against the previous threshold.  The interpolation is done
    on integer counts so the result is a single correctly rounded division.
    """
    g = trials.genuine_scores
    imp = trials.impostor_scores
    if g.size == 0 or imp.size == 0:
        raise DataError("EER needs non-empty genuine and impostor score lists")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(imp))):
        raise DataError("scores must be finite")
    ng, ni = g.size, imp.size
    thresholds = np.append(np.unique(np.concatenate([g, imp])), np.inf)
    g_sorted = np.sort(g)
    i_sorted = np.sort(imp)
    # counts: impostors >= t, genuine < t
    fa = ni - np.searchsorted(i_sorted, thresholds, side="left")
    fr = np.searchsorted(g_sorted, thresholds, side="left")
    # sign of FAR - FRR, scaled by ng * ni to stay integral
    diff = fa * ng - fr * ni
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0 or k == 0:
        return float(fa[k]) / ni
    fa0, fr0, fa1, fr1 = int(fa[k - 1]), int(fr[k - 1]), int(fa[k]), int(fr[k])
    num = fa0 * fr1 - fr0 * fa1
    den = (fa0 - fa1) * ng - (fr0 - fr1) * ni
    return num / den


# ---------------------------------------------------------------------------
# MOS
# ---------------------------------------------------------------------------


def mos_ci(ratings: Sequence[int], z: float = Z_95) -> tuple[float, float]:
    """Mean opinion score and the half-width of its normal-approximation CI."""
    r = np.asarray(ratings, dtype=np.float64).reshape(-1)
    if r.size < 2:
        raise DataError("need at least two ratings for a confidence interval")
    lo, hi = MOS_SCALE
    if np.any((r < lo) | (r > hi)) or np.any(r != np.round(r)):
        raise DataError(f"ratings must be integers in [{lo}, {hi}]")
    mean = float(r.mean())
    half = z * (float(r.std(ddof=1)) / math.sqrt(r.size))
    return mean, half
