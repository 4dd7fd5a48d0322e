"""Distribution-informed conformal ranking (DCR) and its Monte-Carlo variant.

The calibration scores are latent because the absolute ranks of calibration
items depend on unseen test values.  Each item's score distribution is the
image of its negative hypergeometric rank law under its score profile; DCR
thresholds the average of these CDFs, MDCR thresholds one sampled score per
item.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import neghyper
from .scores import Predictions, ScoreKind, scores_at

# Relative slack on the float path of the mixture-quantile comparison. The
# exact integer path (N <= neghyper.EXACT_LIMIT) uses none.
_LEVEL_RTOL = 1e-12


@dataclass(frozen=True)
class Threshold:
    value: float
    level: float
    method: str

    def __post_init__(self):
        if not (self.value >= 0):
            raise ValueError("threshold must be >= 0 or +inf")

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.value)


def conformal_index(n: int, coverage: float) -> int:
    """``ceil((n+1) * coverage)``, clamped to at least 1.

    A 1e-9 guard absorbs float error in products such as ``10 * 0.9``.
    """
    return max(1, math.ceil((n + 1) * coverage - 1e-9))


def order_statistic_threshold(scores: np.ndarray, coverage: float, method: str) -> Threshold:
    """k-th smallest score with ``k = ceil((n+1) * coverage)``; +inf if ``k > n``."""
    scores = np.asarray(scores, dtype=float)
    n = scores.size
    k = conformal_index(n, coverage)
    value = math.inf if k > n else float(np.partition(scores, k - 1)[k - 1])
    return Threshold(value, k / (n + 1), method)


@dataclass(frozen=True)
class CalibScoreDistribution:
    """Latent score law of one calibration item, unsorted and with duplicates."""

    support: np.ndarray
    masses: np.ndarray
    counts: tuple[int, ...] | None = None  # exact masses * C(N, m), small N only


def calib_score_dist(preds: Predictions, item: int, rel_rank: int, n: int, m: int) -> CalibScoreDistribution:
    if not 1 <= rel_rank <= n:
        raise ValueError(f"rel_rank {rel_rank} outside [1, {n}]")
    ranks = rel_rank + np.arange(m + 1)
    support = scores_at(preds, item, ranks)
    masses = neghyper.pmf_table(n, m)[rel_rank - 1].copy()
    counts = neghyper.count_table(n, m)[rel_rank - 1] if n + m <= neghyper.EXACT_LIMIT else None
    return CalibScoreDistribution(support, masses, counts)


@dataclass(frozen=True)
class MixtureCdf:
    """Step CDF averaging the calibration items' latent score CDFs.

    ``exact_cum`` holds integer cumulative weights over the common
    denominator ``exact_total`` when every component carried exact counts.
    """

    atoms: np.ndarray
    cum: np.ndarray
    exact_cum: tuple[int, ...] | None = None
    exact_total: int | None = None

    def __call__(self, t: float) -> float:
        idx = np.searchsorted(self.atoms, t, side="right")
        return 0.0 if idx == 0 else float(self.cum[idx - 1])

    def exact(self, t: float) -> Fraction:
        if self.exact_cum is None:
            raise ValueError("no exact weights for this mixture")
        idx = int(np.searchsorted(self.atoms, t, side="right"))
        return Fraction(0) if idx == 0 else Fraction(self.exact_cum[idx - 1], self.exact_total)


def _merge_atoms(scores: np.ndarray, masses: np.ndarray, counts: Sequence[int] | None, n: int, denom: int | None) -> MixtureCdf:
    atoms, inverse = np.unique(scores, return_inverse=True)
    inverse = inverse.ravel()
    weights = np.bincount(inverse, weights=masses, minlength=atoms.size)
    cum = np.cumsum(weights.astype(np.longdouble)) / n
    cum[-1] = 1.0
    exact_cum = exact_total = None
    if counts is not None:
        sums = [0] * atoms.size
        for idx, c in zip(inverse.tolist(), counts):
            sums[idx] += c
        running, acc = [], 0
        for s in sums:
            acc += s
            running.append(acc)
        exact_cum, exact_total = tuple(running), n * denom
    return MixtureCdf(atoms, cum, exact_cum, exact_total)


def mixture_cdf(dists: Sequence[CalibScoreDistribution]) -> MixtureCdf:
    """Average of the component CDFs, with equal score values merged."""
    if len(dists) == 0:
        raise ValueError("mixture of zero distributions")
    n = len(dists)
    scores = np.concatenate([d.support for d in dists])
    masses = np.concatenate([d.masses for d in dists])
    counts = denom = None
    if all(d.counts is not None for d in dists):
        counts = [c for d in dists for c in d.counts]
        denom = sum(dists[0].counts)
    return _merge_atoms(scores, masses, counts, n, denom)


def build_mixture(preds: Predictions, cal_items, rel_ranks, n: int, m: int) -> MixtureCdf:
    """Vectorized ``mixture_cdf`` over all calibration items, O(n m)."""
    cal_items = np.asarray(cal_items)
    rel_ranks = np.asarray(rel_ranks, dtype=np.int64)
    ranks = rel_ranks[:, None] + np.arange(m + 1)[None, :]
    scores = scores_at(preds, cal_items[:, None], ranks)
    masses = neghyper.pmf_table(n, m)[rel_ranks - 1]
    counts = denom = None
    if n + m <= neghyper.EXACT_LIMIT:
        table = neghyper.count_table(n, m)
        counts = [c for r in rel_ranks.tolist() for c in table[r - 1]]
        denom = math.comb(n + m, m)
    return _merge_atoms(scores.ravel(), masses.ravel(), counts, n, denom)


def dcr_threshold(fmix: MixtureCdf, n: int, alpha: float) -> Threshold:
    """Smallest atom where the mixture CDF reaches ``ceil((n+1)(1-alpha))/(n+1)``."""
    k = conformal_index(n, 1.0 - alpha)
    if fmix.exact_cum is not None:
        target = k * fmix.exact_total
        idx = next(i for i, c in enumerate(fmix.exact_cum) if (n + 1) * c >= target)
    else:
        level = np.longdouble(k) / np.longdouble(n + 1)
        idx = int(np.searchsorted(fmix.cum, level * (1 - _LEVEL_RTOL), side="left"))
        idx = min(idx, fmix.atoms.size - 1)
    return Threshold(float(fmix.atoms[idx]), k / (n + 1), "DCR")


def dcr(preds: Predictions, cal_items, rel_ranks, n: int, m: int, alpha: float) -> Threshold:
    return dcr_threshold(build_mixture(preds, cal_items, rel_ranks, n, m), n, alpha)


def mdcr_threshold(
    preds: Predictions,
    cal_items,
    rel_ranks,
    n: int,
    m: int,
    alpha: float,
    rng: np.random.Generator,
) -> Threshold:
    """Order statistic of one simulated score per calibration item."""
    rel_ranks = np.asarray(rel_ranks, dtype=np.int64)
    sampled = rel_ranks + neghyper.sample_many(rel_ranks, n, m, rng)
    scores = scores_at(preds, np.asarray(cal_items), sampled)
    return order_statistic_threshold(scores, 1.0 - alpha, "MDCR")


def prediction_sets(preds: Predictions, test_items, s_star: Threshold) -> tuple[np.ndarray, np.ndarray]:
    """Rank intervals ``[lo, hi]`` with ``{r : score(item, r) <= s*}`` per item."""
    items = np.asarray(test_items, dtype=np.int64)
    N = preds.N
    if s_star.is_infinite:
        return np.ones(items.size, dtype=np.int64), np.full(items.size, N, dtype=np.int64)
    s = s_star.value
    if preds.kind is ScoreKind.RA:
        centre = preds.pred_ranks[items]
        w = math.floor(s)
        return np.maximum(centre - w, 1), np.minimum(centre + w, N)

    a = preds.va_values[items]
    v = preds.va_sorted
    lo = np.searchsorted(v, a - s, side="left") + 1
    hi = np.searchsorted(v, a + s, side="right")
    # The searches use a-s and a+s; the definition uses |a - v| <= s.  Move
    # edges until they agree with the definition under float rounding.
    while True:
        grow = (lo > 1) & (np.abs(a - v[np.maximum(lo - 2, 0)]) <= s)
        shrink = ~grow & (lo <= hi) & (np.abs(a - v[np.minimum(lo - 1, N - 1)]) > s)
        if not (grow.any() or shrink.any()):
            break
        lo = lo - grow + shrink
    while True:
        grow = (hi < N) & (np.abs(a - v[np.minimum(hi, N - 1)]) <= s)
        shrink = ~grow & (hi >= lo) & (np.abs(a - v[np.maximum(hi - 1, 0)]) > s)
        if not (grow.any() or shrink.any()):
            break
        hi = hi + grow - shrink
    return lo.astype(np.int64), hi.astype(np.int64)


def prediction_set(preds: Predictions, test_item: int, s_star: Threshold, N: int | None = None) -> tuple[int, int]:
    if N is not None and N != preds.N:
        raise ValueError("N does not match the predictions")
    lo, hi = prediction_sets(preds, [test_item], s_star)
    return int(lo[0]), int(hi[0])
