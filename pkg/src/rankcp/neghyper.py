"""Law of the number of unseen test items ranked below a calibration item.

For a calibration item with relative rank ``r`` among ``n`` calibration items,
the count ``k`` of the ``m`` test items below it satisfies

    P(k) = C(r+k-1, k) * C(N-r-k, m-k) / C(N, m),    k = 0..m,   N = n+m.

Tables are computed from exact integer binomials when ``N <= EXACT_LIMIT``
and from log-gamma otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import gammaln

EXACT_LIMIT = 64


def _log_comb(a, b):
    return gammaln(a + 1.0) - gammaln(b + 1.0) - gammaln(a - b + 1.0)


@lru_cache(maxsize=64)
def count_table(n: int, m: int) -> tuple[tuple[int, ...], ...]:
    """Exact favourable-arrangement counts, row ``r-1`` for relative rank ``r``.

    Each row sums to ``C(n+m, m)``.
    """
    N = n + m
    return tuple(
        tuple(comb(r + k - 1, k) * comb(N - r - k, m - k) for k in range(m + 1))
        for r in range(1, n + 1)
    )


@lru_cache(maxsize=64)
def _pmf_table_cached(n: int, m: int) -> np.ndarray:
    N = n + m
    if N <= EXACT_LIMIT:
        total = comb(N, m)
        table = np.array([[c / total for c in row] for row in count_table(n, m)])
    else:
        r = np.arange(1, n + 1, dtype=float)[:, None]
        k = np.arange(m + 1, dtype=float)[None, :]
        logp = _log_comb(r + k - 1, k) + _log_comb(N - r - k, m - k) - _log_comb(float(N), float(m))
        table = np.exp(logp)
        table /= table.sum(axis=1, keepdims=True)
    table.setflags(write=False)
    return table


def pmf_table(n: int, m: int) -> np.ndarray:
    """``(n, m+1)`` read-only array of probabilities; row ``r-1`` is rank ``r``."""
    if n < 1 or m < 0:
        raise ValueError("need n >= 1 and m >= 0")
    return _pmf_table_cached(n, m)


@dataclass(frozen=True)
class DiscreteDist:
    support: np.ndarray
    probs: np.ndarray


class NegHypergeom:
    """Distribution of ``k`` for a calibration item of relative rank ``rel_rank``.

    Parameters
    ----------
    total : int
        Population size ``N = n + m``.
    test_count : int
        Number of test items ``m``.
    rel_rank : int
        Relative calibration rank ``r``, in ``[1, N - m]``.
    """

    def __init__(self, total: int, test_count: int, rel_rank: int):
        if test_count < 0 or total - test_count < 1:
            raise ValueError("need 0 <= test_count < total")
        if not 1 <= rel_rank <= total - test_count:
            raise ValueError(f"rel_rank {rel_rank} outside [1, {total - test_count}]")
        self.total = int(total)
        self.test_count = int(test_count)
        self.rel_rank = int(rel_rank)
        n = self.total - self.test_count
        self._pmf = pmf_table(n, self.test_count)[self.rel_rank - 1]
        cdf = np.cumsum(self._pmf)
        cdf[-1] = 1.0
        self._cdf = cdf

    def __repr__(self):
        return f"NegHypergeom(total={self.total}, test_count={self.test_count}, rel_rank={self.rel_rank})"

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.test_count + 1)

    def pmf(self, k: int) -> float:
        if not 0 <= k <= self.test_count:
            raise ValueError(f"k={k} outside support 0..{self.test_count}")
        return float(self._pmf[k])

    def pmf_exact(self, k: int) -> Fraction:
        """Exact rational probability of ``k``."""
        if not 0 <= k <= self.test_count:
            raise ValueError(f"k={k} outside support 0..{self.test_count}")
        N, m, r = self.total, self.test_count, self.rel_rank
        return Fraction(comb(r + k - 1, k) * comb(N - r - k, m - k), comb(N, m))

    def pmf_array(self) -> np.ndarray:
        return self._pmf.copy()

    def cdf(self, k: int) -> float:
        if k < 0:
            return 0.0
        if k >= self.test_count:
            return 1.0
        return float(self._cdf[k])

    def mean(self) -> float:
        n = self.total - self.test_count
        return self.rel_rank * self.test_count / (n + 1)

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draw(s) from the precomputed table."""
        u = rng.random(size)
        k = np.searchsorted(self._cdf, u, side="right")
        k = np.minimum(k, self.test_count)
        return int(k) if size is None else k

    def absolute_rank_dist(self) -> DiscreteDist:
        """Law of the absolute rank ``rel_rank + k``."""
        return DiscreteDist(self.rel_rank + self.support, self._pmf.copy())


def sample_many(rel_ranks: np.ndarray, n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """One independent draw of ``k`` per relative rank, in O(1) each.

    Uses the beta-binomial representation ``k ~ Binomial(m, p)`` with
    ``p ~ Beta(r, n + 1 - r)``, which has exactly the same law.
    """
    r = np.asarray(rel_ranks, dtype=float)
    if m == 0:
        return np.zeros(r.shape, dtype=np.int64)
    p = rng.beta(r, n + 1 - r)
    return rng.binomial(m, p).astype(np.int64)
