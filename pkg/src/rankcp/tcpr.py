"""Envelope-based transductive conformal ranking (TCPR) and the oracle baseline.

TCPR bounds every calibration item's absolute rank by an envelope that holds
jointly with probability ``1 - delta``, scores each item by its worst case
over the envelope, and takes the ``ceil((n+1)(1-alpha+delta))``-th order
statistic.

The joint law of the sorted calibration absolute ranks is a uniformly random
size-``n`` subset of ``[1, N]``, independent of the data, so envelopes depend
only on ``(n, m, delta, K)`` and the random stream.

Both Monte-Carlo envelopes are fitted exactly rather than on a grid:

* linear: every simulation has a smallest half-width ``c_k`` that covers it,
  and the fitted ``c`` is an order statistic of those;
* quantile: with the band at quantile index ``j`` (``gamma = j/K``) each
  simulation is covered iff ``j <= J_k``, where ``J_k`` follows from per-rank
  cumulative counts, and the fitted ``j`` is an order statistic of the ``J_k``.

Simulations are generated in seeded chunks and regenerated for the second
pass instead of being stored, so memory stays O(n N).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .dcr import Threshold, conformal_index, order_statistic_threshold
from .scores import Predictions, max_score, scores_at

log = logging.getLogger(__name__)

_ROUND_TOL = 1e-9
_CHUNK_CELLS = 2_000_000


class EnvelopeKind(str, enum.Enum):
    THEORETICAL = "theoretical"
    LINEAR = "linear"
    QUANTILE = "quantile"


@dataclass(frozen=True, eq=False)
class Envelope:
    """Real-valued rank bounds; index ``r-1`` holds the bounds for relative rank ``r``."""

    lower: np.ndarray
    upper: np.ndarray
    kind: EnvelopeKind
    delta: float
    param: float  # c for linear, gamma for quantile, half-width for theoretical

    def integer_bounds(self, N: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.maximum(np.ceil(self.lower - _ROUND_TOL), 1).astype(np.int64)
        hi = np.minimum(np.floor(self.upper + _ROUND_TOL), N).astype(np.int64)
        return lo, hi


@dataclass(frozen=True)
class TcprConfig:
    delta: float
    K: int = 100_000
    envelope: EnvelopeKind = EnvelopeKind.QUANTILE

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.K < 1:
            raise ValueError("K must be positive")
        object.__setattr__(self, "envelope", EnvelopeKind(self.envelope))


def simulate_sorted_ranks(n: int, m: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Sorted absolute ranks of the ``n`` calibration items among ``N = n + m``.

    Returns shape ``(n,)`` or ``(size, n)``.
    """
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    N = n + m
    rows = 1 if size is None else size
    labels = np.zeros((rows, N), dtype=bool)
    labels[:, :n] = True
    labels = rng.permuted(labels, axis=1)
    out = (np.nonzero(labels)[1].reshape(rows, n) + 1).astype(np.int64)
    return out[0] if size is None else out


def _chunks(n: int, m: int, K: int, entropy: int) -> Iterator[np.ndarray]:
    rows = max(1, _CHUNK_CELLS // (n + m))
    sizes = [rows] * (K // rows) + ([K % rows] if K % rows else [])
    children = np.random.SeedSequence(entropy).spawn(len(sizes))
    for size, child in zip(sizes, children):
        yield simulate_sorted_ranks(n, m, np.random.default_rng(child), size)


def _allowed_failures(K: int, delta: float) -> int:
    return math.floor(K * delta + 1e-9)


def _linear_center(n: int, m: int) -> np.ndarray:
    r = np.arange(1, n + 1, dtype=float)
    return r + (m + 1) * r / n


def theoretical_envelope(n: int, m: int, delta: float) -> Envelope:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    tau = n * m / (n + m)
    arg = 4 * math.sqrt(2) * math.pi * math.sqrt(tau / delta)
    if arg <= 1:
        raise ValueError("delta too large for (n,m)")
    half = (m + 1) * math.sqrt(math.log(arg) / tau)
    centre = _linear_center(n, m)
    return Envelope(centre - half, centre + half, EnvelopeKind.THEORETICAL, delta, half)


def linear_envelope(n: int, m: int, cfg: TcprConfig, rng: np.random.Generator) -> Envelope:
    """Bounds ``r + (m+1)(r/n +- c)`` with the smallest ``c`` whose
    simulated joint failure rate is at most ``delta``."""
    entropy = int(rng.integers(2**63))
    centre = _linear_center(n, m)
    c_k = np.concatenate([
        np.abs(sims - centre).max(axis=1) / (m + 1) for sims in _chunks(n, m, cfg.K, entropy)
    ])
    c_k.sort()
    t = _allowed_failures(cfg.K, cfg.delta)
    c = 0.0 if t >= cfg.K else float(c_k[cfg.K - 1 - t])
    half = (m + 1) * c
    return Envelope(centre - half, centre + half, EnvelopeKind.LINEAR, cfg.delta, c)


def _rank_counts(n: int, m: int, K: int, entropy: int) -> np.ndarray:
    """``cle[r-1, v]`` = number of simulations whose rank-``r`` entry is ``<= v``."""
    N = n + m
    offsets = (np.arange(n) * (N + 1))[None, :]
    counts = np.zeros(n * (N + 1), dtype=np.int64)
    for sims in _chunks(n, m, K, entropy):
        counts += np.bincount((sims + offsets).ravel(), minlength=counts.size)
    return np.cumsum(counts.reshape(n, N + 1), axis=1)


def quantile_envelope(n: int, m: int, cfg: TcprConfig, rng: np.random.Generator) -> Envelope:
    """Per-rank ``(gamma, 1-gamma)`` empirical quantile bands with the
    largest ``gamma`` whose simulated joint failure count is at most ``K delta``."""
    entropy = int(rng.integers(2**63))
    K, N = cfg.K, n + m
    cle = _rank_counts(n, m, K, entropy)
    flat_cle = cle.ravel()
    offsets = (np.arange(n) * (N + 1))[None, :]
    # At band index j the rank-r bounds are the (j+1)-th and (K-j)-th order
    # statistics of column r; value v lies inside iff j <= cle(v) - 1 and
    # j <= K - 1 - cle(v - 1).
    J = np.concatenate([
        np.minimum(flat_cle[idx] - 1, K - 1 - flat_cle[idx - 1]).min(axis=1)
        for idx in ((sims + offsets) for sims in _chunks(n, m, K, entropy))
    ])
    J.sort()
    t = _allowed_failures(K, cfg.delta)
    j = int(J[t]) if t < K else (K - 1) // 2
    j = min(j, (K - 1) // 2)
    if j <= 0:
        log.warning("quantile envelope: no positive gamma feasible, using per-rank min/max")
        j = 0
    lower = np.argmax(cle >= j + 1, axis=1).astype(float)
    upper = np.argmax(cle >= K - j, axis=1).astype(float)
    return Envelope(lower, upper, EnvelopeKind.QUANTILE, cfg.delta, j / K)


def fit_envelope(n: int, m: int, cfg: TcprConfig, rng: np.random.Generator) -> Envelope:
    if cfg.envelope is EnvelopeKind.THEORETICAL:
        return theoretical_envelope(n, m, cfg.delta)
    if cfg.envelope is EnvelopeKind.LINEAR:
        return linear_envelope(n, m, cfg, rng)
    return quantile_envelope(n, m, cfg, rng)


def violation_rate(env: Envelope, sims: np.ndarray) -> float:
    """Fraction of simulated sorted-rank vectors leaving the envelope somewhere."""
    sims = np.atleast_2d(sims)
    lo, hi = env.integer_bounds(int(sims.max()))
    return float(((sims < lo) | (sims > hi)).any(axis=1).mean())


def validate_envelope(env: Envelope, n: int, m: int, K: int, rng: np.random.Generator) -> float:
    """Out-of-sample joint violation rate on ``K`` fresh simulations."""
    entropy = int(rng.integers(2**63))
    lo, hi = env.integer_bounds(n + m)
    bad = 0
    for sims in _chunks(n, m, K, entropy):
        bad += int(((sims < lo) | (sims > hi)).any(axis=1).sum())
    return bad / K


def proxy_scores(env: Envelope, preds: Predictions, cal_items, rel_ranks, N: int) -> np.ndarray:
    """Worst-case score of each calibration item over its envelope interval."""
    cal_items = np.asarray(cal_items)
    rel_ranks = np.asarray(rel_ranks, dtype=np.int64)
    lo_all, hi_all = env.integer_bounds(N)
    lo, hi = lo_all[rel_ranks - 1], hi_all[rel_ranks - 1]
    empty = lo > hi
    lo_safe, hi_safe = np.where(empty, 1, lo), np.where(empty, N, hi)
    out = np.maximum(scores_at(preds, cal_items, lo_safe), scores_at(preds, cal_items, hi_safe))
    if empty.any():
        out[empty] = max_score(preds, cal_items[empty])
    return out


def tcpr_threshold(proxy, alpha: float, delta: float) -> Threshold:
    if not 0 < delta < alpha:
        raise ValueError("TCPR needs 0 < delta < alpha")
    return order_statistic_threshold(proxy, 1.0 - alpha + delta, "TCPR")


def oracle_threshold(true_scores, alpha: float) -> Threshold:
    """Split-conformal threshold on the (hidden) true calibration scores."""
    return order_statistic_threshold(true_scores, 1.0 - alpha, "Oracle")
