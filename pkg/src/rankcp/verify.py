"""Exhaustive small-instance oracles.

Both oracles enumerate every calibration/test partition of a small
population and use exact rational arithmetic, so comparisons against them
are equalities or exact inequalities.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Iterator

import numpy as np

from . import dcr, tcpr
from .core import RankError, has_ties, ranks_within
from .datagen import noisy_value_ranker
from .neghyper import NegHypergeom
from .scores import Predictions, ScoreKind, scores_at

MAX_ENUM_N = 14
MAX_COVERAGE_N = 12


@dataclass(frozen=True)
class ExactPmf:
    support: tuple[int, ...]
    probs: tuple[Fraction, ...]

    def __getitem__(self, k: int) -> Fraction:
        return self.probs[self.support.index(k)] if k in self.support else Fraction(0)


def enumerate_rank_pmf(N: int, n: int, r: int) -> ExactPmf:
    """Law of the number of test items below the ``r``-th calibration item,
    counted over all ``C(N, n)`` equally likely calibration position sets."""
    if N > MAX_ENUM_N:
        raise ValueError("enumeration too large")
    if not 1 <= r <= n < N:
        raise ValueError("need 1 <= r <= n < N")
    m = N - n
    counts = [0] * (m + 1)
    for positions in itertools.combinations(range(N), n):
        counts[positions[r - 1] - (r - 1)] += 1
    total = comb(N, n)
    return ExactPmf(tuple(range(m + 1)), tuple(Fraction(c, total) for c in counts))


def partitions(N: int, n: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    everything = np.arange(N)
    for cal in itertools.combinations(range(N), n):
        cal = np.array(cal)
        yield cal, np.setdiff1d(everything, cal)


def exact_marginal_coverage(values, preds: Predictions, method: str, alpha: float, n: int) -> Fraction:
    """Probability that a test item's true rank is covered, averaged over all
    partitions with ``n`` calibration items and over test items."""
    values = np.asarray(values, dtype=float)
    N = values.size
    if N > MAX_COVERAGE_N:
        raise ValueError("enumeration too large")
    if has_ties(values):
        raise RankError("ties detected; call jitter_ties first")
    if preds.N != N:
        raise ValueError("predictions do not match the population size")
    method = method.upper()
    if method not in ("DCR", "ORACLE"):
        raise ValueError("exact coverage supports DCR and Oracle only")
    m = N - n
    true_abs = ranks_within(values)
    covered = 0
    for cal, test in partitions(N, n):
        if method == "DCR":
            rel = ranks_within(values[cal])
            thr = dcr.dcr(preds, cal, rel, n, m, alpha)
        else:
            thr = tcpr.oracle_threshold(scores_at(preds, cal, true_abs[cal]), alpha)
        lo, hi = dcr.prediction_sets(preds, test, thr)
        covered += int(np.count_nonzero((true_abs[test] >= lo) & (true_abs[test] <= hi)))
    return Fraction(covered, comb(N, n) * m)


@dataclass(frozen=True)
class CoverageCase:
    values: np.ndarray
    preds: Predictions
    n: int
    alpha: float
    label: str


def coverage_cases(count: int = 24, seed: int = 20240601) -> list[CoverageCase]:
    """Small noisy-ranker configurations mixing RA/VA and three alphas."""
    rng = np.random.default_rng(seed)
    alphas = (0.1, 0.25, 0.5)
    sigmas = (0.2, 0.7, 2.0)
    cases = []
    for i in range(count):
        N = int(rng.integers(5, 11))
        n = int(rng.integers(2, N))
        values = rng.standard_normal(N)
        kind = ScoreKind.RA if i % 2 == 0 else ScoreKind.VA
        sigma = sigmas[(i // 2) % 3]
        alpha = alphas[i % 3]
        preds = noisy_value_ranker(values, sigma, rng, kind)
        label = f"N={N} n={n} {kind.value} sigma={sigma} alpha={alpha}"
        cases.append(CoverageCase(values, preds, n, alpha, label))
    return cases


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_pmf_exactness(max_N: int = 10) -> list[CheckResult]:
    results = []
    for N in range(2, max_N + 1):
        for n in range(1, N):
            mismatches = []
            for r in range(1, n + 1):
                enum = enumerate_rank_pmf(N, n, r)
                dist = NegHypergeom(N, N - n, r)
                for k in enum.support:
                    if dist.pmf_exact(k) != enum[k]:
                        mismatches.append(f"r={r} k={k}: {dist.pmf_exact(k)} != {enum[k]}")
            detail = "all ranks equal" if not mismatches else "; ".join(mismatches[:3])
            results.append(CheckResult(f"nh-pmf N={N} n={n}", not mismatches, detail))
    return results


def check_exact_coverage(cases: list[CoverageCase] | None = None) -> list[CheckResult]:
    results = []
    for case in cases or coverage_cases():
        target = 1 - Fraction(case.alpha).limit_denominator(10**6)
        for method in ("DCR", "Oracle"):
            cov = exact_marginal_coverage(case.values, case.preds, method, case.alpha, case.n)
            results.append(CheckResult(
                f"coverage {method} {case.label}", cov >= target, f"{cov} >= {target} ({float(cov):.4f})"))
    return results


def run_all_checks() -> list[CheckResult]:
    return check_pmf_exactness() + check_exact_coverage()
