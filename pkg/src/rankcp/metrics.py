"""Per-trial scoring and cross-trial aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class TrialResult:
    method: str
    coverage: float
    fcp: float
    mean_set_size: float
    relative_length: float
    threshold: float
    seed: int


def score_trial(lo, hi, true_ranks, N: int, method: str = "", threshold: float = math.nan, seed: int = 0) -> TrialResult:
    """Score one trial's rank intervals against the true absolute ranks of the test items."""
    lo, hi, true_ranks = (np.asarray(a) for a in (lo, hi, true_ranks))
    if not (lo.shape == hi.shape == true_ranks.shape):
        raise ValueError(f"{lo.size} intervals for {true_ranks.size} test items")
    m = true_ranks.size
    missed = int(np.count_nonzero((true_ranks < lo) | (true_ranks > hi)))
    fcp = missed / m
    size = float(np.mean(hi - lo + 1))
    return TrialResult(method, (m - missed) / m, fcp, size, size / N, float(threshold), int(seed))


@dataclass(frozen=True)
class MethodSummary:
    name: str
    trials: int
    coverage_mean: float
    coverage_std: float
    fcp_mean: float
    fcp_std: float
    rel_length_mean: float
    rel_length_std: float
    set_size_mean: float
    set_size_std: float
    threshold_mean: float | None
    inf_threshold_count: int
    single_trial: bool


@dataclass
class AggregateReport:
    methods: list[MethodSummary]
    config: dict = field(default_factory=dict)

    def method(self, name: str) -> MethodSummary:
        for s in self.methods:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        out = []
        for s in self.methods:
            out.append({
                "name": s.name,
                "coverage_mean": s.coverage_mean,
                "coverage_std": s.coverage_std,
                "fcp_mean": s.fcp_mean,
                "fcp_std": s.fcp_std,
                "rel_length_mean": s.rel_length_mean,
                "rel_length_std": s.rel_length_std,
                "set_size_mean": s.set_size_mean,
                "threshold_mean": s.threshold_mean,
                "inf_threshold_count": s.inf_threshold_count,
                "trials": s.trials,
                "single_trial": s.single_trial,
            })
        return {"config": self.config, "methods": out}


def _mean_std(x: np.ndarray) -> tuple[float, float]:
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std(ddof=1))


def aggregate(trials: Iterable[TrialResult], config: dict | None = None) -> AggregateReport:
    """Mean and unbiased std per method; infinite thresholds counted separately."""
    trials = sorted(trials, key=lambda t: (t.method, t.seed))
    if not trials:
        raise ValueError("no trials to aggregate")
    order: list[str] = []
    groups: dict[str, list[TrialResult]] = {}
    for t in trials:
        if t.method not in groups:
            order.append(t.method)
            groups[t.method] = []
        groups[t.method].append(t)
    summaries = []
    for name in order:
        g = groups[name]
        cov = np.array([t.coverage for t in g])
        fcp = np.array([t.fcp for t in g])
        rel = np.array([t.relative_length for t in g])
        size = np.array([t.mean_set_size for t in g])
        thr = np.array([t.threshold for t in g])
        finite = thr[np.isfinite(thr)]
        summaries.append(MethodSummary(
            name, len(g), *_mean_std(cov), *_mean_std(fcp), *_mean_std(rel), *_mean_std(size),
            float(finite.mean()) if finite.size else None,
            int(np.count_nonzero(np.isinf(thr))),
            len(g) == 1,
        ))
    return AggregateReport(summaries, dict(config or {}))


def format_float(x: float) -> str:
    """CSV rendering: shortest round-trip repr, ``inf`` for infinity."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


TRIAL_COLUMNS: Sequence[str] = ("seed", "method", "coverage", "fcp", "rel_length", "threshold")


def trial_row(t: TrialResult) -> list[str]:
    return [str(t.seed), t.method, format_float(t.coverage), format_float(t.fcp),
            format_float(t.relative_length), format_float(t.threshold)]
