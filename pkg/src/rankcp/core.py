"""Ground-truth populations, rank operators and calibration/test splitting.

Rank convention: ``compute_rank(y, D)`` counts the elements ``z`` of ``D`` with
``y >= z``.  On tie-free data this is the usual 1-based position of ``y`` in
sorted ``D``, and ``inverse_rank`` is its inverse.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class RankError(ValueError):
    """Invalid rank query or ill-formed rank data."""


class DataError(ValueError):
    """Malformed input file or inconsistent population."""


def compute_rank(y: float, values: Sequence[float]) -> int:
    """Number of elements of ``values`` that are ``<= y``."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise RankError("empty rank domain")
    return int(np.count_nonzero(arr <= y))


def inverse_rank(r: int, values: Sequence[float]) -> float:
    """The ``r``-th smallest element of ``values`` (1-based)."""
    arr = np.asarray(values, dtype=float)
    if not 1 <= r <= arr.size:
        raise RankError("rank out of range")
    return float(np.partition(arr, r - 1)[r - 1])


def ranks_within(values: np.ndarray) -> np.ndarray:
    """1-based ranks of every entry of a tie-free array, vectorized."""
    values = np.asarray(values)
    out = np.empty(values.size, dtype=np.int64)
    out[np.argsort(values, kind="stable")] = np.arange(1, values.size + 1)
    return out


def has_ties(values: np.ndarray) -> bool:
    values = np.asarray(values)
    return np.unique(values).size != values.size


def jitter_ties(
    values: Sequence[float],
    epsilon: float,
    rng: np.random.Generator,
    symmetric: bool = True,
) -> np.ndarray:
    """Add tiny uniform noise so that the output has no ties.

    One-sided mode draws from U(0, epsilon); symmetric mode draws from
    U(-epsilon/2, epsilon/2), so in both modes two values further apart than
    ``epsilon`` keep their order.  Entries that still collide after the first
    draw (possible at float resolution) are redrawn.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    base = np.asarray(values, dtype=float)

    def noise(size: int) -> np.ndarray:
        u = rng.random(size)
        return (u - 0.5) * epsilon if symmetric else u * epsilon

    out = base + noise(base.size)
    for _ in range(64):
        _, inverse, counts = np.unique(out, return_inverse=True, return_counts=True)
        dup = counts[inverse] > 1
        if not dup.any():
            return out
        out[dup] = base[dup] + noise(int(dup.sum()))
    raise RankError("could not break ties; epsilon below float resolution")


@dataclass(frozen=True)
class Population:
    """N ground-truth values with a calibration/test assignment.

    Test values may be NaN when they are unknown (externally scored data);
    such a population can be calibrated on but not scored.
    """

    values: np.ndarray
    is_cal: np.ndarray
    item_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        is_cal = np.asarray(self.is_cal, dtype=bool)
        if values.ndim != 1 or values.shape != is_cal.shape:
            raise DataError("values and assignment must be 1-d of equal length")
        ids = self.item_ids
        ids = np.arange(values.size) if ids is None else np.asarray(ids, dtype=np.int64)
        if ids.shape != values.shape:
            raise DataError("item_ids length mismatch")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "is_cal", is_cal)
        object.__setattr__(self, "item_ids", ids)
        if self.n < 1 or self.m < 1:
            raise DataError("population needs at least one calibration and one test item")
        if np.isnan(values[is_cal]).any():
            raise DataError("calibration values must be known")

    @property
    def N(self) -> int:
        return int(self.values.size)

    @property
    def n(self) -> int:
        return int(np.count_nonzero(self.is_cal))

    @property
    def m(self) -> int:
        return self.N - self.n

    @property
    def cal_idx(self) -> np.ndarray:
        return np.flatnonzero(self.is_cal)

    @property
    def test_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.is_cal)

    @property
    def has_test_values(self) -> bool:
        return not np.isnan(self.values[~self.is_cal]).any()


@dataclass(frozen=True)
class RankView:
    """Harness-side rank information.

    ``rel_calib_ranks`` is aligned with ``Population.cal_idx`` and is the only
    part a calibration method may see. ``true_abs_ranks`` is indexed by item.
    """

    rel_calib_ranks: np.ndarray
    true_abs_ranks: np.ndarray


def split_population(values: Sequence[float], n: int, rng: np.random.Generator) -> Population:
    """Flag a uniformly random size-``n`` subset of items as calibration."""
    values = np.asarray(values, dtype=float)
    if not 1 <= n < values.size:
        raise DataError(f"calibration size n={n} must lie in [1, {values.size - 1}]")
    is_cal = np.zeros(values.size, dtype=bool)
    is_cal[rng.choice(values.size, size=n, replace=False)] = True
    return Population(values, is_cal)


def calibration_ranks(pop: Population) -> np.ndarray:
    """Relative ranks of the calibration items among themselves."""
    cal_values = pop.values[pop.is_cal]
    if has_ties(cal_values):
        raise RankError("ties among calibration values; call jitter_ties first")
    return ranks_within(cal_values)


def rank_view(pop: Population) -> RankView:
    if not pop.has_test_values:
        raise RankError("test values are hidden; absolute ranks unavailable")
    if has_ties(pop.values):
        raise RankError("ties detected; call jitter_ties first")
    return RankView(
        rel_calib_ranks=ranks_within(pop.values[pop.is_cal]),
        true_abs_ranks=ranks_within(pop.values),
    )


POPULATION_COLUMNS = ("item_id", "split", "y_true")


def write_population_csv(pop: Population, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POPULATION_COLUMNS)
        for item, cal, y in zip(pop.item_ids, pop.is_cal, pop.values):
            writer.writerow([int(item), "cal" if cal else "test", "" if np.isnan(y) else repr(float(y))])


def read_population_csv(path: str | Path) -> Population:
    """Parse the ``item_id,split,y_true`` schema; test ``y_true`` may be empty."""
    ids, flags, values = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(POPULATION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                ids.append(int(row["item_id"]))
            except ValueError:
                raise DataError(f"{path}:{row_no}: item_id is not an integer") from None
            split = row["split"].strip()
            if split not in ("cal", "test"):
                raise DataError(f"{path}:{row_no}: split must be 'cal' or 'test', got {split!r}")
            flags.append(split == "cal")
            raw = row["y_true"].strip()
            if raw == "":
                if split == "cal":
                    raise DataError(f"{path}:{row_no}: calibration row without y_true")
                values.append(np.nan)
            else:
                try:
                    values.append(float(raw))
                except ValueError:
                    raise DataError(f"{path}:{row_no}: y_true is not a number") from None
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate item_id values")
    return Population(np.array(values), np.array(flags), np.array(ids, dtype=np.int64))
