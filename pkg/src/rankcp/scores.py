"""Non-conformity scores for rank predictions.

RA: the model outputs absolute ranks and the score of candidate rank ``r`` is
``|r - predicted_rank|``.  VA: the model outputs real values ``A(X_i)`` and the
score is ``|A(X_i) - (r-th smallest predicted value)|``.  Both profiles are
V-shaped in ``r``, so ``{r : score <= t}`` is always an interval.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DataError, has_ties, jitter_ties, ranks_within


class ScoreKind(str, enum.Enum):
    RA = "RA"
    VA = "VA"


@dataclass(frozen=True, eq=False)
class Predictions:
    kind: ScoreKind
    pred_ranks: np.ndarray
    va_values: np.ndarray | None = None
    va_sorted: np.ndarray | None = None
    clamped: int = 0

    @property
    def N(self) -> int:
        return int(self.pred_ranks.size)

    @classmethod
    def from_ranks(cls, ranks) -> "Predictions":
        """RA predictions; out-of-range ranks are clamped into ``[1, N]``."""
        raw = np.asarray(ranks)
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise DataError("RA predictions must be integers")
        raw = raw.astype(np.int64)
        clipped = np.clip(raw, 1, raw.size)
        return cls(ScoreKind.RA, clipped, clamped=int(np.count_nonzero(clipped != raw)))

    @classmethod
    def from_values(cls, values, rng: np.random.Generator | None = None, epsilon: float = 1e-9) -> "Predictions":
        """VA predictions; tied values are jittered apart (needs ``rng``)."""
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise DataError("VA predictions must be finite")
        if has_ties(values):
            if rng is None:
                raise DataError("tied VA predictions and no random stream to break them")
            values = jitter_ties(values, epsilon, rng)
        values.setflags(write=False)
        va_sorted = np.sort(values)
        va_sorted.setflags(write=False)
        return cls(ScoreKind.VA, ranks_within(values), values, va_sorted)

    def as_ranks(self) -> "Predictions":
        """RA view of VA predictions (rank of each value)."""
        if self.kind is ScoreKind.RA:
            return self
        return Predictions(ScoreKind.RA, self.pred_ranks.copy())


def predicted_abs_rank(preds: Predictions, item: int) -> int:
    return int(preds.pred_ranks[item])


def _check_rank(preds: Predictions, r) -> None:
    r = np.asarray(r)
    if r.size and (r.min() < 1 or r.max() > preds.N):
        raise ValueError(f"candidate rank outside [1, {preds.N}]")


def scores_at(preds: Predictions, items, ranks) -> np.ndarray:
    """Scores for broadcastable arrays of items and candidate ranks."""
    items = np.asarray(items)
    ranks = np.asarray(ranks)
    if preds.kind is ScoreKind.RA:
        return np.abs(ranks - preds.pred_ranks[items]).astype(float)
    return np.abs(preds.va_values[items] - preds.va_sorted[ranks - 1])


def score(preds: Predictions, item: int, r: int) -> float:
    _check_rank(preds, r)
    return float(scores_at(preds, item, r))


def score_profile(preds: Predictions, item: int) -> np.ndarray:
    """Scores of ``item`` at every candidate rank ``1..N``."""
    return scores_at(preds, item, np.arange(1, preds.N + 1))


def max_score(preds: Predictions, items) -> np.ndarray:
    """Largest score over all ranks, attained at rank 1 or rank N."""
    items = np.asarray(items)
    return np.maximum(scores_at(preds, items, 1), scores_at(preds, items, preds.N))


def write_predictions_csv(preds: Predictions, item_ids, path: str | Path) -> None:
    payload = preds.pred_ranks if preds.kind is ScoreKind.RA else preds.va_values
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("item_id", "pred"))
        for item, p in zip(item_ids, payload):
            writer.writerow([int(item), int(p) if preds.kind is ScoreKind.RA else repr(float(p))])


def read_predictions_csv(path: str | Path, kind: ScoreKind | str, item_ids, rng=None) -> Predictions:
    """Read ``item_id,pred`` rows and align them with ``item_ids``."""
    kind = ScoreKind(kind)
    preds: dict[int, float | int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"item_id", "pred"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                item = int(row["item_id"])
            except ValueError:
                raise DataError(f"{path}:{row_no}: item_id is not an integer") from None
            if item in preds:
                raise DataError(f"{path}:{row_no}: duplicate item_id {item}")
            raw = row["pred"].strip()
            try:
                preds[item] = int(raw) if kind is ScoreKind.RA else float(raw)
            except ValueError:
                expected = "an integer" if kind is ScoreKind.RA else "a number"
                raise DataError(f"{path}:{row_no}: pred {raw!r} is not {expected}") from None
    absent = [int(i) for i in item_ids if int(i) not in preds]
    if absent:
        raise DataError(f"{path}: no prediction for item_id(s) {absent[:5]}")
    if len(preds) != len(item_ids):
        raise DataError(f"{path}: predictions for unknown item_ids")
    ordered = np.array([preds[int(i)] for i in item_ids])
    if kind is ScoreKind.RA:
        return Predictions.from_ranks(ordered)
    return Predictions.from_values(ordered, rng=rng)
