"""Conformal prediction sets for the absolute ranks of test items in a full ranking."""

from .core import DataError, Population, RankError, RankView, jitter_ties, split_population
from .dcr import Threshold, mdcr_threshold, prediction_sets
from .neghyper import NegHypergeom
from .scores import Predictions, ScoreKind
from .tcpr import Envelope, EnvelopeKind, TcprConfig, fit_envelope, oracle_threshold, tcpr_threshold

__all__ = [
    "DataError", "Envelope", "EnvelopeKind", "NegHypergeom", "Population", "Predictions",
    "RankError", "RankView", "ScoreKind", "TcprConfig", "Threshold", "fit_envelope",
    "jitter_ties", "mdcr_threshold", "oracle_threshold", "prediction_sets", "split_population",
    "tcpr_threshold",
]

__version__ = "0.1.0"
