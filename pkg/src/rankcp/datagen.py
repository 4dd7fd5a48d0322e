"""Synthetic populations and stand-in rankers."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .scores import Predictions, ScoreKind


class Link(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class SyntheticConfig:
    """Gaussian-feature generator.

    ``linear``: ``y = x.w + eps`` with unit-norm ``w`` (drawn from the stream
    when not given), ``d = 20``, ``sigma = 0.2`` by default.
    ``logistic``: ``y = 1/(1 + exp(-x.w)) + eps`` with ``w = (1, ..., 1)``,
    ``d = 10``, ``sigma = 0.1`` (variance 0.01) by default.
    """

    link: Link = Link.LINEAR
    dim: int | None = None
    noise_sigma: float | None = None
    weight: tuple[float, ...] | None = None

    def __post_init__(self):
        link = Link(self.link)
        object.__setattr__(self, "link", link)
        if self.dim is None:
            object.__setattr__(self, "dim", 20 if link is Link.LINEAR else 10)
        if self.noise_sigma is None:
            object.__setattr__(self, "noise_sigma", 0.2 if link is Link.LINEAR else 0.1)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.weight is not None:
            w = np.asarray(self.weight, dtype=float)
            if w.shape != (self.dim,):
                raise ValueError("weight length must equal dim")
            if link is Link.LINEAR and abs(np.linalg.norm(w) - 1) > 1e-9:
                raise ValueError("linear weight must have unit norm")

    def with_weight(self, rng: np.random.Generator) -> "SyntheticConfig":
        """Copy with the weight vector fixed (drawn from ``rng`` if linear)."""
        if self.weight is not None:
            return self
        if self.link is Link.LOGISTIC:
            w = np.ones(self.dim)
        else:
            w = rng.standard_normal(self.dim)
            w /= np.linalg.norm(w)
        return SyntheticConfig(self.link, self.dim, self.noise_sigma, tuple(float(x) for x in w))


def gen_linear(cfg: SyntheticConfig, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if cfg.link is not Link.LINEAR:
        raise ValueError("gen_linear needs a linear config")
    cfg = cfg.with_weight(rng)
    X = rng.standard_normal((size, cfg.dim))
    Y = X @ np.asarray(cfg.weight) + cfg.noise_sigma * rng.standard_normal(size)
    return X, Y


def gen_logistic(cfg: SyntheticConfig, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if cfg.link is not Link.LOGISTIC:
        raise ValueError("gen_logistic needs a logistic config")
    cfg = cfg.with_weight(rng)
    X = rng.standard_normal((size, cfg.dim))
    Y = 1.0 / (1.0 + np.exp(-(X @ np.asarray(cfg.weight)))) + cfg.noise_sigma * rng.standard_normal(size)
    return X, Y


def generate(cfg: SyntheticConfig, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if cfg.link is Link.LINEAR:
        return gen_linear(cfg, size, rng)
    return gen_logistic(cfg, size, rng)


def noisy_value_ranker(
    Y: np.ndarray,
    model_sigma: float,
    rng: np.random.Generator,
    kind: ScoreKind | str = ScoreKind.VA,
) -> Predictions:
    """Predicted values ``Y + N(0, model_sigma^2)``; RA ranks those values."""
    if model_sigma < 0:
        raise ValueError("model_sigma must be >= 0")
    Y = np.asarray(Y, dtype=float)
    values = Y + model_sigma * rng.standard_normal(Y.size)
    preds = Predictions.from_values(values, rng=rng)
    return preds.as_ranks() if ScoreKind(kind) is ScoreKind.RA else preds


class SingularSystemError(np.linalg.LinAlgError):
    pass


def train_linear_ranker(X_train: np.ndarray, Y_train: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    """Ridge least squares with penalty ``ridge * trace(X'X) / d``."""
    X_train = np.asarray(X_train, dtype=float)
    Y_train = np.asarray(Y_train, dtype=float)
    n_train, d = X_train.shape
    if n_train == 0 or d > n_train:
        raise ValueError("need a nonempty training set with at least d rows")
    gram = X_train.T @ X_train
    lam = ridge * np.trace(gram) / d
    try:
        w = np.linalg.solve(gram + lam * np.eye(d), X_train.T @ Y_train)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("normal equations are singular") from exc
    if not np.all(np.isfinite(w)):
        raise SingularSystemError("normal equations are singular")
    return w


def predict_linear(X: np.ndarray, w: np.ndarray, rng: np.random.Generator | None = None,
                   kind: ScoreKind | str = ScoreKind.VA) -> Predictions:
    preds = Predictions.from_values(np.asarray(X) @ w, rng=rng)
    return preds.as_ranks() if ScoreKind(kind) is ScoreKind.RA else preds
