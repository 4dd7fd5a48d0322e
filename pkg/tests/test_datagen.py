import numpy as np
import pytest
from scipy import stats

from rankcp import datagen
from rankcp.datagen import Link, SyntheticConfig
from rankcp.scores import ScoreKind, scores_at


def test_defaults():
    lin = SyntheticConfig()
    assert (lin.dim, lin.noise_sigma) == (20, 0.2)
    log = SyntheticConfig(Link.LOGISTIC)
    assert (log.dim, log.noise_sigma) == (10, 0.1)
    assert np.all(np.array(log.with_weight(np.random.default_rng(0)).weight) == 1)


def test_linear_noiseless_and_variance():
    cfg = SyntheticConfig(noise_sigma=0.0).with_weight(np.random.default_rng(0))
    X, Y = datagen.gen_linear(cfg, 1000, np.random.default_rng(1))
    np.testing.assert_allclose(Y, X @ np.array(cfg.weight))
    _, Y = datagen.gen_linear(SyntheticConfig().with_weight(np.random.default_rng(0)), 100_000,
                              np.random.default_rng(2))
    assert Y.var() == pytest.approx(1.04, rel=0.05)


def test_generators_are_deterministic():
    cfg = SyntheticConfig().with_weight(np.random.default_rng(0))
    a = datagen.generate(cfg, 50, np.random.default_rng(3))
    b = datagen.generate(cfg, 50, np.random.default_rng(3))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_logistic_properties():
    cfg = SyntheticConfig(Link.LOGISTIC, noise_sigma=0.0)
    _, Y = datagen.gen_logistic(cfg, 20_000, np.random.default_rng(4))
    assert Y.min() > 0 and Y.max() < 1
    assert abs(Y.mean() - 0.5) <= 3 * Y.std() / np.sqrt(Y.size)
    flat = SyntheticConfig(Link.LOGISTIC, noise_sigma=0.0, weight=tuple([0.0] * 10))
    _, Y = datagen.gen_logistic(flat, 10, np.random.default_rng(4))
    np.testing.assert_array_equal(Y, 0.5)


def test_weight_validation():
    with pytest.raises(ValueError):
        SyntheticConfig(weight=(1.0, 0.0))
    with pytest.raises(ValueError):
        SyntheticConfig(dim=2, weight=(1.0, 1.0))
    with pytest.raises(ValueError):
        datagen.gen_linear(SyntheticConfig(Link.LOGISTIC), 5, np.random.default_rng(0))


def test_perfect_ranker():
    Y = np.random.default_rng(5).standard_normal(40)
    preds = datagen.noisy_value_ranker(Y, 0.0, np.random.default_rng(6), ScoreKind.RA)
    true = np.argsort(np.argsort(Y)) + 1
    np.testing.assert_array_equal(preds.pred_ranks, true)
    assert np.all(scores_at(preds, np.arange(40), true) == 0)


def test_noise_degrades_ranking_monotonically():
    rng = np.random.default_rng(7)
    sigmas = [0.0, 0.1, 0.5, 2.0, 10.0]
    errors = {s: [] for s in sigmas}
    taus = []
    for _ in range(100):
        Y = rng.standard_normal(60)
        true = np.argsort(np.argsort(Y)) + 1
        for s in sigmas:
            preds = datagen.noisy_value_ranker(Y, s, rng, "RA")
            errors[s].append(np.abs(preds.pred_ranks - true).mean())
        taus.append(stats.kendalltau(datagen.noisy_value_ranker(Y, 1e4, rng).pred_ranks, true)[0])
    means = [np.mean(errors[s]) for s in sigmas]
    assert all(a <= b for a, b in zip(means, means[1:]))
    assert abs(np.mean(taus)) <= 3 * np.std(taus) / np.sqrt(len(taus))


def test_linear_ranker_recovers_weights():
    cfg = SyntheticConfig(noise_sigma=0.0).with_weight(np.random.default_rng(0))
    X, Y = datagen.gen_linear(cfg, 500, np.random.default_rng(1))
    w = datagen.train_linear_ranker(X[:300], Y[:300])
    np.testing.assert_allclose(w, cfg.weight, atol=1e-6)
    preds = datagen.predict_linear(X[300:], w)
    assert stats.spearmanr(preds.va_values, Y[300:])[0] > 0.999


def test_linear_ranker_small_ridge_matches_lstsq():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((200, 5))
    Y = rng.standard_normal(200)
    ref = np.linalg.lstsq(X, Y, rcond=None)[0]
    np.testing.assert_allclose(datagen.train_linear_ranker(X, Y), ref, atol=1e-6)
    preds = datagen.predict_linear(X, datagen.train_linear_ranker(X, Y))
    assert abs(stats.spearmanr(preds.va_values, Y)[0]) < 0.3


def test_linear_ranker_errors():
    with pytest.raises(ValueError):
        datagen.train_linear_ranker(np.zeros((2, 5)), np.zeros(2))
    with pytest.raises(datagen.SingularSystemError):
        datagen.train_linear_ranker(np.zeros((10, 3)), np.zeros(10))
