import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankcp import dcr
from rankcp.core import rank_view, split_population
from rankcp.datagen import noisy_value_ranker
from rankcp.dcr import Threshold
from rankcp.neghyper import NegHypergeom
from rankcp.scores import Predictions, ScoreKind, score_profile
from rankcp.tcpr import oracle_threshold
from rankcp.scores import scores_at


def three_item_example():
    preds = Predictions.from_ranks([1, 3, 2])
    return preds, dcr.build_mixture(preds, [0, 1], [1, 2], 2, 1)


def test_calib_score_dist_example():
    preds, _ = three_item_example()
    d = dcr.calib_score_dist(preds, 0, 1, 2, 1)
    np.testing.assert_array_equal(d.support, [0, 1])
    np.testing.assert_allclose(d.masses, [2 / 3, 1 / 3])


def test_calib_score_dist_m_zero_is_point_mass():
    preds = Predictions.from_ranks([2, 1])
    d = dcr.calib_score_dist(preds, 0, 1, 2, 0)
    np.testing.assert_array_equal(d.support, [1.0])
    np.testing.assert_array_equal(d.masses, [1.0])


def test_mixture_example():
    _, fmix = three_item_example()
    assert fmix.exact(0) == Fraction(2, 3)
    assert fmix.exact(1) == 1
    assert fmix(0.5) == pytest.approx(2 / 3)
    assert fmix(-1) == 0.0


def test_mixture_of_identical_components():
    preds = Predictions.from_values(np.random.default_rng(0).standard_normal(12))
    d = dcr.calib_score_dist(preds, 3, 2, 5, 7)
    one = dcr.mixture_cdf([d])
    two = dcr.mixture_cdf([d, d])
    np.testing.assert_array_equal(one.atoms, two.atoms)
    np.testing.assert_allclose(one.cum, two.cum)
    with pytest.raises(ValueError):
        dcr.mixture_cdf([])


def test_dcr_threshold_examples():
    _, fmix = three_item_example()
    t = dcr.dcr_threshold(fmix, 2, 0.4)
    assert (t.value, t.level) == (0.0, pytest.approx(2 / 3))
    t = dcr.dcr_threshold(fmix, 2, 0.2)
    assert (t.value, t.level) == (1.0, 1.0)
    assert dcr.dcr_threshold(fmix, 2, 1e-6).value == fmix.atoms[-1]


@settings(max_examples=60)
@given(st.integers(2, 80), st.integers(0, 2**32 - 1), st.sampled_from(["RA", "VA"]))
def test_build_mixture_agrees_with_component_path(N, seed, kind):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, N))
    pop = split_population(rng.standard_normal(N), n, rng)
    preds = noisy_value_ranker(pop.values, 0.5, rng, kind)
    rel = rank_view(pop).rel_calib_ranks
    fast = dcr.build_mixture(preds, pop.cal_idx, rel, n, pop.m)
    slow = dcr.mixture_cdf([dcr.calib_score_dist(preds, i, r, n, pop.m) for i, r in zip(pop.cal_idx, rel)])
    np.testing.assert_array_equal(fast.atoms, slow.atoms)
    np.testing.assert_allclose(fast.cum, slow.cum, atol=1e-12)
    assert np.all(np.diff(fast.atoms) > 0) and np.all(np.diff(fast.cum) >= -1e-15)
    assert fast.cum[-1] == 1
    alpha = float(rng.uniform(0.05, 0.6))
    assert dcr.dcr(preds, pop.cal_idx, rel, n, pop.m, alpha).value == dcr.dcr_threshold(slow, n, alpha).value


@settings(max_examples=60)
@given(st.integers(3, 60), st.integers(0, 2**32 - 1))
def test_threshold_is_smallest_atom_reaching_level(N, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, N))
    pop = split_population(rng.standard_normal(N), n, rng)
    preds = noisy_value_ranker(pop.values, 1.0, rng, "VA")
    rel = rank_view(pop).rel_calib_ranks
    fmix = dcr.build_mixture(preds, pop.cal_idx, rel, n, pop.m)
    alpha = float(rng.uniform(0.02, 0.9))
    t = dcr.dcr_threshold(fmix, n, alpha)
    k = dcr.conformal_index(n, 1 - alpha)
    level = Fraction(k, n + 1)
    assert fmix.exact(t.value) >= level
    below = fmix.atoms[fmix.atoms < t.value]
    if below.size:
        assert fmix.exact(below[-1]) < level


def test_float_and_exact_paths_agree_near_limit():
    # N = 64 uses exact counts; compare against a longdouble recomputation.
    rng = np.random.default_rng(11)
    for _ in range(20):
        pop = split_population(rng.standard_normal(64), 30, rng)
        preds = noisy_value_ranker(pop.values, 0.3, rng, "RA")
        rel = rank_view(pop).rel_calib_ranks
        fmix = dcr.build_mixture(preds, pop.cal_idx, rel, 30, 34)
        floaty = dcr.MixtureCdf(fmix.atoms, fmix.cum)
        for alpha in (0.05, 0.1, 0.2, 0.5):
            assert dcr.dcr_threshold(fmix, 30, alpha).value == dcr.dcr_threshold(floaty, 30, alpha).value


def test_mdcr_examples():
    assert dcr.order_statistic_threshold(np.array([3.0, 0.0, 2.0, 1.0]), 0.5, "MDCR").value == 2.0
    preds = Predictions.from_ranks([1, 2, 3])
    t = dcr.mdcr_threshold(preds, [0, 1], [1, 2], 2, 1, 0.3, np.random.default_rng(0))
    assert t.is_infinite


def test_mdcr_with_no_test_items_equals_oracle():
    rng = np.random.default_rng(4)
    values = rng.standard_normal(30)
    preds = noisy_value_ranker(values, 0.4, rng, "RA")
    cal = np.arange(30)
    true = np.argsort(np.argsort(values)) + 1
    t = dcr.mdcr_threshold(preds, cal, true, 30, 0, 0.2, rng)
    assert t.value == oracle_threshold(scores_at(preds, cal, true), 0.2).value


def test_mdcr_is_deterministic_given_seed():
    preds = Predictions.from_values(np.random.default_rng(0).standard_normal(50))
    args = (preds, np.arange(20), np.random.default_rng(1).permutation(20) + 1, 20, 30, 0.1)
    a = dcr.mdcr_threshold(*args, np.random.default_rng(9))
    b = dcr.mdcr_threshold(*args, np.random.default_rng(9))
    assert a == b


def test_prediction_set_examples():
    N = 100
    ranks = np.arange(1, N + 1)
    ranks[0], ranks[9] = 10, 1
    ranks[1] = 2
    preds = Predictions.from_ranks(ranks)
    assert dcr.prediction_set(preds, 0, Threshold(3.0, 0.9, "DCR")) == (7, 13)
    assert dcr.prediction_set(preds, 1, Threshold(3.0, 0.9, "DCR"), N) == (1, 5)
    assert dcr.prediction_set(preds, 1, Threshold(math.inf, 1.0, "DCR")) == (1, N)


@settings(max_examples=80)
@given(st.integers(2, 60), st.integers(0, 2**32 - 1), st.sampled_from(["RA", "VA"]))
def test_prediction_sets_match_brute_force(N, seed, kind):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(N) * rng.choice([1e-6, 1.0, 1e6])
    preds = noisy_value_ranker(values, 0.7 * float(values.std() + 1e-12), rng, kind)
    profiles = np.array([score_profile(preds, i) for i in range(N)])
    candidates = np.concatenate([np.unique(profiles), [0.5, 2.5]])
    for s in rng.choice(candidates, size=min(8, candidates.size), replace=False):
        lo, hi = dcr.prediction_sets(preds, np.arange(N), Threshold(float(s), 0.9, "DCR"))
        for i in range(N):
            inside = np.flatnonzero(profiles[i] <= s) + 1
            assert inside.size > 0
            assert (lo[i], hi[i]) == (inside[0], inside[-1])
            assert inside.size == hi[i] - lo[i] + 1


@pytest.mark.parametrize("N, n, r", [(7, 3, 2), (10, 4, 1), (9, 8, 8)])
def test_mixture_is_average_of_nh_pushforwards(N, n, r):
    # The mixture mass at each atom is the average of the items' NH masses.
    rng = np.random.default_rng(N)
    preds = Predictions.from_values(rng.standard_normal(N))
    m = N - n
    rel = np.arange(1, n + 1)
    cal = rng.permutation(N)[:n]
    fmix = dcr.build_mixture(preds, cal, rel, n, m)
    for t in fmix.atoms:
        expected = sum(
            sum(NegHypergeom(N, m, int(rr)).pmf_exact(k) for k in range(m + 1)
                if scores_at(preds, item, rr + k) <= t)
            for item, rr in zip(cal, rel)) / n
        assert fmix.exact(t) == expected
