from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rankcp.neghyper import NegHypergeom, pmf_table, sample_many
from rankcp.verify import enumerate_rank_pmf


@st.composite
def nh_params(draw, max_N=3000):
    N = draw(st.integers(2, max_N))
    m = draw(st.integers(1, N - 1))
    r = draw(st.integers(1, N - m))
    return N, m, r


def test_pmf_examples():
    assert NegHypergeom(2, 1, 1).pmf(0) == pytest.approx(0.5)
    assert NegHypergeom(3, 0, 2).pmf(0) == 1.0
    d = NegHypergeom(5, 3, 1)
    assert d.pmf_exact(0) == Fraction(2, 5)
    assert d.cdf(1) == pytest.approx(0.4 + d.pmf(1))
    assert d.cdf(-1) == 0.0 and d.cdf(3) == 1.0
    with pytest.raises(ValueError):
        d.pmf(4)


def test_absolute_rank_dist_examples():
    assert list(NegHypergeom(3, 0, 1).absolute_rank_dist().support) == [1]
    dist = NegHypergeom(5, 3, 2).absolute_rank_dist()
    assert list(dist.support) == [2, 3, 4, 5]
    enum = enumerate_rank_pmf(5, 2, 2)
    np.testing.assert_allclose(dist.probs, [float(p) for p in enum.probs])
    top = NegHypergeom(10, 4, 6).absolute_rank_dist()
    assert top.support.max() == 10


@settings(max_examples=200)
@given(nh_params())
def test_matches_scipy_nhypergeom(params):
    N, m, r = params
    ours = NegHypergeom(N, m, r).pmf_array()
    ref = stats.nhypergeom(N, m, r).pmf(np.arange(m + 1))
    np.testing.assert_allclose(ours, ref, rtol=1e-8, atol=1e-13)


@settings(max_examples=200)
@given(nh_params(max_N=10_000))
def test_normalisation_and_mean(params):
    N, m, r = params
    d = NegHypergeom(N, m, r)
    p = d.pmf_array()
    assert abs(p.sum() - 1) <= 1e-12
    assert abs(p @ np.arange(m + 1) - d.mean()) <= 1e-9 * max(1.0, d.mean())


@settings(max_examples=100)
@given(nh_params(max_N=400))
def test_reflection_symmetry(params):
    N, m, r = params
    n = N - m
    a = NegHypergeom(N, m, r).pmf_array()
    b = NegHypergeom(N, m, n + 1 - r).pmf_array()[::-1]
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-15)


def test_exact_small_table_sums_to_one():
    for n in range(1, 6):
        for m in range(1, 6):
            for r in range(1, n + 1):
                d = NegHypergeom(n + m, m, r)
                assert sum(d.pmf_exact(k) for k in range(m + 1)) == 1


def test_pmf_table_is_read_only():
    with pytest.raises(ValueError):
        pmf_table(3, 4)[0, 0] = 1.0


def test_sample_symmetric_case():
    draws = NegHypergeom(2, 1, 1).sample(np.random.default_rng(0), size=100_000)
    assert abs((draws == 0).mean() - 0.5) <= 3 * np.sqrt(0.25 / 100_000)


def test_sample_m_zero():
    assert np.all(NegHypergeom(4, 0, 2).sample(np.random.default_rng(0), size=100) == 0)
    assert np.all(sample_many(np.array([1, 2]), 2, 0, np.random.default_rng(0)) == 0)


@pytest.mark.parametrize("sampler", ["inverse_cdf", "beta_binomial"])
def test_sample_goodness_of_fit(sampler):
    N, m, r, draws = 12, 6, 3, 1_000_000
    d = NegHypergeom(N, m, r)
    rng = np.random.default_rng(5)
    if sampler == "inverse_cdf":
        k = d.sample(rng, size=draws)
    else:
        k = sample_many(np.full(draws, r), N - m, m, rng)
    freq = np.bincount(k, minlength=m + 1) / draws
    p = d.pmf_array()
    assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / draws) + 1e-12)
