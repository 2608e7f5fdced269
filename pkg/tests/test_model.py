import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kappavar.coefficients import UndefinedCoefficientError
from kappavar.model import (
    MultinomialModel,
    SampleStream,
    Scenario,
    build_scenario,
    enumerate_tables,
    expectation,
    population_expected_index,
    population_summaries,
    sample_table,
    sample_tables,
    unbiasedness_bias,
)

P04 = [[0.35, 0.15], [0.15, 0.35]]


def test_build_scenario_examples():
    np.testing.assert_allclose(build_scenario(2, 0.0).p, [[0.25, 0.25], [0.25, 0.25]], atol=1e-15)
    np.testing.assert_allclose(build_scenario(2, 1.0).p, [[0.5, 0], [0, 0.5]], atol=1e-15)
    m = build_scenario(2, 0.4)
    np.testing.assert_allclose(m.p, P04, atol=1e-15)
    assert population_summaries(m).kappa_C == pytest.approx(0.4, abs=1e-12)


@pytest.mark.parametrize("K", [2, 3, 5])
@pytest.mark.parametrize("kappa", [0.0, 0.4, 0.8, 1.0])
def test_scenario_hits_target(K, kappa):
    assert population_summaries(build_scenario(K, kappa)).kappa_C == pytest.approx(kappa, abs=1e-12)


@settings(deadline=None)
@given(st.integers(2, 6), st.floats(0.0, 1.0), st.data())
def test_scenario_hits_target_skewed(K, kappa, data):
    raw = data.draw(st.lists(st.floats(0.05, 1.0), min_size=K, max_size=K))
    m = np.array(raw) / math.fsum(raw)
    m[-1] = 1 - math.fsum(m[:-1])
    model = build_scenario(K, kappa, m)
    assert population_summaries(model).kappa_C == pytest.approx(kappa, abs=1e-12)


def test_build_scenario_errors():
    with pytest.raises(ValueError, match="negative"):
        build_scenario(2, -0.9, [0.9, 0.1])
    with pytest.raises(ValueError):
        build_scenario(1, 0.5)
    with pytest.raises(ValueError):
        build_scenario(2, 0.5, [0.5, 0.6])
    with pytest.raises(ValueError):
        Scenario(2, 1, 0.4)
    with pytest.raises(ValueError):
        Scenario(2, 10, 1.5)


def test_model_validation():
    with pytest.raises(ValueError):
        MultinomialModel([[0.5, 0.5], [0.1, 0]])
    with pytest.raises(ValueError):
        MultinomialModel([[1.1, -0.1], [0, 0]])


def test_population_summaries_examples():
    assert population_summaries(MultinomialModel([[0.5, 0], [0, 0.5]])) == (1, 0.5, 1)
    assert population_summaries(MultinomialModel([[0.25, 0.25], [0.25, 0.25]])) == (0.5, 0.5, 0)
    s = population_summaries(MultinomialModel(P04))
    assert s == pytest.approx((0.7, 0.5, 0.4), abs=1e-15)
    with pytest.raises(UndefinedCoefficientError, match="kappa undefined"):
        population_summaries(MultinomialModel([[1, 0], [0, 0]]))


def test_sample_table_support():
    m = build_scenario(3, 0.4)
    for h in range(20):
        t = sample_table(m, 1, SampleStream(7, h))
        assert t.n == 1 and np.count_nonzero(t.x) == 1
    t = sample_table(MultinomialModel([[1, 0], [0, 0]]), 7, SampleStream(1))
    assert t.x.tolist() == [[7, 0], [0, 0]]
    with pytest.raises(ValueError):
        sample_table(m, 0, SampleStream(1))


def test_sample_table_large_n_frequencies():
    t = sample_table(MultinomialModel(P04), 10**6, SampleStream(2024))
    np.testing.assert_allclose(t.x / 10**6, P04, atol=0.005)


def test_streams_reproducible_and_distinct():
    m = build_scenario(3, 0.4)
    a = sample_table(m, 50, SampleStream(11, 3))
    assert a == sample_table(m, 50, SampleStream(11, 3))
    draws = {sample_table(m, 50, SampleStream(11, h)).x.tobytes() for h in range(50)}
    assert len(draws) > 45
    batch = sample_tables(m, 50, 11, range(2, 6))
    for row, h in zip(batch, range(2, 6)):
        assert np.array_equal(row, sample_table(m, 50, SampleStream(11, h)).x)


def test_empirical_frequencies_within_five_se():
    p = np.array(P04)
    x = sample_tables(MultinomialModel(p), 1, 99, range(100_000)).sum(axis=0)
    N = 100_000
    se = np.sqrt(p * (1 - p) / N)
    assert np.all(np.abs(x / N - p) <= 5 * se)


def test_enumeration_examples():
    p = np.array(P04)
    out = list(enumerate_tables(MultinomialModel(p), 1))
    assert len(out) == 4
    assert sorted(prob for _, prob in out) == pytest.approx(sorted(p.ravel()))
    out = list(enumerate_tables(MultinomialModel(p), 2))
    assert len(out) == 10
    assert math.fsum(prob for _, prob in out) == pytest.approx(1, abs=1e-12)
    assert len({t for t, _ in out}) == 10
    assert unbiasedness_bias(MultinomialModel(p), 3) == pytest.approx(0.0, abs=1e-12)
    assert expectation(MultinomialModel(p), 3, lambda t: 1.0) == pytest.approx(1.0, abs=1e-12)


def test_enumeration_cap():
    with pytest.raises(ValueError, match="reduce n or K"):
        list(enumerate_tables(build_scenario(5, 0.4), 10))


def test_enumeration_mass_small_grid():
    rng = np.random.default_rng(5)
    for K in (2, 3):
        for n in range(1, 5):
            p = rng.dirichlet(np.ones(K * K)).reshape(K, K)
            model = MultinomialModel(p / p.sum())
            total = math.fsum(prob for _, prob in enumerate_tables(model, n))
            assert total == pytest.approx(1.0, abs=1e-10)


def test_enumeration_probability_matches_brute_force():
    # n=3 draws from 4 cells, counted sequence by sequence
    p = np.array([0.1, 0.2, 0.3, 0.4])
    brute = {}
    for a in range(4):
        for b in range(4):
            for c in range(4):
                key = tuple(np.bincount([a, b, c], minlength=4))
                brute[key] = brute.get(key, 0.0) + p[a] * p[b] * p[c]
    for t, prob in enumerate_tables(MultinomialModel(p.reshape(2, 2)), 3):
        assert prob == pytest.approx(brute[tuple(t.x.ravel())], rel=1e-12)


def test_population_expected_index_families():
    m = MultinomialModel([[0.2, 0.3], [0.1, 0.4]])
    assert population_expected_index(m, "cohen") == pytest.approx(0.5 * 0.3 + 0.5 * 0.7)
    assert population_expected_index(m, "scott") == pytest.approx(0.4**2 + 0.6**2)
