import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kappavar.coefficients import (
    ContingencyTable,
    Family,
    UndefinedCoefficientError,
    cohen_kappa,
    crossover_kappa,
    fleiss_kappa,
    scott_pi,
    transform_derivative,
)
from kappavar.model import SampleStream, build_scenario, sample_table
from kappavar.variance import (
    DegenerateSampleError,
    SmoothFunctional,
    VarianceEstimate,
    bootstrap_variance,
    cohen_batch,
    cohen_functional,
    delta_variance,
    family_plugin,
    fce_terms,
    fleiss_cohen_everitt_variance,
    plugin_variance,
    scott_functional,
    unbiased_functional,
    va_factor,
    va_transform,
)

P04 = np.array([[0.35, 0.15], [0.15, 0.35]])


def numeric(f):
    """Drop any analytic gradient so the engine differentiates numerically."""
    return SmoothFunctional(f.evaluate)


def random_p(rng, K):
    # keep every cell away from zero so the kappa functional is smooth around p
    p = rng.dirichlet(np.full(K * K, 2.0)).reshape(K, K) + 1e-3
    return p / p.sum()


# ---------------------------------------------------------------- delta engine


def test_delta_constant_is_zero():
    f = SmoothFunctional(lambda p: 3.0)
    assert delta_variance(f, P04.ravel(), 50).value == 0


@pytest.mark.parametrize("cell", range(4))
def test_delta_single_cell_is_binomial(cell):
    f = SmoothFunctional(lambda p: p[cell])
    pc = P04.ravel()[cell]
    assert delta_variance(f, P04.ravel(), 40).value == pytest.approx(pc * (1 - pc) / 40, rel=1e-8)


def test_delta_cohen_matches_closed_form_example():
    closed = fleiss_cohen_everitt_variance(P04, 100).value
    # hand value: A = 0.112, B = 0.108, C = 0.01 -> 0.21 / (100 * 0.25)
    assert closed == pytest.approx(0.0084, rel=1e-12)
    assert delta_variance(numeric(cohen_functional()), P04.ravel(), 100).value == pytest.approx(closed, rel=1e-8)


def test_analytic_cohen_gradient_matches_numeric():
    rng = np.random.default_rng(3)
    for K in (2, 3, 5):
        p = random_p(rng, K).ravel()
        f = cohen_functional()
        assert delta_variance(f, p, 30).value == pytest.approx(
            delta_variance(numeric(f), p, 30).value, rel=1e-6
        )


def test_delta_zero_cells_ignored():
    p = np.array([0.5, 0.0, 0.0, 0.5])
    assert delta_variance(numeric(cohen_functional()), p, 10).value == pytest.approx(0.0, abs=1e-15)


def test_delta_reports_failing_cell():
    def f(p):
        if p[2] > 0.3:
            raise ZeroDivisionError("boom")
        return p[0]

    p = np.array([0.4, 0.1, 0.3 - 1e-7, 0.2 + 1e-7])
    with pytest.raises(ValueError, match="cell 2"):
        delta_variance(SmoothFunctional(f), p, 10)


def test_delta_rejects_bad_input():
    with pytest.raises(ValueError):
        delta_variance(SmoothFunctional(lambda p: 0.0), [0.5, 0.6], 10)
    with pytest.raises(ValueError):
        delta_variance(SmoothFunctional(lambda p: 0.0), [0.5, 0.5], 0)


@settings(deadline=None, max_examples=50)
@given(st.integers(2, 4), st.integers(0, 2**32 - 1), st.integers(1, 500))
def test_delta_nonnegative_and_scales(K, seed, n):
    p = random_p(np.random.default_rng(seed), K).ravel()
    f = numeric(cohen_functional())
    v1 = delta_variance(f, p, n).value
    v4 = delta_variance(f, p, 4 * n).value
    assert v1 >= 0
    assert v4 == pytest.approx(v1 / 4, rel=1e-12)


# ----------------------------------------------------------------- closed form


def test_fce_perfect_agreement():
    t = fce_terms([[0.5, 0], [0, 0.5]])
    assert (t["A"], t["B"], t["C"]) == pytest.approx((1, 0, 1), abs=1e-15)
    assert fleiss_cohen_everitt_variance([[0.5, 0], [0, 0.5]], 10).value == pytest.approx(0, abs=1e-15)


def test_fce_scale_law_exact():
    v = fleiss_cohen_everitt_variance(P04, 25).value
    assert fleiss_cohen_everitt_variance(P04, 100).value == pytest.approx(v / 4, rel=1e-15)


def test_fce_c_term_both_forms():
    rng = np.random.default_rng(8)
    for _ in range(50):
        t = fce_terms(random_p(rng, 3))
        k, Ie = t["kappa"], t["I_e"]
        assert t["C"] == pytest.approx((k - Ie * (1 - k)) ** 2, abs=1e-14)


def test_fce_undefined():
    with pytest.raises(ValueError, match="undefined"):
        fleiss_cohen_everitt_variance([[1, 0], [0, 0]], 10)


def test_variance_estimate_rejects_negative():
    with pytest.raises(ValueError):
        VarianceEstimate(-1e-3, "plugin")
    with pytest.raises(ValueError):
        VarianceEstimate(1.0, "guess")


# ---------------------------------------------------------------- V_A transform


def test_va_examples():
    for n in (10, 20, 50, 100):
        k = crossover_kappa("cohen", n)
        assert va_transform("cohen", 0.03, k, n).value == pytest.approx(0.03, rel=1e-12)
    assert va_transform("cohen", 0.02, 0.8, 10).value == pytest.approx(8100 / 9.8**4 * 0.02, rel=1e-14)
    assert va_transform("cohen", 0.02, 0.8, 10).value == pytest.approx(0.0175635, abs=1e-7)
    for n, k, base in [(2, -0.5, 0.1), (10, 0.3, 0.02), (77, 0.9, 1e-3)]:
        assert va_transform("fleiss", base, k, n, R=2).value == pytest.approx(
            va_transform("scott", base, k, n).value, rel=1e-12
        )


@pytest.mark.parametrize("family", list(Family))
def test_va_is_squared_derivative(family):
    R = 4 if family is Family.FLEISS else 2
    for n in (3, 10, 100):
        for k in (-0.3, 0.2, 0.9):
            expected = transform_derivative(family, k, n, R) ** 2 * 0.05
            assert va_transform(family, 0.05, k, n, R).value == pytest.approx(expected, rel=1e-12)


def test_va_crossover_signs():
    for family in (Family.COHEN, Family.SCOTT, Family.KRIPPENDORFF):
        for n in (10, 50):
            k = crossover_kappa(family, n)
            assert va_factor(family, k, n) == pytest.approx(1, abs=1e-12)
            assert va_factor(family, k + 0.05, n) < 1 < va_factor(family, k - 0.05, n)


def test_va_rejects_negative_base():
    with pytest.raises(ValueError):
        va_transform("cohen", -0.1, 0.5, 10)


@pytest.mark.parametrize(
    "family, base",
    [(Family.COHEN, cohen_functional), (Family.SCOTT, scott_functional), (Family.KRIPPENDORFF, scott_functional)],
)
def test_chain_rule(family, base):
    rng = np.random.default_rng(17)
    for K in (2, 3):
        for n in (10, 60):
            p = random_p(rng, K).ravel()
            f = numeric(base())
            k = f.evaluate(p)
            V = delta_variance(f, p, n).value
            VU = delta_variance(numeric(unbiased_functional(f, family, n)), p, n).value
            assert va_transform(family, V, k, n).value == pytest.approx(VU, rel=1e-6)


# --------------------------------------------------------------------- plug-in


def test_plugin_perfect_table():
    t = ContingencyTable([[5, 0], [0, 5]])
    assert cohen_kappa(t).value_U == 1
    assert plugin_variance("va_transform", t).value == pytest.approx(0, abs=1e-15)


def test_plugin_near_population():
    model = build_scenario(2, 0.4)
    pop = va_transform("cohen", fleiss_cohen_everitt_variance(model.p, 100).value, 0.4, 100).value
    t = sample_table(model, 100, SampleStream(314))
    assert plugin_variance("va_transform", t).value == pytest.approx(pop, rel=0.25)


def test_plugin_identity():
    t = ContingencyTable([[3, 3], [2, 2]])
    est = cohen_kappa(t)
    base = fleiss_cohen_everitt_variance(t.proportions, 10, I_e=est.I_eU, kappa=est.value_U).value
    expected = va_transform("cohen", base, est.value_U, 10).value
    got = plugin_variance("va_transform", t).value
    assert got > 0 and math.isfinite(got)
    assert got == pytest.approx(expected, rel=1e-15)


def test_plugin_classic_is_fce_at_sample():
    t = ContingencyTable([[20, 5, 1], [4, 15, 3], [2, 2, 18]])
    got = plugin_variance("fleiss_cohen_everitt", t, unbiased=False).value
    assert got == pytest.approx(fleiss_cohen_everitt_variance(t.proportions, t.n).value, rel=1e-15)


def test_plugin_degenerate():
    with pytest.raises(DegenerateSampleError):
        plugin_variance("va_transform", ContingencyTable([[0, 1], [1, 0]]))
    with pytest.raises(DegenerateSampleError):
        plugin_variance("va_transform", ContingencyTable([[6, 0], [0, 0]]))
    with pytest.raises(ValueError, match="unknown"):
        plugin_variance("jackknife", ContingencyTable([[3, 1], [1, 3]]))


def test_batch_matches_scalar_paths():
    model = build_scenario(3, 0.6)
    x = np.array([sample_table(model, 12, SampleStream(5, h)).x for h in range(200)])
    x[0] = [[12, 0, 0], [0, 0, 0], [0, 0, 0]]
    b = cohen_batch(x)
    assert b["degenerate"][0] and np.isnan(b["V_A"][0])
    for h in range(1, 200):
        t = ContingencyTable(x[h])
        est = cohen_kappa(t)
        assert b["kappa_CU"][h] == pytest.approx(est.value_U, abs=1e-12)
        assert b["V_A"][h] == pytest.approx(plugin_variance("va_transform", t).value, rel=1e-12, abs=1e-15)
        assert b["V_delta"][h] == pytest.approx(plugin_variance("delta_numeric", t).value, rel=1e-6, abs=1e-12)


def test_family_plugin_fleiss_matches_scott():
    t = ContingencyTable([[12, 3, 1], [2, 9, 4], [1, 2, 16]])
    s_V, s_VA = family_plugin("scott", t)
    f_V, f_VA = family_plugin("fleiss", t)
    assert f_VA.value == pytest.approx(s_VA.value, rel=1e-6)
    assert f_V.value == pytest.approx(s_V.value, rel=1e-6)
    # the stand-in is the chain rule applied to the same base variance
    assert s_V.value == pytest.approx(s_VA.value, rel=1e-6)


# ------------------------------------------------------------------- bootstrap


def test_bootstrap_constant_and_perfect():
    t = ContingencyTable([[7, 2], [3, 8]])
    assert bootstrap_variance(lambda _: 0.5, t, 200, SampleStream(1)).value == 0
    perfect = ContingencyTable([[6, 0], [0, 4]])
    v = bootstrap_variance(cohen_kappa, perfect, 200, SampleStream(1))
    assert v.value == 0


def test_bootstrap_agrees_with_delta():
    t = sample_table(build_scenario(2, 0.4), 100, SampleStream(77))
    boot = bootstrap_variance(cohen_kappa, t, 2000, SampleStream(78)).value
    closed = plugin_variance("fleiss_cohen_everitt", t, unbiased=False).value
    assert boot == pytest.approx(closed, rel=0.2)


def test_bootstrap_reproducible_and_multirater():
    mr = ContingencyTable([[8, 2], [3, 7]]).to_multirater()
    a = bootstrap_variance(fleiss_kappa, mr, 300, SampleStream(4))
    b = bootstrap_variance(fleiss_kappa, mr, 300, SampleStream(4))
    assert a.value == b.value > 0
    assert a.at["used"] + a.at["degenerate"] == 300


def test_bootstrap_errors():
    t = ContingencyTable([[9, 0], [0, 1]])
    with pytest.raises(ValueError, match="B >= 100"):
        bootstrap_variance(cohen_kappa, t, 50, SampleStream(0))

    def fragile(table):
        if table.x[1, 1] < 3:
            raise UndefinedCoefficientError("too few agreements in category 2")
        return cohen_kappa(table).value

    # x[1, 1] ~ Binomial(20, 0.1): P(< 3) is about 0.68
    with pytest.raises(DegenerateSampleError, match="degenerate"):
        bootstrap_variance(fragile, ContingencyTable([[18, 0], [0, 2]]), 200, SampleStream(0))
    v = bootstrap_variance(fragile, ContingencyTable([[14, 0], [0, 6]]), 200, SampleStream(0))
    assert 0 < v.at["degenerate"] < 100 and v.at["used"] + v.at["degenerate"] == 200


def test_bootstrap_scott_close_to_delta():
    t = sample_table(build_scenario(3, 0.5), 150, SampleStream(12))
    boot = bootstrap_variance(scott_pi, t, 2000, SampleStream(13)).value
    delta = delta_variance(scott_functional(), t.proportions.ravel(), t.n).value
    assert boot == pytest.approx(delta, rel=0.2)
