import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ftsintervals.data import AgeGrid, LifeTableSeries
from ftsintervals.transforms import (
    CDF, CLR, DegenerateCdf, ZeroOrNegativeCount, cdf_forward, cdf_inverse, clr_forward,
    clr_inverse, forward, inverse,
)

from conftest import random_series

GRID3 = AgeGrid(("0", "1", "2+"))


def one_year(row, radix=1e5, grid=GRID3):
    return LifeTableSeries(grid, [2000], [row], radix=radix)


def test_clr_constant_row_is_zero():
    g = clr_forward(one_year([1e5 / 3] * 3)).values
    np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_clr_three_age_example():
    radix = 1e5
    g = clr_forward(one_year(np.array([2, 3, 5]) * radix / 10, radix)).values[0]
    logs = np.log([2, 3, 5])
    np.testing.assert_allclose(g, logs - logs.mean(), atol=1e-12)
    # hand arithmetic: mean(ln 2, ln 3, ln 5) = 1.133732
    np.testing.assert_allclose(g, [-0.44059, -0.03512, 0.47571], atol=1e-5)
    assert abs(g.sum()) < 1e-8


def test_clr_rejects_zero():
    with pytest.raises(ZeroOrNegativeCount) as err:
        clr_forward(one_year([0.2e5, 0, 0.8e5]))
    assert err.value.year == 2000 and err.value.age == "1"


def test_clr_inverse_uniform_and_shift():
    d = clr_inverse(np.zeros(111), 1e5)
    np.testing.assert_allclose(d, 1e5 / 111)
    g = np.random.default_rng(0).normal(size=111)
    np.testing.assert_allclose(clr_inverse(g, 1e5), clr_inverse(g + 37.0, 1e5), rtol=1e-12)


def test_clr_inverse_overflow_safe():
    d = clr_inverse(np.array([1000.0, 999.0, -1000.0]), 1.0)
    assert np.all(np.isfinite(d)) and d.sum() == pytest.approx(1.0)


def test_cdf_three_age_example():
    lt = cdf_forward(one_year(np.array([0.2, 0.3, 0.5]) * 1e5)).values[0]
    np.testing.assert_allclose(lt, [np.log(0.2 / 0.8), 0.0], atol=1e-12)
    np.testing.assert_allclose(lt, [-1.38629, 0.0], atol=1e-5)


def test_cdf_interior_zero_repeats():
    lt = cdf_forward(one_year(np.array([0.2, 0.0, 0.8]) * 1e5)).values[0]
    assert lt[0] == lt[1]


def test_cdf_degenerate():
    grid = AgeGrid.single_year(5)
    with pytest.raises(DegenerateCdf) as err:
        cdf_forward(one_year([0, 0, 0, 0, 1e5], grid=grid))
    assert err.value.age == "0"
    clamped = cdf_forward(one_year([0, 0, 0, 0, 1e5], grid=grid), clamp=True).values
    assert np.all(np.isfinite(clamped))


def test_cdf_inverse_two_age():
    np.testing.assert_allclose(cdf_inverse(np.array([0.0]), 1e5), [0.5e5, 0.5e5])


def test_cdf_inverse_repairs_non_monotone():
    l = np.log(np.array([0.6, 0.4, 0.7]) / (1 - np.array([0.6, 0.4, 0.7])))
    d = cdf_inverse(l, 1e5)
    assert np.all(d >= 0) and d.sum() == pytest.approx(1e5, rel=1e-12)
    np.testing.assert_allclose(d, [0.6e5, 0.0, 0.1e5, 0.3e5])


@pytest.mark.parametrize("method", [CLR, CDF])
def test_round_trip(method):
    rng = np.random.default_rng(7)
    s = random_series(rng, n_years=10, n_ages=111)
    back = inverse(forward(s, method).values, method, s.radix)
    assert np.max(np.abs(back / s.values - 1)) <= 1e-10


def test_cdf_round_trip_with_zeros():
    rng = np.random.default_rng(8)
    s = random_series(rng, n_years=10, n_ages=111, zeros=0.05)
    back = inverse(forward(s, CDF).values, CDF, s.radix)
    np.testing.assert_allclose(back, s.values, rtol=1e-10, atol=1e-10 * s.radix)


def test_unconstrained_shapes(synth):
    assert forward(synth, CLR).n_coords == 111
    u = forward(synth, CDF)
    assert u.n_coords == 110
    assert np.all(np.diff(u.values, axis=1) > 0)
    np.testing.assert_allclose(forward(synth, CLR).values.sum(axis=1), 0.0, atol=1e-8)
    np.testing.assert_allclose(u.invert(), synth.values, rtol=1e-10)


finite = st.floats(-40, 40, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 60), elements=finite))
def test_cdf_inverse_total_map(l):
    d = cdf_inverse(l, 1e5)
    assert d.shape == (l.size + 1,)
    assert np.all(d >= 0)
    assert abs(d.sum() - 1e5) <= 1e5 * 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(2, 60), elements=finite))
def test_clr_inverse_total_map(g):
    d = clr_inverse(g, 1e5)
    assert np.all(d >= 0)
    assert abs(d.sum() - 1e5) <= 1e5 * 1e-12


def test_cdf_round_trip_within_conditioning_bound():
    # counts over 16 orders of magnitude: a tiny cell between two nearly equal
    # cumulative proportions is only stored to ~eps |L| D / p by the logit, and
    # the inverse must not lose more than a small multiple of that
    rng = np.random.default_rng(1)
    v = np.exp(rng.normal(0.0, 2.5, size=(50, 111)))
    s = LifeTableSeries.from_counts(AgeGrid.single_year(), np.arange(1900, 1950), v)
    logit = forward(s, CDF).values
    back = inverse(logit, CDF, s.radix)
    p = s.values / s.values.sum(axis=1, keepdims=True)
    d = np.cumsum(p, axis=1)
    mag = np.pad(np.abs(logit), ((0, 0), (1, 1)))
    scale = np.maximum(np.minimum(d, 1 - d + p), p)
    bound = np.finfo(float).eps * (1 + np.maximum(mag[:, 1:], mag[:, :-1])) * scale / p
    assert np.all(np.abs(back / s.values - 1) <= 16 * bound)
