import numpy as np
import pytest
from scipy.stats import norm

from ftsintervals.fpca import KRule, fit_ufts
from ftsintervals.intervals import (
    CONFORMAL, PARAMETRIC, SD, DegenerateGamma, IntervalBand, IntervalError, ResidualSet,
    calibrate_xi, conformal_band, conformal_quantile, functional_sd, normal_halfwidth,
    order_index, parametric_band, parametric_count_bands, sd_band, sd_coverage, sd_ratios,
)
from ftsintervals.scores import ScoreForecast
from ftsintervals.transforms import CDF


def test_order_index_round_off():
    assert (1 - 0.7) * 10 > 3    # the float product overshoots
    assert order_index(1 - 0.7, 10) == 3
    assert order_index(0.8, 5) == 4
    assert order_index(0.75, 4) == 3
    assert order_index(0.95, 17) == 17


def test_functional_sd_examples():
    c = 2.5
    assert np.allclose(functional_sd(np.array([[c, c], [-c, -c]])), c * np.sqrt(2))
    assert np.all(functional_sd(np.ones((4, 3))) == 0)
    assert functional_sd(np.array([[1.0], [2.0], [3.0]]))[0] == pytest.approx(1.0)
    with pytest.raises(IntervalError):
        functional_sd(np.ones((1, 3)))


def test_calibrate_xi_order_statistic():
    r = ResidualSet(1, [[0.5, 1.0, 1.5, 2.0]])
    assert calibrate_xi(r, np.ones(4), 0.25) == 1.5


def test_calibrate_xi_zero_residuals():
    r = ResidualSet(1, np.zeros((3, 5)))
    assert calibrate_xi(r, functional_sd(r), 0.2) == 0.0
    band = sd_band(np.full(5, 7.0), functional_sd(r), 0.0, 0.2)
    np.testing.assert_array_equal(band.lower, band.upper)


def test_degenerate_gamma():
    r = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DegenerateGamma):
        calibrate_xi(r, np.array([0.0, 1.0]), 0.2)
    # zero spread with zero residuals is skipped
    assert sd_ratios(r, np.array([1.0, 0.0])).size == 2


def test_gaussian_xi_near_normal_quantile():
    rng = np.random.default_rng(0)
    r = rng.normal(size=(1000, 100))
    xi = calibrate_xi(r, np.ones(100), 0.2)
    assert sd_coverage(r, np.ones(100), xi) >= 0.8
    assert abs(np.mean(np.abs(r) <= xi) - 0.8) < 0.01
    assert xi == pytest.approx(norm.ppf(0.9), abs=0.05)


@pytest.mark.parametrize("alpha", [0.2, 0.05])
def test_sd_self_coverage_and_minimality(alpha):
    rng = np.random.default_rng(1)
    r = rng.standard_t(4, size=(12, 30)) * np.linspace(1, 3, 30)
    gamma = functional_sd(r)
    xi = calibrate_xi(r, gamma, alpha)
    ratios = np.sort(sd_ratios(r, gamma))
    assert sd_coverage(r, gamma, xi) >= 1 - alpha
    lower = ratios[ratios < xi].max()
    assert sd_coverage(r, gamma, lower) < 1 - alpha


def test_sd_band_examples():
    b = sd_band([100.0], [10.0], 1.5, 0.2)
    assert (b.lower[0], b.upper[0]) == (85.0, 115.0)
    b = sd_band([5.0], [10.0], 1.0, 0.2)
    assert b.lower[0] == 0.0 and b.upper[0] == 15.0
    assert sd_band([1.0], [1.0], 0.0, 0.2).lower[0] == 1.0
    with pytest.raises(IntervalError):
        sd_band([1.0], [1.0], -1.0, 0.2)


def test_conformal_examples():
    q, under = conformal_quantile(np.array([[1.0], [-2.0], [3.0], [-4.0]]), 0.2)
    assert q[0] == 4.0 and not under
    q, under = conformal_quantile(np.array([[-2.5, 1.0]]), 0.2)
    np.testing.assert_array_equal(q, [2.5, 1.0])
    assert under
    band = conformal_band(np.array([3.0, 10.0]), ResidualSet(2, [[-4.0, 1.0], [2.0, -1.0]]), 0.5)
    assert band.horizon == 2 and band.lower[0] == 0.0


def test_conformal_under_supported_flag():
    # alpha = 0.05 needs M >= 19 for the corrected index to stay within M
    assert conformal_quantile(np.ones((18, 1)), 0.05)[1]
    assert not conformal_quantile(np.ones((19, 1)), 0.05)[1]


@pytest.mark.parametrize("m", [9, 19, 99])
def test_conformal_exactness(m):
    rng = np.random.default_rng(m)
    reps, alpha = 4000, 0.2
    r = rng.normal(size=(reps, m + 1, 3))
    q = np.sort(np.abs(r[:, :m]), axis=1)[:, min(m, order_index(1 - alpha, m + 1)) - 1]
    cover = np.mean(np.abs(r[:, m]) <= q)
    se = np.sqrt(0.25 / (reps * 3)) * 3
    assert 1 - alpha - se <= cover <= 1 - alpha + 1 / (m + 1) + se


def _exact_model(rng, k=2):
    basis, _ = np.linalg.qr(rng.normal(size=(12, k)))
    x = rng.normal(size=(20, k)) @ basis.T
    return fit_ufts(x, KRule.fixed(k))


def test_parametric_transform_scale():
    rng = np.random.default_rng(2)
    m = _exact_model(rng)
    point = np.zeros(12)
    b = parametric_band(point, m, ScoreForecast(1, [0.0, 0.0], [0.0, 0.0]), 0.05)
    np.testing.assert_allclose(b.lower, point, atol=1e-10)
    np.testing.assert_allclose(b.upper, point, atol=1e-10)
    assert b.scale == "transform"
    assert normal_halfwidth(1.0, 0.05) == pytest.approx(1.95996, abs=1e-5)
    v = np.array([2.0, 0.5])
    b = parametric_band(point, m, ScoreForecast(1, [0.0, 0.0], v), 0.05)
    expected = 1.959964 * np.sqrt(v @ m.common.eigenfunctions ** 2 + m.residual_variance[0])
    np.testing.assert_allclose(b.upper, expected, rtol=1e-6)


def test_parametric_count_bands_nested_and_nonnegative():
    rng = np.random.default_rng(3)
    m = _exact_model(rng)
    point = np.sort(rng.normal(size=12)) * 2
    fc = ScoreForecast(1, [0.0, 0.0], [1.0, 0.3])
    bands = parametric_count_bands(point, m, fc, [0.2, 0.05], transform=CDF, radix=1e5,
                                   n_draws=500, seed=4)
    assert np.all(bands[0.05].lower <= bands[0.2].lower + 1e-9)
    assert np.all(bands[0.05].upper >= bands[0.2].upper - 1e-9)
    assert np.all(bands[0.05].lower >= 0) and bands[0.2].method == PARAMETRIC
    again = parametric_band(point, m, fc, 0.2, transform=CDF, radix=1e5, n_draws=500, seed=4)
    np.testing.assert_array_equal(again.upper, bands[0.2].upper)


def test_parametric_underestimated_variance_undercovers():
    rng = np.random.default_rng(5)
    m = _exact_model(rng, k=1)
    fc = ScoreForecast(1, [0.0], [1.0])
    b = parametric_band(np.zeros(12), m, fc, 0.2)
    truth = rng.normal(size=(20000, 1)) * 2.0 @ m.common.eigenfunctions
    assert b.covers(truth).mean() < 0.8


@pytest.mark.parametrize("method", [SD, CONFORMAL])
def test_alpha_monotone(method):
    rng = np.random.default_rng(6)
    r = ResidualSet(1, rng.normal(size=(30, 8)))
    point = rng.uniform(50, 100, size=8)
    if method == SD:
        g = functional_sd(r)
        wide = sd_band(point, g, calibrate_xi(r, g, 0.05), 0.05)
        narrow = sd_band(point, g, calibrate_xi(r, g, 0.2), 0.2)
    else:
        wide, narrow = conformal_band(point, r, 0.05), conformal_band(point, r, 0.2)
    assert np.all(wide.lower <= narrow.lower) and np.all(wide.upper >= narrow.upper)


def test_band_validation():
    with pytest.raises(IntervalError):
        IntervalBand(1, [2.0], [1.0], 0.2, SD)
    b = IntervalBand(1, [1.0, 1.0], [2.0, 2.0], 0.2, SD)
    np.testing.assert_array_equal(b.covers([2.0, 2.5]), [True, False])
    with pytest.raises(IntervalError):
        calibrate_xi(np.ones((2, 2)), np.ones(2), 1.5)
