"""Pointwise prediction intervals for forecast curves.

Three constructions share one output type, :class:`IntervalBand`:

``sd``
    ``point +/- xi * gamma(u)`` where ``gamma`` is the coordinate-wise
    standard deviation of validation residuals and ``xi`` is one scalar
    per horizon, the smallest multiplier covering a fraction ``1 - alpha``
    of the pooled validation residuals.
``conformal``
    ``point +/- q(u)`` with ``q(u)`` the split-conformal order statistic of
    the absolute validation residuals at coordinate ``u``.
``parametric``
    Gaussian band from the model's total variance (score forecast
    variances pushed through the eigenfunctions plus residual variance),
    built in transform space and mapped back to counts.

Bands on the death-count scale have their lower bound clamped at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .transforms import inverse

SD, CONFORMAL, PARAMETRIC = "sd", "conformal", "parametric"
APPROACHES = (SD, CONFORMAL, PARAMETRIC)


class IntervalError(ValueError):
    pass


class DegenerateGamma(IntervalError):
    """Zero residual spread at a coordinate that has a nonzero residual."""

    def __init__(self, age):
        self.age = age
        super().__init__(f"residual sd is zero at coordinate {age} but a residual is not")


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise IntervalError(f"alpha must lie in (0, 1), got {alpha!r}")


def order_index(level: float, n: int) -> int:
    """``ceil(level * n)`` robust to round-off in ``level * n``."""
    return int(math.ceil(round(level * n, 9)))


@dataclass(frozen=True)
class ResidualSet:
    """Forecast errors ``actual - forecast`` at one horizon, ``[M, coords]``."""

    horizon: int
    residuals: np.ndarray
    years: tuple = ()

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.residuals, dtype=float))
        if not np.all(np.isfinite(r)):
            raise IntervalError("residuals must be finite")
        r.setflags(write=False)
        object.__setattr__(self, "residuals", r)

    @property
    def M(self) -> int:
        return self.residuals.shape[0]


@dataclass(frozen=True)
class IntervalBand:
    horizon: int
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    method: str
    under_supported: bool = False
    scale: str = "count"

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape:
            raise IntervalError("lower and upper bounds differ in shape")
        if np.any(lo > hi):
            raise IntervalError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def covers(self, actual) -> np.ndarray:
        a = np.asarray(actual, dtype=float)
        return (self.lower <= a) & (a <= self.upper)


@dataclass
class CalibrationTable:
    """Per-horizon ``xi`` and ``gamma`` for one significance level."""

    alpha: float
    xi: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    n_residuals: dict = field(default_factory=dict)

    @property
    def horizons(self):
        return sorted(self.xi)


def functional_sd(residuals) -> np.ndarray:
    """Coordinate-wise sample standard deviation (divisor ``M - 1``)."""
    r = residuals.residuals if isinstance(residuals, ResidualSet) else np.asarray(residuals, float)
    if r.shape[0] < 2:
        raise IntervalError("need at least two residual curves for a standard deviation")
    return r.std(axis=0, ddof=1)


def sd_ratios(residuals, gamma) -> np.ndarray:
    """Pooled ``|residual| / gamma`` over every (curve, coordinate).

    Coordinates where ``gamma`` and every residual are zero are left out;
    a zero ``gamma`` with a nonzero residual raises :class:`DegenerateGamma`.
    """
    r = residuals.residuals if isinstance(residuals, ResidualSet) else np.asarray(residuals, float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise IntervalError("gamma must be nonnegative")
    zero = gamma == 0
    if np.any(zero):
        bad = np.flatnonzero(zero & np.any(r != 0, axis=0))
        if bad.size:
            raise DegenerateGamma(int(bad[0]))
    return (np.abs(r[:, ~zero]) / gamma[~zero]).ravel()


def calibrate_xi(residuals, gamma, alpha: float) -> float:
    """Smallest pooled ratio ``xi`` with ``mean(ratio <= xi) >= 1 - alpha``.

    That is the ``ceil((1 - alpha) N)``-th order statistic of the ``N``
    pooled ratios; 0 when no ratio is left after dropping zero-spread
    coordinates.
    """
    _check_alpha(alpha)
    ratios = sd_ratios(residuals, gamma)
    if ratios.size == 0:
        return 0.0
    k = order_index(1 - alpha, ratios.size)
    return float(np.sort(ratios)[k - 1])


def sd_coverage(residuals, gamma, xi: float) -> float:
    """Fraction of pooled ratios within ``xi`` (the calibration objective)."""
    ratios = sd_ratios(residuals, gamma)
    if ratios.size == 0:
        return 1.0
    return float(np.mean(ratios <= xi))


def sd_band(point, gamma, xi: float, alpha: float, horizon: int = 1) -> IntervalBand:
    if xi < 0:
        raise IntervalError("xi must be nonnegative")
    point = np.asarray(point, dtype=float)
    half = xi * np.asarray(gamma, dtype=float)
    return IntervalBand(horizon, np.clip(point - half, 0.0, None), point + half, alpha, SD)


def conformal_quantile(residuals, alpha: float):
    """Per-coordinate split-conformal quantile of absolute residuals.

    Returns ``(q, under_supported)``. The order statistic index is
    ``ceil((1 - alpha)(M + 1))``, capped at ``M``; hitting the cap marks
    the horizon as under-supported.
    """
    _check_alpha(alpha)
    r = residuals.residuals if isinstance(residuals, ResidualSet) else np.atleast_2d(residuals)
    m = r.shape[0]
    if m < 1:
        raise IntervalError("need at least one residual curve")
    k = order_index(1 - alpha, m + 1)
    under = k > m
    k = min(k, m)
    q = np.sort(np.abs(r), axis=0)[k - 1]
    return q, under


def conformal_band(point, residuals, alpha: float, horizon: int = None) -> IntervalBand:
    q, under = conformal_quantile(residuals, alpha)
    if horizon is None:
        horizon = residuals.horizon if isinstance(residuals, ResidualSet) else 1
    point = np.asarray(point, dtype=float)
    return IntervalBand(horizon, np.clip(point - q, 0.0, None), point + q, alpha, CONFORMAL,
                        under_supported=under)


# --------------------------------------------------------------------------
# parametric baseline


def normal_halfwidth(variance, alpha: float) -> np.ndarray:
    _check_alpha(alpha)
    return norm.ppf(1 - alpha / 2) * np.sqrt(np.asarray(variance, dtype=float))


def total_variance(model, score_fc, specific_fc=None, series: int = 0) -> np.ndarray:
    """Forecast variance of one series' unconstrained curve."""
    if score_fc.variance is None:
        raise IntervalError("score forecast carries no variance")
    spec_var = None if specific_fc is None else [f.variance for f in specific_fc]
    return model.total_variance(score_fc.variance, spec_var)[series]


def parametric_band(point, model, score_fc, alpha: float, *, specific_fc=None, series: int = 0,
                    transform: str = None, radix: float = None, n_draws: int = 2000,
                    seed=None) -> IntervalBand:
    """Gaussian band around an unconstrained point forecast.

    Without ``transform`` the band is ``point +/- z * sqrt(v)`` in transform
    space. With ``transform`` the same Gaussian (independent scores,
    independent residual noise per coordinate) is sampled ``n_draws``
    times, each draw is mapped to death counts, and the band is the
    pointwise ``alpha/2`` and ``1 - alpha/2`` sample quantiles.
    """
    _check_alpha(alpha)
    point = np.asarray(point, dtype=float)
    h = score_fc.horizon
    if transform is None:
        half = normal_halfwidth(total_variance(model, score_fc, specific_fc, series), alpha)
        return IntervalBand(h, point - half, point + half, alpha, PARAMETRIC, scale="transform")
    if radix is None:
        raise IntervalError("radix is required to map the band to counts")
    return parametric_count_bands(point, model, score_fc, [alpha], specific_fc=specific_fc,
                                  series=series, transform=transform, radix=radix,
                                  n_draws=n_draws, seed=seed)[alpha]


def parametric_count_bands(point, model, score_fc, alphas, *, specific_fc=None, series=0,
                           transform, radix, n_draws=2000, seed=None) -> dict:
    """``{alpha: band}`` on the count scale, every level from the same draws."""
    draws = sample_curves(point, model, score_fc, specific_fc, series, n_draws, seed)
    counts = inverse(draws, transform, radix)
    out = {}
    for alpha in alphas:
        _check_alpha(alpha)
        lo, hi = np.quantile(counts, [alpha / 2, 1 - alpha / 2], axis=0)
        out[alpha] = IntervalBand(score_fc.horizon, np.clip(lo, 0.0, None), hi, alpha, PARAMETRIC)
    return out


def sample_curves(point, model, score_fc, specific_fc=None, series=0, n_draws=2000, seed=None):
    """Gaussian draws of one series' unconstrained curve, ``[n_draws, coords]``."""
    rng = np.random.default_rng(seed)
    ef = model.eigenfunctions_for(series)
    z = rng.standard_normal((n_draws, ef.shape[0]))
    out = point + (z * np.sqrt(score_fc.variance)) @ ef
    if specific_fc is not None:
        blk = model.specific[series]
        zs = rng.standard_normal((n_draws, blk.k))
        out = out + (zs * np.sqrt(specific_fc[series].variance)) @ blk.eigenfunctions
    e = rng.standard_normal((n_draws, point.size))
    return out + e * np.sqrt(model.residual_variance[series])
