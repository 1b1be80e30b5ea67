"""Extrapolation of principal-component score series.

Each component's score series is forecast on its own. Two models are
available: a random walk with drift (the default) and an autoregression
with intercept whose order is chosen by AIC.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RWD, AR = "rwd", "ar"
SCORE_MODELS = (RWD, AR)


class ScoreForecastError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreForecast:
    """Point forecasts and forecast variances of every score at one horizon."""

    horizon: int
    point: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        if self.horizon < 1:
            raise ScoreForecastError("horizons start at 1")
        point = np.atleast_1d(np.asarray(self.point, dtype=float))
        variance = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if point.shape != variance.shape:
            raise ScoreForecastError("point and variance shapes differ")
        if np.any(variance < 0):
            raise ScoreForecastError("variances must be nonnegative")
        object.__setattr__(self, "point", point)
        object.__setattr__(self, "variance", variance)


def _check(series, h, min_len):
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ScoreForecastError("score series must be 1-d")
    if int(h) != h or h < 1:
        raise ScoreForecastError(f"horizon must be a positive integer, got {h!r}")
    if x.size < min_len:
        raise ScoreForecastError(f"need at least {min_len} observations, got {x.size}")
    return x


def forecast_rwd(series, h: int) -> ScoreForecast:
    """Random walk with drift.

    The drift is the mean first difference; the point forecast is
    ``last + h * drift`` and the variance ``s2 * h * (1 + 1 / (n - 1))`` with
    ``s2`` the sample variance of the differences.

    >>> forecast_rwd([1, 2, 3, 4], 2).point
    array([6.])
    """
    x = _check(series, h, 3)
    diffs = np.diff(x)
    drift = diffs.mean()
    s2 = diffs.var(ddof=1)
    var = s2 * h * (1.0 + 1.0 / diffs.size)
    return ScoreForecast(h, x[-1] + h * drift, max(var, 0.0))


@dataclass(frozen=True)
class ArFit:
    order: int
    intercept: float
    coefs: np.ndarray
    sigma2: float
    aic: float


def _ar_design(x, p, start):
    rows = x.size - start
    cols = [np.ones(rows)] + [x[start - j:x.size - j] for j in range(1, p + 1)]
    return np.column_stack(cols), x[start:]


def fit_ar(series, max_order: int) -> ArFit:
    """Least-squares AR(p) with intercept, ``p`` in ``0..max_order`` chosen by AIC.

    All orders are fitted on the same sample (the first ``max_order``
    observations are held back) so their AIC values are comparable. Orders
    whose design matrix is rank deficient are skipped.
    """
    x = np.asarray(series, dtype=float)
    if max_order < 0:
        raise ScoreForecastError("max_order must be nonnegative")
    if x.size < max_order + 3:
        raise ScoreForecastError(f"need at least {max_order + 3} observations")
    best = None
    for p in range(max_order + 1):
        X, y = _ar_design(x, p, max_order)
        if np.linalg.matrix_rank(X) < X.shape[1]:
            continue
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        n_eff = y.size
        rss = float(resid @ resid)
        sigma2_mle = rss / n_eff
        aic = n_eff * np.log(sigma2_mle) + 2 * (p + 1) if sigma2_mle > 0 else -np.inf
        dof = max(n_eff - p - 1, 1)
        fit = ArFit(p, float(beta[0]), beta[1:].copy(), rss / dof, float(aic))
        if best is None or fit.aic < best.aic:
            best = fit
    if best is None:
        # every design was singular (constant series): mean model
        best = ArFit(0, float(x.mean()), np.empty(0), 0.0, -np.inf)
    return best


def forecast_ar(series, h: int, max_order: int = 3) -> ScoreForecast:
    """AR(p) forecast by iterating the fitted recursion ``h`` steps.

    The variance is ``sigma2 * sum_{j<h} psi_j^2`` with ``psi`` the MA
    weights of the fitted recursion.
    """
    x = _check(series, h, max_order + 3)
    fit = fit_ar(x, max_order)
    p = fit.order
    hist = list(x[-p:]) if p else []
    for _ in range(h):
        nxt = fit.intercept + sum(fit.coefs[j] * hist[-1 - j] for j in range(p))
        hist.append(nxt)
    psi = np.zeros(h)
    psi[0] = 1.0
    for j in range(1, h):
        psi[j] = sum(fit.coefs[i] * psi[j - 1 - i] for i in range(min(p, j)))
    var = fit.sigma2 * float(psi @ psi)
    return ScoreForecast(h, hist[-1], var)


def forecast_scores(scores, h: int, model: str = RWD, max_order: int = 3) -> ScoreForecast:
    """Forecast every column of a ``[year, component]`` score matrix independently."""
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2:
        raise ScoreForecastError("scores must be [year, component]")
    if model == RWD:
        parts = [forecast_rwd(s[:, k], h) for k in range(s.shape[1])]
    elif model == AR:
        parts = [forecast_ar(s[:, k], h, max_order) for k in range(s.shape[1])]
    else:
        raise ScoreForecastError(f"unknown score model {model!r}")
    point = np.array([f.point[0] for f in parts])
    var = np.array([f.variance[0] for f in parts])
    return ScoreForecast(h, point, var)
