"""Point forecasts of death-count curves: transform, decompose, extrapolate, invert."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import LifeTableSeries
from .fpca import MLFTS, UFTS, FpcaModel, KRule, fit_model
from .scores import RWD, ScoreForecast, forecast_scores
from .transforms import forward, inverse


@dataclass(frozen=True)
class CurveForecast:
    """Forecast of every series in a model at one horizon.

    ``unconstrained`` is ``[series, coords]`` in transform space and
    ``counts`` the matching death counts ``[series, ages]``.
    """

    horizon: int
    transform: str
    model: FpcaModel
    unconstrained: np.ndarray
    counts: np.ndarray
    score_fc: ScoreForecast
    specific_fc: Optional[tuple]
    radix: float


def fit_series(data: Sequence[LifeTableSeries], transform: str, kind: str,
               k_rule=KRule.evr(), clamp: bool = False, standardize: bool = False) -> FpcaModel:
    """Transform each series and fit a ``kind`` model to the result."""
    unconstrained = [forward(d, transform, clamp=clamp) for d in data]
    kw = {"standardize": standardize} if kind == "mfts" else {}
    return fit_model(kind, unconstrained, k_rule, **kw)


def forecast_model(model: FpcaModel, transform: str, radix: float, horizons,
                   score_model: str = RWD, max_order: int = 3) -> dict:
    """``{h: CurveForecast}`` by extrapolating every score series."""
    out = {}
    for h in horizons:
        cfc = forecast_scores(model.common.scores, h, score_model, max_order)
        sfc = None
        if model.kind == MLFTS:
            sfc = tuple(forecast_scores(b.scores, h, score_model, max_order) for b in model.specific)
            unc = model.reconstruct(cfc.point, [f.point for f in sfc])
        else:
            unc = model.reconstruct(cfc.point)
        out[h] = CurveForecast(h, transform, model, unc, inverse(unc, transform, radix), cfc, sfc, radix)
    return out


def fit_and_forecast(data: Sequence[LifeTableSeries], transform: str, kind: str = UFTS,
                     horizons=(1,), k_rule=KRule.evr(), score_model: str = RWD,
                     max_order: int = 3, clamp: bool = False, standardize: bool = False) -> dict:
    model = fit_series(data, transform, kind, k_rule, clamp=clamp, standardize=standardize)
    return forecast_model(model, transform, data[0].radix, horizons, score_model, max_order)
