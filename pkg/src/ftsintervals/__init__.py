"""Forecasting life-table death-count curves with calibrated prediction intervals.

Curves are mapped to an unconstrained space (:mod:`~ftsintervals.transforms`),
decomposed by functional principal components (:mod:`~ftsintervals.fpca`),
extrapolated (:mod:`~ftsintervals.scores`, :mod:`~ftsintervals.forecast`) and
mapped back. :mod:`~ftsintervals.intervals` builds pointwise bands and
:mod:`~ftsintervals.evaluation` backtests them on an expanding window.
"""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    AgeGrid, DataError, LifeTableSeries, QxSeries, SynthSpec, lifetable_from_qx,
    read_hmd_lifetable, synth_lifetable, synth_pair,
)
from .evaluation import (  # noqa: E402
    BacktestConfig, EvalReport, SplitSpec, cpd, ecp, expanding_backtest, interval_score,
    run_grid,
)
from .fpca import KRule, fit_mfts, fit_mlfts, fit_model, fit_ufts, select_k_evr  # noqa: E402
from .forecast import fit_and_forecast, forecast_model  # noqa: E402
from .intervals import (  # noqa: E402
    IntervalBand, ResidualSet, calibrate_xi, conformal_band, functional_sd, parametric_band,
    sd_band,
)
from .transforms import cdf_forward, cdf_inverse, clr_forward, clr_inverse  # noqa: E402
