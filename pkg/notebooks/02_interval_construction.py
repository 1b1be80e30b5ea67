"""
Building prediction intervals at one horizon
============================================

The three interval constructions all start from a point forecast of the
next year's death counts. The sd-based and conformal bands are tuned on
one-step-ahead residuals collected over a validation stretch; the
parametric band uses the model's own variance.

Run from the repository root::

    python notebooks/02_interval_construction.py
"""

import numpy as np

from ftsintervals import (
    ResidualSet, SynthSpec, calibrate_xi, conformal_band, fit_and_forecast, functional_sd,
    interval_score, sd_band, synth_lifetable,
)
from ftsintervals.intervals import parametric_count_bands
from ftsintervals.transforms import CDF

series = synth_lifetable(SynthSpec(seed=3, noise_sd=0.02))
alpha = 0.2

# %%
# One-step residual curves (actual - forecast) from 16 expanding origins.
# Each origin refits the model on every year up to and including it.
residuals = []
for stop in range(16, 32):
    fc = fit_and_forecast([series.select(0, stop)], CDF, horizons=(1,))[1]
    residuals.append(series.values[stop] - fc.counts[0])
res = ResidualSet(1, np.array(residuals))
print("validation residual curves:", res.M)

# %%
# sd-based band: one multiplier xi scales the age-wise residual sd gamma(u).
# xi is the smallest value covering 80% of the pooled |residual| / gamma.
gamma = functional_sd(res)
xi = calibrate_xi(res, gamma, alpha)
print(f"xi at alpha={alpha}: {xi:.3f}")

# %%
# Forecast the next (held-out) year from origin 32 and build all three bands.
fc = fit_and_forecast([series.select(0, 32)], CDF, horizons=(1,))[1]
point, actual = fc.counts[0], series.values[32]
bands = {
    "sd": sd_band(point, gamma, xi, alpha),
    "conformal": conformal_band(point, res, alpha),
    "parametric": parametric_count_bands(fc.unconstrained[0], fc.model, fc.score_fc, [alpha],
                                         transform=CDF, radix=series.radix, seed=1)[alpha],
}

# %%
# Coverage of the held-out curve and the interval score (lower is better;
# it adds width and a 2/alpha penalty per unit of miss).
for name, band in bands.items():
    cover = band.covers(actual).mean()
    score = interval_score(band.lower, band.upper, actual, alpha).mean()
    print(f"{name:>10}: coverage {cover:.2f}  mean interval score {score:8.2f}"
          f"  under-supported={band.under_supported}")

# %%
# With 16 residuals the conformal index ceil(0.8 * 17) = 14 is available;
# at alpha = 0.05 it would need the 17th of 16 and the horizon is flagged.
print("alpha=0.05 under-supported:", conformal_band(point, res, 0.05).under_supported)
