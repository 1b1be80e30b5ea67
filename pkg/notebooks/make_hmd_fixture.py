"""Build the small HMD-format sample bundled with the package.

Five years (1975-1979) of a synthetic Gompertz-Makeham period life table
on ages 0-110+, written in the HMD column layout. Three cells have a death
probability of exactly zero, so the sample also exercises the zero-count
diagnostics (the CLR transform rejects it; the CDF transform does not).

Run from the repository root::

    python notebooks/make_hmd_fixture.py
"""

from pathlib import Path

import numpy as np

from ftsintervals.data import AgeGrid, QxSeries, hmd_table_from_qx, write_hmd_lifetable

years = np.arange(1975, 1980)
grid = AgeGrid.single_year(111)
x = grid.ages

# hazard falls 2% a year; infant mortality sits on top of the adult law
qx = np.empty((years.size, grid.count))
for i, year in enumerate(years):
    improve = 0.98 ** (year - years[0])
    hazard = improve * (3e-4 + 3e-5 * np.exp(0.095 * x))
    q = 1.0 - np.exp(-hazard)
    q[0] = 0.012 * improve
    qx[i] = np.round(np.minimum(q, 0.6), 5)   # HMD prints five decimals
qx[:, -1] = 1.0

# exactly three zero cells (rare in real tables, common in small populations)
qx[0, 11] = qx[0, 12] = qx[3, 9] = 0.0

table = hmd_table_from_qx(
    QxSeries(grid, years, qx, sex="Total"),
    preamble=("Synthetic, Life tables (period 1x1), Total"
              "\tSynthetic sample for ftsintervals (not HMD data)", ""),
)
here = Path(__file__).resolve().parents[1]
for target in (here / "src/ftsintervals/data/hmd_sample.txt", here / "tests/data/hmd_sample.txt"):
    write_hmd_lifetable(target, table)
    print("wrote", target)
