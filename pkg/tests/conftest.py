from pathlib import Path

import numpy as np
import pytest

from ftsintervals.data import AgeGrid, LifeTableSeries, SynthSpec, synth_lifetable, synth_pair

DATA = Path(__file__).parent / "data"


@pytest.fixture
def hmd_sample():
    return DATA / "hmd_sample.txt"


@pytest.fixture(scope="session")
def synth():
    return synth_lifetable(SynthSpec(seed=3), sex="Female")


@pytest.fixture(scope="session")
def pair():
    return synth_pair(SynthSpec(seed=1))


def random_series(rng, n_years=6, n_ages=12, zeros=0.0, radix=1e5):
    """Positive Dirichlet-like curves, optionally with interior zeros."""
    v = rng.gamma(2.0, 1.0, size=(n_years, n_ages))
    if zeros:
        mask = rng.random((n_years, n_ages)) < zeros
        mask[:, 0] = mask[:, -1] = False
        v[mask] = 0.0
    return LifeTableSeries.from_counts(AgeGrid.single_year(n_ages), np.arange(2000, 2000 + n_years),
                                       v, radix=radix)
