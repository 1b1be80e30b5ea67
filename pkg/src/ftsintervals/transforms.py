"""Constraint-removing transforms for death-count curves.

Two routes map a row of life-table death counts to an unconstrained
vector and back:

* centred log-ratio (``"clr"``): ``G(u) = ln d(u) - mean_u ln d(u)``,
  inverted by a softmax scaled to the radix. Needs strictly positive
  counts.
* CDF/logit (``"cdf"``): cumulative proportions ``D(x)``, last coordinate
  dropped, then ``L = logit(D)``. Inverted by the logistic function,
  first differences and rescaling. Tolerates interior zero counts.

The inverses accept a single curve or a ``[..., coords]`` stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .data import AgeGrid, LifeTableSeries

CLR = "clr"
CDF = "cdf"
TRANSFORMS = (CLR, CDF)
CLAMP_EPS = 1e-12


class TransformError(ValueError):
    pass


class ZeroOrNegativeCount(TransformError):
    """A count is not strictly positive, so the CLR transform is undefined."""

    def __init__(self, year, age):
        self.year, self.age = year, age
        super().__init__(
            f"nonpositive death count at year {year}, age {age}; "
            "use the 'cdf' transform, which tolerates zero counts"
        )


class DegenerateCdf(TransformError):
    """The cumulative distribution hits 0 or 1 before the last age."""

    def __init__(self, year, age):
        self.year, self.age = year, age
        super().__init__(
            f"cumulative distribution is 0 or 1 at year {year}, age {age}; "
            "its logit is infinite (pass clamp=True to clamp)"
        )


@dataclass(frozen=True)
class UnconstrainedSeries:
    """Transformed curves plus what is needed to invert them.

    ``values`` is ``[year, coordinate]``; there is one coordinate per age
    for CLR and one fewer for the CDF/logit transform.
    """

    values: np.ndarray
    years: np.ndarray
    transform: str
    radix: float
    grid: AgeGrid
    sex: str = "Total"

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise TransformError(f"unknown transform {self.transform!r}")
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_coords(self) -> int:
        return self.values.shape[1]

    @property
    def n_years(self) -> int:
        return self.values.shape[0]

    def invert(self, values=None) -> np.ndarray:
        return inverse(self.values if values is None else values, self.transform, self.radix)


def clr_forward(d: LifeTableSeries) -> UnconstrainedSeries:
    """Centred log-ratio of every year; rows sum to zero."""
    vals = d.values
    bad = np.argwhere(vals <= 0)
    if bad.size:
        i, j = bad[0]
        raise ZeroOrNegativeCount(int(d.years[i]), d.grid.labels[j])
    logs = np.log(vals)
    g = logs - logs.mean(axis=1, keepdims=True)
    return UnconstrainedSeries(g, d.years, CLR, d.radix, d.grid, d.sex)


def clr_inverse(g, radix: float) -> np.ndarray:
    """``radix * softmax(g)`` along the last axis."""
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise TransformError("clr_inverse needs finite input")
    return np.exp(g - logsumexp(g, axis=-1, keepdims=True)) * radix


def cdf_forward(d: LifeTableSeries, clamp: bool = False) -> UnconstrainedSeries:
    """Logit of the cumulative death proportions, last age dropped.

    The upper tail ``1 - D`` is accumulated from the oldest age down so that
    the logit keeps full relative precision where ``D`` is close to one.
    """
    vals = d.values
    p = vals / vals.sum(axis=1, keepdims=True)
    lower = np.cumsum(p, axis=1)[:, :-1]
    upper = np.cumsum(p[:, ::-1], axis=1)[:, ::-1][:, 1:]
    if clamp:
        lower = np.clip(lower, CLAMP_EPS, 1 - CLAMP_EPS)
        upper = np.clip(upper, CLAMP_EPS, 1 - CLAMP_EPS)
    else:
        bad = np.argwhere((lower <= 0) | (upper <= 0))
        if bad.size:
            i, j = bad[0]
            raise DegenerateCdf(int(d.years[i]), d.grid.labels[j])
    logit = np.log(lower) - np.log(upper)
    return UnconstrainedSeries(logit, d.years, CDF, d.radix, d.grid, d.sex)


def cdf_inverse(l, radix: float) -> np.ndarray:
    """Death counts from logit-CDF curves of length ``A - 1``.

    Monotonicity of the implied CDF is repaired with a running maximum
    before differencing, so the result is nonnegative and sums to
    ``radix`` for any finite input.
    """
    l = np.asarray(l, dtype=float)
    if not np.all(np.isfinite(l)):
        raise TransformError("cdf_inverse needs finite input")
    # running max of the logit is the running max of D (expit is monotone)
    l = np.maximum.accumulate(l, axis=-1)
    a, b = l[..., 1:], l[..., :-1]
    # expit(a) - expit(b) = expm1(a - b) expit(b) expit(-a): no cancellation
    # between two nearly equal cumulative proportions
    inner = np.expm1(a - b) * expit(b) * expit(-a)
    d = np.concatenate([expit(l[..., :1]), inner, expit(-l[..., -1:])], axis=-1)
    return d / d.sum(axis=-1, keepdims=True) * radix


def forward(d: LifeTableSeries, method: str, clamp: bool = False) -> UnconstrainedSeries:
    if method == CLR:
        return clr_forward(d)
    if method == CDF:
        return cdf_forward(d, clamp=clamp)
    raise TransformError(f"unknown transform {method!r}")


def inverse(values, method: str, radix: float) -> np.ndarray:
    if method == CLR:
        return clr_inverse(values, radix)
    if method == CDF:
        return cdf_inverse(values, radix)
    raise TransformError(f"unknown transform {method!r}")
