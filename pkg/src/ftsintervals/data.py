"""Age grids, life-table death-count series and their sources.

A :class:`LifeTableSeries` holds one curve of life-table death counts per
calendar year. Every curve is a discrete distribution of deaths over age
scaled to the life-table radix, so each row sums to ``radix``.

Series can be built from death probabilities (:func:`lifetable_from_qx`),
read from Human Mortality Database style period tables
(:func:`read_hmd_lifetable`) or simulated (:func:`synth_lifetable`).
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_RADIX = 1e5
RADIX_RTOL = 1e-9

HMD_COLUMNS = ("Year", "Age", "mx", "qx", "ax", "lx", "dx", "Lx", "Tx", "ex")
# printed decimals per numeric column in the HMD period-table layout
HMD_DECIMALS = {"mx": 5, "qx": 5, "ax": 2, "lx": 0, "dx": 0, "Lx": 0, "Tx": 0, "ex": 2}


class DataError(ValueError):
    """Raised when input data violate the life-table contracts."""


class HmdParseError(DataError):
    """Raised for malformed HMD-format files; ``problems`` lists each offence."""

    def __init__(self, message, problems=()):
        self.problems = list(problems)
        if self.problems:
            message = message + ":\n  " + "\n  ".join(self.problems)
        super().__init__(message)


def _freeze(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _age_value(label: str) -> float:
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*\+?\s*", str(label))
    if m is None:
        raise DataError(f"unrecognised age label {label!r}")
    return float(m.group(1))


@dataclass(frozen=True)
class AgeGrid:
    """Ordered single-year age labels; the last label may be open ended (``"110+"``)."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(str(lab) for lab in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 3:
            raise DataError("an age grid needs at least 3 ages")
        if len(set(labels)) != len(labels):
            raise DataError("age labels must be unique")
        ages = np.array([_age_value(lab) for lab in labels])
        if np.any(np.diff(ages) <= 0):
            raise DataError("ages must be strictly increasing")
        for lab in labels[:-1]:
            if lab.endswith("+"):
                raise DataError(f"only the last age may be open ended, got {lab!r}")

    @classmethod
    def single_year(cls, count: int = 111, open_last: bool = True) -> "AgeGrid":
        labels = [str(a) for a in range(count)]
        if open_last:
            labels[-1] += "+"
        return cls(tuple(labels))

    @property
    def ages(self) -> np.ndarray:
        return np.array([_age_value(lab) for lab in self.labels])

    @property
    def count(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    def index(self, label) -> int:
        label = str(label).strip()
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataError(f"age {label!r} not on grid") from None


def _check_years(years) -> np.ndarray:
    years = np.asarray(years, dtype=int)
    if years.ndim != 1 or years.size == 0:
        raise DataError("years must be a nonempty 1-d sequence")
    steps = np.diff(years)
    if np.any(steps <= 0):
        raise DataError("years must be strictly increasing")
    gaps = np.flatnonzero(steps != 1)
    if gaps.size:
        missing = years[gaps[0]] + 1
        raise DataError(f"years are not contiguous: gap at {missing}")
    return years


@dataclass(frozen=True)
class QxSeries:
    """Death probabilities ``q[year, age]``; the last age has ``q = 1``."""

    grid: AgeGrid
    years: np.ndarray
    values: np.ndarray
    sex: str = "Total"

    def __post_init__(self):
        years = _check_years(self.years)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (years.size, self.grid.count):
            raise DataError(f"qx shape {values.shape} does not match years x ages")
        if not np.all(np.isfinite(values)):
            raise DataError("qx contains non-finite values")
        bad = np.argwhere((values < 0) | (values > 1))
        if bad.size:
            i, j = bad[0]
            raise DataError(
                f"qx outside [0, 1] at year {years[i]}, age {self.grid.labels[j]}: {values[i, j]}"
            )
        last = np.flatnonzero(np.abs(values[:, -1] - 1.0) > 1e-12)
        if last.size:
            raise DataError(f"qx at the last age must be 1 (year {years[last[0]]})")
        object.__setattr__(self, "years", _freeze(years, int))
        object.__setattr__(self, "values", _freeze(values))


@dataclass(frozen=True)
class LifeTableSeries:
    """Yearly life-table death counts ``d[year, age]`` summing to ``radix`` per year.

    Instances are immutable. Use :meth:`from_counts` to rescale raw counts
    onto the radix; the constructor itself only validates.
    """

    grid: AgeGrid
    years: np.ndarray
    values: np.ndarray
    sex: str = "Total"
    radix: float = DEFAULT_RADIX

    def __post_init__(self):
        years = _check_years(self.years)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (years.size, self.grid.count):
            raise DataError(f"death counts shape {values.shape} does not match years x ages")
        if not (self.radix > 0 and math.isfinite(self.radix)):
            raise DataError("radix must be a positive finite number")
        if not np.all(np.isfinite(values)):
            raise DataError("death counts contain non-finite values")
        if np.any(values < 0):
            raise DataError("death counts must be nonnegative")
        empty = np.flatnonzero(values.max(axis=1) <= 0)
        if empty.size:
            raise DataError(f"year {years[empty[0]]} has no positive death count")
        err = np.abs(values.sum(axis=1) - self.radix)
        worst = int(np.argmax(err))
        if err[worst] > self.radix * RADIX_RTOL:
            raise DataError(
                f"year {years[worst]} sums to {values[worst].sum()!r}, expected radix {self.radix}"
            )
        object.__setattr__(self, "years", _freeze(years, int))
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "radix", float(self.radix))

    @classmethod
    def from_counts(cls, grid, years, counts, sex="Total", radix=DEFAULT_RADIX):
        """Rescale each row of nonnegative ``counts`` so that it sums to ``radix``."""
        counts = np.asarray(counts, dtype=float)
        totals = counts.sum(axis=1, keepdims=True)
        if np.any(totals <= 0):
            raise DataError("every year needs a positive total to be rescaled")
        return cls(grid, years, counts / totals * radix, sex=sex, radix=radix)

    @property
    def n_years(self) -> int:
        return int(self.years.size)

    def select(self, start: int, stop: int) -> "LifeTableSeries":
        """Rows ``start:stop`` by position."""
        return LifeTableSeries(
            self.grid, self.years[start:stop], self.values[start:stop], self.sex, self.radix
        )

    def zero_cells(self):
        """``(year, age label)`` pairs holding a zero count."""
        return [
            (int(self.years[i]), self.grid.labels[j]) for i, j in np.argwhere(self.values == 0)
        ]

    def to_csv(self, path):
        write_series_csv(path, self.grid, self.years, self.values)


def write_series_csv(path, grid: AgeGrid, years, values, labels=None):
    """Long-format CSV with header ``year,age,value``; ``path`` may be an open text file."""
    labels = grid.labels if labels is None else labels
    values = np.asarray(values)

    def dump(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "age", "value"])
        for i, year in enumerate(years):
            for j, lab in enumerate(labels):
                w.writerow([int(year), lab, repr(float(values[i, j]))])

    if hasattr(path, "write"):
        dump(path)
    else:
        with open(path, "w", newline="") as fh:
            dump(fh)


def lifetable_from_qx(qx: QxSeries, radix: float = DEFAULT_RADIX) -> LifeTableSeries:
    """Death counts from death probabilities by the survivorship recursion.

    ``l(0) = radix``, ``d(x) = l(x) q(x)`` and ``l(x+1) = l(x) - d(x)``.
    Because ``q`` is 1 at the last age every survivor dies there and the
    row sums to the radix.

    >>> grid = AgeGrid(("0", "1", "2+"))
    >>> lt = lifetable_from_qx(QxSeries(grid, [2000], [[0.5, 0.5, 1.0]]), radix=100)
    >>> lt.values.tolist()
    [[50.0, 25.0, 25.0]]
    """
    if not radix > 0:
        raise DataError("radix must be positive")
    q = qx.values
    survivors = radix * np.cumprod(np.hstack([np.ones((q.shape[0], 1)), 1.0 - q[:, :-1]]), axis=1)
    deaths = survivors * q
    return LifeTableSeries(qx.grid, qx.years, deaths, sex=qx.sex, radix=radix)


def complete_lifetable(qx: QxSeries, radix: float = DEFAULT_RADIX, open_ax: float = 1.5):
    """All ten HMD period-table columns implied by ``qx``.

    Uses mid-year deaths (``ax = 0.5``) below the open age and ``open_ax``
    years lived by decedents in the open age group. Returned as a dict of
    ``[year, age]`` arrays keyed like :data:`HMD_COLUMNS` (minus Year/Age).
    """
    q = qx.values
    lx = radix * np.cumprod(np.hstack([np.ones((q.shape[0], 1)), 1.0 - q[:, :-1]]), axis=1)
    dx = lx * q
    ax = np.full_like(q, 0.5)
    ax[:, -1] = open_ax
    Lx = lx - dx + ax * dx
    with np.errstate(divide="ignore", invalid="ignore"):
        mx = np.where(Lx > 0, dx / Lx, 0.0)
        Tx = np.cumsum(Lx[:, ::-1], axis=1)[:, ::-1]
        ex = np.where(lx > 0, Tx / lx, 0.0)
    return {"mx": mx, "qx": q.copy(), "ax": ax, "lx": lx, "dx": dx, "Lx": Lx, "Tx": Tx, "ex": ex}


@dataclass(frozen=True)
class HmdTable:
    """Parsed HMD period life table.

    ``columns`` maps each numeric column name to a ``[year, age]`` array.
    ``qx`` and ``dx`` are the derived series; ``dx`` is rescaled so each
    year sums exactly to the table radix (``lx`` at the first age).
    """

    grid: AgeGrid
    years: np.ndarray
    columns: dict
    sex: str = "Total"
    preamble: tuple = ()
    qx: QxSeries = field(init=False, repr=False)
    dx: LifeTableSeries = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "qx", QxSeries(self.grid, self.years, self.columns["qx"], self.sex))
        radix = float(self.columns["lx"][0, 0])
        dx = LifeTableSeries.from_counts(self.grid, self.years, self.columns["dx"], self.sex, radix)
        object.__setattr__(self, "dx", dx)

    @property
    def radix(self) -> float:
        return self.dx.radix


def _is_missing(tok):
    return tok == "."


def read_hmd_lifetable(path, sex: str = "Total") -> HmdTable:
    """Parse a whitespace-delimited HMD/JMD period life table.

    Lines before the ``Year Age mx qx ax lx dx Lx Tx ex`` header are kept as
    the preamble. Every year must list every age of the first year, years
    must be contiguous, and missing values (``.``) are rejected with a list
    of the offending year/age cells.
    """
    lines = Path(path).read_text().splitlines()
    header_at = None
    for i, line in enumerate(lines):
        toks = line.split()
        if toks and toks[0] == "Year":
            if tuple(toks) != HMD_COLUMNS:
                raise HmdParseError(f"malformed header on line {i + 1}: {line.strip()!r}")
            header_at = i
            break
        if toks and re.fullmatch(r"\d{4}", toks[0]):
            break
    if header_at is None:
        raise HmdParseError(f"{path}: no 'Year Age mx qx ax lx dx Lx Tx ex' header found")

    rows = {}
    ages_seen = []
    problems = []
    for lineno, line in enumerate(lines[header_at + 1:], start=header_at + 2):
        toks = line.split()
        if not toks:
            continue
        if len(toks) != len(HMD_COLUMNS):
            problems.append(f"line {lineno}: expected {len(HMD_COLUMNS)} fields, got {len(toks)}")
            continue
        try:
            year = int(toks[0])
        except ValueError:
            problems.append(f"line {lineno}: bad year {toks[0]!r}")
            continue
        age = toks[1]
        missing = [name for name, tok in zip(HMD_COLUMNS[2:], toks[2:]) if _is_missing(tok)]
        if missing:
            problems.append(f"year {year}, age {age}: missing {', '.join(missing)}")
            continue
        try:
            nums = [float(tok) for tok in toks[2:]]
        except ValueError:
            problems.append(f"line {lineno}: non-numeric field")
            continue
        if age not in ages_seen:
            ages_seen.append(age)
        if (year, age) in rows:
            problems.append(f"year {year}, age {age}: duplicated")
        rows[(year, age)] = nums
    if problems:
        raise HmdParseError(f"{path}: cannot parse life table", problems)
    if not rows:
        raise HmdParseError(f"{path}: no data rows")

    years = sorted({y for y, _ in rows})
    grid = AgeGrid(tuple(ages_seen))
    for a, b in zip(years, years[1:]):
        if b != a + 1:
            raise HmdParseError(f"{path}: years are not contiguous: gap at {a + 1}")
    data = np.empty((len(years), grid.count, len(HMD_COLUMNS) - 2))
    for i, year in enumerate(years):
        for j, age in enumerate(grid.labels):
            try:
                data[i, j] = rows[(year, age)]
            except KeyError:
                problems.append(f"year {year}: missing age {age}")
    if problems:
        raise HmdParseError(f"{path}: incomplete life table", problems)
    columns = {name: _freeze(data[:, :, k]) for k, name in enumerate(HMD_COLUMNS[2:])}
    preamble = tuple(lines[:header_at])
    return HmdTable(grid, _freeze(years, int), columns, sex=sex, preamble=preamble)


def write_hmd_lifetable(path, table: HmdTable):
    """Write ``table`` in the HMD period-table layout (round trips with the reader)."""
    widths = {"mx": 11, "qx": 8, "ax": 6, "lx": 8, "dx": 8, "Lx": 8, "Tx": 9, "ex": 7}
    out = list(table.preamble)
    out.append(f"{'Year':>6}{'Age':>13}" + "".join(f"{c:>{widths[c]}}" for c in HMD_COLUMNS[2:]))
    for i, year in enumerate(table.years):
        for j, age in enumerate(table.grid.labels):
            fields = []
            for c in HMD_COLUMNS[2:]:
                v = float(table.columns[c][i, j])
                d = HMD_DECIMALS[c]
                txt = f"{v:.{d}f}" if d else f"{int(round(v))}"
                fields.append(f"{txt:>{widths[c]}}")
            out.append(f"{int(year):>6}{age:>13}" + "".join(fields))
    Path(path).write_text("\n".join(out) + "\n")


def hmd_table_from_qx(qx: QxSeries, radix: float = DEFAULT_RADIX, preamble=()) -> HmdTable:
    return HmdTable(qx.grid, qx.years, complete_lifetable(qx, radix), sex=qx.sex, preamble=tuple(preamble))


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic logit-CDF generator.

    ``noise_sd`` is in logit units. ``first_year`` only labels the rows.
    """

    n_years: int = 48
    n_ages: int = 111
    n_components: int = 2
    noise_sd: float = 0.001
    seed: int = 0
    first_year: int = 1975
    radix: float = DEFAULT_RADIX

    def __post_init__(self):
        if self.n_years < 3:
            raise DataError("n_years must be at least 3")
        if self.n_ages < 3:
            raise DataError("n_ages must be at least 3")
        if not 0 <= self.n_components < self.n_ages:
            raise DataError("need 0 <= n_components < n_ages")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be nonnegative")


@dataclass(frozen=True)
class SynthLatent:
    """Noise-free pieces of a synthetic series in logit-CDF space."""

    mean: np.ndarray      # (n_ages - 1,)
    basis: np.ndarray     # (n_components, n_ages - 1)
    scores: np.ndarray    # (n_years, n_components)
    noise: np.ndarray     # (n_years, n_ages - 1)

    @property
    def signal(self):
        return self.mean + self.scores @ self.basis

    @property
    def values(self):
        return self.signal + self.noise


def _base_cdf(n_ages, age_shift=0.0):
    """CDF of a Gompertz-Makeham age-at-death law with 1% infant deaths, on ``n_ages`` cells."""
    x = np.arange(n_ages + 1) * (110.0 / (n_ages - 1))
    b = 0.1
    a = 4e-5 * np.exp(b * age_shift)
    surv = np.exp(-5e-4 * x - (a / b) * (np.exp(b * x) - 1.0))
    adult = 1.0 - surv[1:]          # deaths by the end of each age cell
    cdf = 0.01 + 0.99 * adult
    return cdf[:-1]                 # drop the open age, whose CDF is 1


_DECAY = 0.7 ** np.arange(64)


def _shapes(n_components, incr):
    # oscillate along the logit scale so components are not collinear where
    # the increments are concentrated
    z = np.cumsum(incr)
    z = (z - z[0]) / (z[-1] - z[0])
    return np.array([np.cos(k * np.pi * z) for k in range(n_components)])


def _random_walks(rng, n_years, n_components):
    drift = rng.normal(0.0, 0.5, size=n_components)
    steps = rng.normal(drift, 1.0, size=(n_years - 1, n_components))
    return np.vstack([np.zeros((1, n_components)), np.cumsum(steps, axis=0)])


def _latent_from(spec: SynthSpec, walks, rng, age_shift=0.0) -> SynthLatent:
    cdf = _base_cdf(spec.n_ages, age_shift)
    mean = np.log(cdf) - np.log1p(-cdf)
    incr = np.diff(mean, prepend=mean[0] - 1.0)
    k = walks.shape[1]
    # basis_k(y) = sum_{z<=y} w_k(z) incr(z), so every curve stays increasing
    # while |sum_k score_k w_k| < 1
    shapes = _shapes(k, incr)
    basis = np.cumsum(shapes * incr, axis=1)
    scores = np.zeros((spec.n_years, k))
    if k:
        # orthonormal basis with geometrically decaying strength; the same
        # linear map applied to the shapes keeps them the basis increments
        _, r = np.linalg.qr(basis.T)
        t = _DECAY[:k, None] * np.linalg.inv(r.T)
        basis, shapes = t @ basis, t @ shapes
        # drifting walks are nearly collinear over time, so orthogonalise the
        # centred paths and give each unit variance
        level = walks.mean(axis=0)
        q, r = np.linalg.qr(walks - level)
        q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
        scores = level + q * np.sqrt(spec.n_years - 1)
        reach = np.abs(scores @ shapes).max()
        scores = scores * (0.8 / reach)
    noise = rng.normal(0.0, 1.0, size=(spec.n_years, mean.size)) * spec.noise_sd
    return SynthLatent(mean, basis, scores, noise)


def synth_latent(spec: SynthSpec, age_shift: float = 0.0) -> SynthLatent:
    """Latent logit-CDF curves: mean + random-walk-with-drift scores x basis + noise."""
    rng = np.random.default_rng(spec.seed)
    scores = _random_walks(rng, spec.n_years, spec.n_components)
    return _latent_from(spec, scores, rng, age_shift)


def _to_series(spec, latent: SynthLatent, sex):
    from .transforms import cdf_inverse

    grid = AgeGrid.single_year(spec.n_ages)
    years = np.arange(spec.first_year, spec.first_year + spec.n_years)
    counts = cdf_inverse(latent.values, spec.radix)
    return LifeTableSeries(grid, years, counts, sex=sex, radix=spec.radix)


def synth_lifetable(spec: SynthSpec, sex: str = "Total") -> LifeTableSeries:
    """Deterministic synthetic death-count series (see :func:`synth_latent`)."""
    return _to_series(spec, synth_latent(spec), sex)


def synth_pair(spec: SynthSpec, n_shared: int = 1, male_shift: float = 4.0):
    """Female and male series sharing their first ``n_shared`` score paths.

    Male curves sit ``male_shift`` years younger. Returns ``(female, male)``.
    """
    if not 0 <= n_shared <= spec.n_components:
        raise DataError("n_shared must lie in [0, n_components]")
    rng = np.random.default_rng(spec.seed)
    shared = _random_walks(rng, spec.n_years, n_shared)
    out = []
    for sex, shift in (("Female", 0.0), ("Male", male_shift)):
        own = _random_walks(rng, spec.n_years, spec.n_components - n_shared)
        latent = _latent_from(spec, np.hstack([shared, own]), rng, shift)
        out.append(_to_series(spec, latent, sex))
    return tuple(out)


def stack_values(series: Sequence[LifeTableSeries]) -> np.ndarray:
    return np.stack([s.values for s in series])
