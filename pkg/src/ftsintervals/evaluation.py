"""Expanding-window backtest and interval-forecast scoring.

The sample is cut into training, validation and test segments. In the
calibration phase the model is refitted at every origin from the end of
the training segment onwards and forecasts into the validation segment;
the errors per horizon give ``gamma``, ``xi`` and the conformal
quantiles. In the test phase the same is done from the end of the
validation segment onwards, and the calibrated bands are scored against
the test-segment curves.
"""

from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .data import LifeTableSeries
from .fpca import MFTS, MLFTS, MODEL_KINDS, UFTS, KRule, frozen_rules
from .forecast import fit_series, forecast_model
from .intervals import (
    APPROACHES, CONFORMAL, PARAMETRIC, SD, CalibrationTable, IntervalBand, ResidualSet,
    calibrate_xi, conformal_quantile, functional_sd, parametric_count_bands, sd_band,
)
from .scores import RWD
from .transforms import CDF, CLR, TRANSFORMS

log = logging.getLogger(__name__)

METRICS = ("ECP_mean", "ECP_median", "CPD_mean", "CPD_median", "S_mean", "S_median")
METRIC_LABELS = {
    "ECP_mean": "mean ECP", "ECP_median": "M[ECP]", "CPD_mean": "mean CPD",
    "CPD_median": "M[CPD]", "S_mean": "mean S", "S_median": "M[S]",
}


class BacktestError(ValueError):
    pass


class CellError(BacktestError):
    """A failure inside the backtest, tagged with where it happened."""

    def __init__(self, stage, sex, transform, model, horizon, cause):
        self.context = {"stage": stage, "sex": sex, "transform": transform, "model": model,
                        "horizon": horizon}
        where = ", ".join(f"{k}={v}" for k, v in self.context.items() if v is not None)
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")


@contextmanager
def _context(stage, group, cfg, horizon=None):
    try:
        yield
    except CellError:
        raise
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        sex = "+".join(d.sex for d in group)
        raise CellError(stage, sex, cfg.transform, cfg.kind, horizon, exc) from exc


# --------------------------------------------------------------------------
# scoring primitives


def interval_score(lb, ub, actual, alpha):
    """Interval score: width plus ``2/alpha`` times the distance outside the band.

    >>> float(interval_score(90, 110, 120, 0.2))
    120.0
    """
    lb, ub, actual = (np.asarray(v, dtype=float) for v in (lb, ub, actual))
    if np.any(lb > ub):
        raise ValueError("lower bound exceeds upper bound")
    below = np.clip(lb - actual, 0.0, None)
    above = np.clip(actual - ub, 0.0, None)
    return (ub - lb) + (2.0 / alpha) * (below + above)


def ecp(bands: Sequence[IntervalBand], actual) -> float:
    """Fraction of (curve, age) cells inside their closed band."""
    if len(bands) == 0:
        raise ValueError("no bands to evaluate")
    hits = sum(int(np.sum(b.covers(a))) for b, a in zip(bands, actual, strict=True))
    total = sum(np.asarray(a).size for a in actual)
    return hits / total


def cpd(ecp_h: float, alpha: float) -> float:
    """Absolute gap between empirical and nominal coverage."""
    if not 0 <= ecp_h <= 1:
        raise ValueError("ECP must lie in [0, 1]")
    return abs(ecp_h - (1 - alpha))


def mean_interval_score(bands: Sequence[IntervalBand], actual, alpha) -> float:
    scores = [interval_score(b.lower, b.upper, a, alpha) for b, a in zip(bands, actual, strict=True)]
    return float(np.mean(np.concatenate([np.ravel(s) for s in scores])))


def aggregate(values) -> dict:
    """Mean and median over horizons (median averages the middle pair for even counts)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("nothing to aggregate")
    return {"mean": float(v.mean()), "median": float(np.median(v))}


# --------------------------------------------------------------------------
# split


@dataclass(frozen=True)
class SplitSpec:
    """Last calendar year of the training, validation and test segments."""

    train_end_year: int
    validation_end_year: int
    test_end_year: int

    def __post_init__(self):
        if not self.train_end_year < self.validation_end_year < self.test_end_year:
            raise BacktestError("split years must be strictly increasing")

    @classmethod
    def thirds(cls, years) -> "SplitSpec":
        """Equal thirds (any remainder goes to the training segment)."""
        years = np.asarray(years)
        n = years.size
        third = n // 3
        n_train = n - 2 * third
        return cls(int(years[n_train - 1]), int(years[n_train + third - 1]), int(years[-1]))

    def sizes(self, years):
        """``(n_train, n_val, n_test)`` for a contiguous span of ``years``."""
        years = np.asarray(years)
        first, last = int(years[0]), int(years[-1])
        if self.test_end_year > last or self.train_end_year < first:
            raise BacktestError(f"data {first}-{last} do not cover the split {self}")
        n_train = self.train_end_year - first + 1
        n_val = self.validation_end_year - self.train_end_year
        n_test = self.test_end_year - self.validation_end_year
        if min(n_train, n_val, n_test) < 2:
            raise BacktestError("every segment needs at least 2 years")
        return n_train, n_val, n_test


def calibration_horizons(n_val: int) -> range:
    """Horizons with at least two validation errors: ``1 .. n_val - 1``."""
    return range(1, n_val)


def forecast_pair_count(n_test: int, max_h: int = None) -> int:
    """Number of (origin, horizon) pairs in a test segment of ``n_test`` years."""
    max_h = n_test if max_h is None else min(max_h, n_test)
    return sum(n_test - h + 1 for h in range(1, max_h + 1))


# --------------------------------------------------------------------------
# backtest


@dataclass(frozen=True)
class BacktestConfig:
    transform: str = CDF
    kind: str = UFTS
    k_rule: KRule = KRule.evr()
    score_model: str = RWD
    max_order: int = 3
    alphas: tuple = (0.2, 0.05)
    approaches: tuple = APPROACHES
    n_draws: int = 1000
    seed: int = 0
    freeze_k: bool = False
    clamp: bool = False
    standardize: bool = False

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise BacktestError(f"unknown transform {self.transform!r}")
        if self.kind not in MODEL_KINDS:
            raise BacktestError(f"unknown model {self.kind!r}")
        for a in self.alphas:
            if not 0 < a < 1:
                raise BacktestError(f"alpha must lie in (0, 1), got {a!r}")
        for a in self.approaches:
            if a not in APPROACHES:
                raise BacktestError(f"unknown approach {a!r}")


@dataclass(frozen=True)
class TestForecast:
    series: str
    origin_year: int       # last year used for fitting
    target_year: int
    horizon: int
    actual: np.ndarray
    point: np.ndarray
    bands: dict            # (approach, alpha) -> IntervalBand


@dataclass
class BacktestResult:
    config: BacktestConfig
    series: tuple
    sizes: tuple
    residuals: dict = field(default_factory=dict)     # (series, h) -> ResidualSet
    calibration: dict = field(default_factory=dict)   # (series, alpha) -> CalibrationTable
    conformal: dict = field(default_factory=dict)     # (series, alpha, h) -> (q, under)
    test: list = field(default_factory=list)
    k_history: list = field(default_factory=list)     # (phase, origin_year, series, k_selected)

    @property
    def report_horizons(self) -> range:
        _, n_val, n_test = self.sizes
        return range(1, min(n_val - 1, n_test) + 1)

    def under_supported(self):
        """``(series, alpha, h)`` whose conformal quantile hit the residual-count cap."""
        return sorted(k for k, (_, under) in self.conformal.items() if under)


def _seed_for(cfg: BacktestConfig, origin: int, h: int, s: int):
    cell = (TRANSFORMS.index(cfg.transform), MODEL_KINDS.index(cfg.kind))
    return np.random.SeedSequence(cfg.seed, spawn_key=cell + (origin, h, s))


def _groups(data, kind):
    if kind == UFTS:
        return [[d] for d in data]
    if len(data) != 2:
        raise BacktestError(f"{kind} needs exactly two series")
    return [list(data)]


def _fit(group, n_used, cfg, rules):
    subset = [d.select(0, n_used) for d in group]
    return fit_series(subset, cfg.transform, cfg.kind, rules, clamp=cfg.clamp,
                      standardize=cfg.standardize)


def expanding_backtest(data: Sequence[LifeTableSeries], split: SplitSpec,
                       config: BacktestConfig = BacktestConfig(),
                       calibrate_only: bool = False) -> BacktestResult:
    """Calibrate on the validation segment, then forecast and band the test segment.

    ``data`` holds one or two series on identical years (two are required
    for MFTS and MLFTS; UFTS treats each series separately). Failures are
    re-raised as :class:`CellError` naming the stage, sex, transform,
    model and horizon.
    """
    data = list(data)
    years = data[0].years
    for d in data[1:]:
        if not np.array_equal(d.years, years):
            raise BacktestError("all series must cover the same years")
    n_train, n_val, n_test = split.sizes(years)
    offset = int(split.train_end_year - years[0] + 1) - n_train
    n_end = offset + n_train + n_val + n_test
    cal_h = calibration_horizons(n_val)
    if len(cal_h) == 0:
        raise BacktestError("validation segment too short for any horizon with two errors")
    cfg = config
    names = tuple(d.sex for d in data)
    res = BacktestResult(cfg, names, (n_train, n_val, n_test))

    resid = {(s, h): [] for s in names for h in cal_h}
    resid_years = {(s, h): [] for s in names for h in cal_h}
    val_start, test_start = offset + n_train, offset + n_train + n_val

    for group in _groups(data, cfg.kind):
        rules = cfg.k_rule
        for o in range(val_start, test_start):
            max_h = min(cal_h[-1], test_start - o)
            with _context("calibration", group, cfg):
                model = _fit(group, o, cfg, rules)
                fcs = forecast_model(model, cfg.transform, group[0].radix, range(1, max_h + 1),
                                     cfg.score_model, cfg.max_order)
            if cfg.freeze_k and o == val_start:
                rules = frozen_rules(model)
            res.k_history.append(("calibration", int(years[o - 1]), model.series, model.k_selected))
            for h, fc in fcs.items():
                t = o + h - 1
                for si, d in enumerate(group):
                    resid[(d.sex, h)].append(d.values[t] - fc.counts[si])
                    resid_years[(d.sex, h)].append(int(years[t]))

    for (s, h), rows in resid.items():
        rs = ResidualSet(h, np.array(rows), tuple(resid_years[(s, h)]))
        res.residuals[(s, h)] = rs
        with _context("calibration", [d for d in data if d.sex == s], cfg, h):
            gamma = functional_sd(rs)
            for alpha in cfg.alphas:
                tab = res.calibration.setdefault((s, alpha), CalibrationTable(alpha))
                tab.xi[h] = calibrate_xi(rs, gamma, alpha)
                tab.gamma[h] = gamma
                tab.n_residuals[h] = rs.M
                res.conformal[(s, alpha, h)] = conformal_quantile(rs, alpha)

    if calibrate_only:
        return res

    for group in _groups(data, cfg.kind):
        rules = cfg.k_rule
        for o in range(test_start, n_end):
            with _context("test", group, cfg):
                model = _fit(group, o, cfg, rules)
                fcs = forecast_model(model, cfg.transform, group[0].radix, range(1, n_end - o + 1),
                                     cfg.score_model, cfg.max_order)
            if cfg.freeze_k and o == test_start:
                rules = frozen_rules(model)
            res.k_history.append(("test", int(years[o - 1]), model.series, model.k_selected))
            for h, fc in fcs.items():
                t = o + h - 1
                for si, d in enumerate(group):
                    s_idx = names.index(d.sex)
                    with _context("test", [d], cfg, h):
                        bands = _bands(res, cfg, d.sex, h, fc, si, _seed_for(cfg, o, h, s_idx))
                    res.test.append(TestForecast(d.sex, int(years[o - 1]), int(years[t]), h,
                                                 d.values[t], fc.counts[si], bands))
    return res


def _bands(res, cfg, sex, h, fc, si, seed):
    point = fc.counts[si]
    out = {}
    calibrated = (sex, h) in res.residuals
    for alpha in cfg.alphas:
        if SD in cfg.approaches and calibrated:
            tab = res.calibration[(sex, alpha)]
            out[(SD, alpha)] = sd_band(point, tab.gamma[h], tab.xi[h], alpha, h)
        if CONFORMAL in cfg.approaches and calibrated:
            q, under = res.conformal[(sex, alpha, h)]
            out[(CONFORMAL, alpha)] = IntervalBand(h, np.clip(point - q, 0.0, None), point + q,
                                                   alpha, CONFORMAL, under_supported=under)
    if PARAMETRIC in cfg.approaches:
        par = parametric_count_bands(
            fc.unconstrained[si], fc.model, fc.score_fc, cfg.alphas, specific_fc=fc.specific_fc,
            series=si, transform=cfg.transform, radix=fc.radix, n_draws=cfg.n_draws, seed=seed)
        for alpha, band in par.items():
            out[(PARAMETRIC, alpha)] = band
    return out


# --------------------------------------------------------------------------
# metrics and reports


def evaluate(result: BacktestResult) -> pd.DataFrame:
    """Per-horizon ECP, CPD and mean interval score for every band type."""
    cfg = result.config
    rows = []
    by_key = {}
    for rec in result.test:
        for (approach, alpha), band in rec.bands.items():
            by_key.setdefault((rec.series, approach, alpha, rec.horizon), []).append((band, rec.actual))
    for s in result.series:
        for approach in cfg.approaches:
            for alpha in cfg.alphas:
                for h in result.report_horizons:
                    items = by_key.get((s, approach, alpha, h))
                    if not items:
                        continue
                    bands = [b for b, _ in items]
                    actual = [a for _, a in items]
                    e = ecp(bands, actual)
                    rows.append({
                        "sex": s, "transform": cfg.transform, "model": cfg.kind,
                        "k_rule": cfg.k_rule.label, "approach": approach, "alpha": alpha,
                        "h": h, "ecp": e, "cpd": cpd(e, alpha),
                        "score": mean_interval_score(bands, actual, alpha),
                        "n_pairs": len(items),
                        "under_supported": any(b.under_supported for b in bands),
                    })
    return pd.DataFrame(rows)


def summarize(detail: pd.DataFrame) -> pd.DataFrame:
    """Mean and median over horizons of ECP, CPD and interval score."""
    keys = ["sex", "transform", "model", "k_rule", "approach", "alpha"]
    rows = []
    for key, grp in detail.groupby(keys, sort=False):
        grp = grp.sort_values("h")
        row = dict(zip(keys, key))
        for col, name in (("ecp", "ECP"), ("cpd", "CPD"), ("score", "S")):
            agg = aggregate(grp[col])
            row[f"{name}_mean"] = agg["mean"]
            row[f"{name}_median"] = agg["median"]
        rows.append(row)
    return pd.DataFrame(rows)


TRANSFORM_ORDER = (CDF, CLR)
MODEL_ORDER = (UFTS, MFTS, MLFTS)


@dataclass
class EvalReport:
    """Per-horizon detail plus horizon aggregates for a grid of backtests."""

    detail: pd.DataFrame
    summary: pd.DataFrame = None

    def __post_init__(self):
        if self.summary is None:
            self.summary = summarize(self.detail)

    @classmethod
    def from_results(cls, results) -> "EvalReport":
        frames = [evaluate(r) for r in results]
        detail = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
        return cls(detail)

    @property
    def k_rules(self) -> list:
        return list(dict.fromkeys(self.summary["k_rule"]))

    def table(self, alpha: float, approaches=(SD, CONFORMAL), k_rule: str = None) -> pd.DataFrame:
        """Rows sex x metric x approach, columns transform x model.

        ``k_rule`` (a label such as ``"EVR"``) defaults to the first one run.
        """
        k_rule = self.k_rules[0] if k_rule is None else k_rule
        summ = self.summary[np.isclose(self.summary["alpha"], alpha)
                            & (self.summary["k_rule"] == k_rule)]
        long = summ.melt(id_vars=["sex", "transform", "model", "k_rule", "approach", "alpha"],
                         value_vars=list(METRICS), var_name="metric")
        wide = long.pivot_table(index=["sex", "metric", "approach"],
                                columns=["transform", "model"], values="value")
        sexes = list(dict.fromkeys(summ["sex"]))
        present = [a for a in approaches if a in set(summ["approach"])]
        idx = pd.MultiIndex.from_product([sexes, list(METRICS), present],
                                         names=["sex", "metric", "approach"])
        cols = pd.MultiIndex.from_tuples(
            [(t, m) for t in TRANSFORM_ORDER for m in MODEL_ORDER
             if (t, m) in set(zip(summ["transform"], summ["model"]))],
            names=["transform", "model"])
        return wide.reindex(index=idx, columns=cols)

    def to_json(self, path=None):
        # python floats keep the full repr, so a reload reproduces every table
        payload = {"detail": _records(self.detail), "summary": _records(self.summary)}
        text = json.dumps(payload, indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(pd.DataFrame(payload["detail"]), pd.DataFrame(payload["summary"]))


def _records(frame):
    return [{k: (v.item() if isinstance(v, np.generic) else v) for k, v in row.items()}
            for row in frame.to_dict(orient="records")]


def flag_best(table: pd.DataFrame) -> pd.DataFrame:
    """Mark the model with the smallest CPD or interval score within each transform.

    ECP rows are never flagged. Returns a boolean frame shaped like ``table``.
    """
    flags = pd.DataFrame(False, index=table.index, columns=table.columns)
    for row in table.index:
        metric = row[1]
        if not (str(metric).startswith("CPD") or str(metric).startswith("S")):
            continue
        for t in dict.fromkeys(table.columns.get_level_values(0)):
            vals = table.loc[row, t]
            if vals.isna().all():
                continue
            flags.loc[row, (t, vals.idxmin())] = True
    return flags


def calibration_frame(results, alphas=None) -> pd.DataFrame:
    """Long-form ``xi`` per horizon for every (transform, model, k rule, alpha, sex)."""
    rows = []
    for r in results:
        for (s, alpha), tab in sorted(r.calibration.items(), key=lambda kv: (kv[0][1] * -1, kv[0][0])):
            if alphas is not None and alpha not in alphas:
                continue
            for h in tab.horizons:
                rows.append({"transform": r.config.transform, "model": r.config.kind,
                             "k_rule": r.config.k_rule.label, "alpha": alpha, "sex": s,
                             "h": h, "xi": tab.xi[h], "n_residuals": tab.n_residuals[h]})
    return pd.DataFrame(rows)


def calibration_table(frame: pd.DataFrame) -> pd.DataFrame:
    """Rows ``h``; columns alpha x k rule x sex (one transform/model pair)."""
    wide = frame.pivot_table(index="h", columns=["alpha", "k_rule", "sex"], values="xi")
    order = sorted(wide.columns, key=lambda c: (-c[0], c[1], c[2]))
    return wide[order]


# --------------------------------------------------------------------------
# grids of backtests


def _run_cell(args):
    data, split, cfg, calibrate_only = args
    return expanding_backtest(data, split, cfg, calibrate_only)


def run_grid(data: Sequence[LifeTableSeries], split: SplitSpec, base: BacktestConfig,
             transforms=TRANSFORMS, kinds=MODEL_KINDS, k_rules=None, workers: int = 1,
             calibrate_only: bool = False) -> list:
    """Backtest every (transform, model, k rule) cell; results come back in key order.

    Cells are independent and seeded from their key, so the outcome does
    not depend on ``workers``.
    """
    k_rules = [base.k_rule] if k_rules is None else [KRule.parse(r) for r in k_rules]
    cells = [(list(data), split, replace(base, transform=t, kind=k, k_rule=r), calibrate_only)
             for t in TRANSFORM_ORDER if t in transforms
             for k in MODEL_ORDER if k in kinds
             for r in k_rules]
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]
