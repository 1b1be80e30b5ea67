"""Command-line interface.

Subcommands::

    ftsintervals run            full backtest from a JSON config
    ftsintervals calibrate      validation phase only: xi tables
    ftsintervals report         rebuild report tables from a saved detail.json
    ftsintervals validate-data  diagnostics for an HMD-format life table
    ftsintervals transform      CLR or CDF/logit transform of a life table to CSV
    ftsintervals fit            fit an FPCA model and dump it as JSON

Exit codes: 0 ok, 1 runtime or data error, 2 config error (nothing is
written), 3 finished but some conformal horizons were under-supported.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DEFAULT_RADIX, DataError, SynthSpec, lifetable_from_qx, read_hmd_lifetable, synth_pair,
    write_series_csv,
)
from .evaluation import (
    BacktestConfig, EvalReport, SplitSpec, calibration_frame, calibration_table, flag_best,
    run_grid,
)
from .fpca import MFTS, MLFTS, MODEL_KINDS, KRule, fit_model
from .intervals import APPROACHES, CONFORMAL, PARAMETRIC, SD
from .scores import SCORE_MODELS
from .transforms import CDF, TRANSFORMS, forward

log = logging.getLogger("ftsintervals")

OUTPUT_ENV = "FTSINTERVALS_OUTPUT_DIR"
DEFAULT_OUTPUT = "ftsintervals-out"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_UNDER = 0, 1, 2, 3
FLOAT_FORMAT = "%.10g"


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config


@dataclass
class RunConfig:
    """Everything a ``run`` needs; see README for the JSON layout."""

    data: dict = field(default_factory=lambda: {"synthetic": {}})
    sexes: list = field(default_factory=lambda: ["Female", "Male"])
    transforms: list = field(default_factory=lambda: ["cdf", "clr"])
    models: list = field(default_factory=lambda: list(MODEL_KINDS))
    k_rules: list = field(default_factory=lambda: ["evr"])
    score_model: str = "rwd"
    max_order: int = 3
    alphas: list = field(default_factory=lambda: [0.2, 0.05])
    split: object = "thirds"
    approaches: list = field(default_factory=lambda: list(APPROACHES))
    n_draws: int = 1000
    seed: int = 0
    freeze_k: bool = False
    clamp: bool = False
    standardize: bool = False
    output_dir: str = None
    plots: bool = False
    workers: int = 1
    base_dir: str = field(default=".", repr=False)

    def validate(self):
        def nonempty(name):
            v = getattr(self, name)
            if not isinstance(v, list) or not v:
                raise ConfigError(f"{name} must be a nonempty list")
            if len(set(map(str, v))) != len(v):
                raise ConfigError(f"{name} has duplicates")

        for name in ("sexes", "transforms", "models", "k_rules", "alphas", "approaches"):
            nonempty(name)
        for t in self.transforms:
            if t not in TRANSFORMS:
                raise ConfigError(f"unknown transform {t!r}; choose from {TRANSFORMS}")
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ConfigError(f"unknown model {m!r}; choose from {MODEL_KINDS}")
        if any(m in (MFTS, MLFTS) for m in self.models) and len(self.sexes) != 2:
            raise ConfigError("mfts and mlfts need exactly two sexes")
        for a in self.approaches:
            if a not in APPROACHES:
                raise ConfigError(f"unknown approach {a!r}; choose from {APPROACHES}")
        for a in self.alphas:
            if isinstance(a, bool) or not isinstance(a, (int, float)) or not 0 < a < 1:
                raise ConfigError(f"alpha must lie in (0, 1), got {a!r}")
        for r in self.k_rules:
            try:
                KRule.parse(r)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.score_model not in SCORE_MODELS:
            raise ConfigError(f"unknown score model {self.score_model!r}")
        for name, lo in (("max_order", 0), ("n_draws", 10), ("workers", 1)):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if self.split != "thirds":
            if not isinstance(self.split, dict):
                raise ConfigError('split must be "thirds" or a table of end years')
            try:
                SplitSpec(**self.split)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad split: {exc}") from None
        self._validate_data()
        return self

    def _validate_data(self):
        if not isinstance(self.data, dict) or len(self.data) != 1:
            raise ConfigError('data must hold exactly one of "synthetic" or "hmd"')
        (kind, spec), = self.data.items()
        if kind == "synthetic":
            if not isinstance(spec, dict):
                raise ConfigError("data.synthetic must be a table")
            if set(self.sexes) != {"Female", "Male"}:
                raise ConfigError("synthetic data provide the sexes Female and Male")
            extra = set(spec) - {f.name for f in fields(SynthSpec)} - {"n_shared", "male_shift"}
            if extra:
                raise ConfigError(f"unknown synthetic keys: {sorted(extra)}")
            try:
                SynthSpec(**{k: v for k, v in spec.items() if k not in ("n_shared", "male_shift")})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad synthetic spec: {exc}") from None
        elif kind == "hmd":
            if not isinstance(spec, dict) or "files" not in spec:
                raise ConfigError("data.hmd needs a files table {sex: path}")
            missing = [s for s in self.sexes if s not in spec["files"]]
            if missing:
                raise ConfigError(f"no HMD file for {missing}")
            for s in self.sexes:
                p = self.resolve(spec["files"][s])
                if not p.is_file():
                    raise ConfigError(f"HMD file not found: {p}")
            if spec.get("source", "qx") not in ("qx", "dx"):
                raise ConfigError('data.hmd.source must be "qx" or "dx"')
        else:
            raise ConfigError(f"unknown data source {kind!r}")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        # output_dir, workers and plots do not change any number
        d = self.to_dict()
        for k in ("output_dir", "workers", "plots"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def backtest_config(self) -> BacktestConfig:
        return BacktestConfig(
            transform=self.transforms[0], kind=self.models[0],
            k_rule=KRule.parse(self.k_rules[0]), score_model=self.score_model,
            max_order=self.max_order, alphas=tuple(float(a) for a in self.alphas),
            approaches=tuple(self.approaches), n_draws=self.n_draws, seed=self.seed,
            freeze_k=self.freeze_k, clamp=self.clamp, standardize=self.standardize,
        )


def bundled_config_path():
    return resources.files("ftsintervals") / "data" / "synthetic.json"


def load_config(path=None, overrides=None) -> RunConfig:
    """Read a JSON config (the bundled synthetic one when ``path`` is None)."""
    try:
        if path is None:
            raw = json.loads(bundled_config_path().read_text())
            base = "."
        else:
            raw = json.loads(Path(path).read_text())
            base = str(Path(path).parent)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig(**raw, base_dir=base)
    if cfg.output_dir is None:
        cfg.output_dir = os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT)
    return cfg.validate()


def load_data(cfg: RunConfig) -> list:
    (kind, spec), = cfg.data.items()
    if kind == "synthetic":
        spec = dict(spec)
        n_shared = spec.pop("n_shared", 1)
        male_shift = spec.pop("male_shift", 4.0)
        pair = dict(zip(("Female", "Male"), synth_pair(SynthSpec(**spec), n_shared, male_shift)))
        return [pair[s] for s in cfg.sexes]
    out = []
    for s in cfg.sexes:
        table = read_hmd_lifetable(cfg.resolve(spec["files"][s]), sex=s)
        if spec.get("source", "qx") == "qx":
            out.append(lifetable_from_qx(table.qx, spec.get("radix", DEFAULT_RADIX)))
        else:
            out.append(table.dx)
    return out


# --------------------------------------------------------------------------
# artifacts


def _alpha_tag(a):
    return f"{a:g}"


def _write_csv(frame, path, **kw):
    frame.to_csv(path, float_format=FLOAT_FORMAT, lineterminator="\n", **kw)


def _markdown(table, flags, digits=4):
    cols = [f"{t.upper()} {m.upper()}" for t, m in table.columns]
    lines = ["| sex | metric | approach | " + " | ".join(cols) + " |",
             "|" + "---|" * (3 + len(cols))]
    for row in table.index:
        cells = []
        for col in table.columns:
            v = table.loc[row, col]
            txt = "" if np.isnan(v) else f"{v:.{digits}f}"
            cells.append(f"**{txt}**" if flags.loc[row, col] and txt else txt)
        lines.append(f"| {row[0]} | {row[1]} | {row[2]} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_reports(report: EvalReport, out: Path) -> list:
    """Coverage/score grids as CSV and markdown per (alpha, k rule); returns the paths.

    Grid rows are sex x metric x approach, columns transform x model.
    """
    written = []
    _write_csv(report.detail, out / "detail.csv", index=False)
    _write_csv(report.summary, out / "summary.csv", index=False)
    report.to_json(out / "detail.json")
    written += ["detail.csv", "summary.csv", "detail.json"]
    present = set(report.summary["approach"])
    groups = [("report", [a for a in (SD, CONFORMAL) if a in present]),
              ("parametric", [PARAMETRIC] if PARAMETRIC in present else [])]
    for rule in report.k_rules:
        for alpha in dict.fromkeys(report.summary["alpha"]):
            for prefix, approaches in groups:
                if not approaches:
                    continue
                table = report.table(alpha, approaches, rule)
                stem = f"{prefix}_alpha{_alpha_tag(alpha)}_{rule.replace('=', '')}"
                _write_csv(table, out / f"{stem}.csv")
                (out / f"{stem}.md").write_text(_markdown(table, flag_best(table)))
                written += [f"{stem}.csv", f"{stem}.md"]
    return written


def write_calibration(results, out: Path) -> list:
    frame = calibration_frame(results)
    written = []
    for (t, m), grp in frame.groupby(["transform", "model"], sort=False):
        name = f"calibration_{t}_{m}.csv"
        _write_csv(calibration_table(grp), out / name)
        written.append(name)
    return written


def write_k_history(results, out: Path) -> str:
    lines = ["transform,model,k_rule,phase,origin_year,series,k_selected"]
    for r in results:
        for phase, year, series, k in r.k_history:
            lines.append(f"{r.config.transform},{r.config.kind},{r.config.k_rule.label},{phase},"
                         f"{year},{'+'.join(series)},{' '.join(map(str, k))}")
    (out / "k_selected.csv").write_text("\n".join(lines) + "\n")
    return "k_selected.csv"


def write_plots(data, results, out: Path) -> list:
    from .plots import band_plot, rainbow_plot

    pdir = out / "plots"
    pdir.mkdir(exist_ok=True)
    written = []
    for d in data:
        name = f"plots/rainbow_{d.sex}.svg"
        rainbow_plot(d, out / name)
        written.append(name)
    for r in results:
        if not r.test:
            continue
        last = max(rec.origin_year for rec in r.test)
        for rec in r.test:
            if rec.origin_year != last or rec.horizon != 1:
                continue
            alpha = max(r.config.alphas)
            bands = [(f"{a} {int(round((1 - alpha) * 100))}%", b)
                     for (a, al), b in sorted(rec.bands.items()) if al == alpha]
            name = (f"plots/bands_{r.config.transform}_{r.config.kind}_"
                    f"{r.config.k_rule.label.replace('=', '')}_{rec.series}.svg")
            grid = next(d.grid for d in data if d.sex == rec.series)
            band_plot(grid.ages, rec.actual, rec.point, bands, out / name,
                      title=f"{rec.series} {rec.target_year}, {r.config.transform.upper()} "
                            f"{r.config.kind.upper()}")
            written.append(name)
    return written


def write_manifest(cfg: RunConfig, out: Path, files, under, command) -> None:
    hashes = {f: hashlib.sha256((out / f).read_bytes()).hexdigest() for f in sorted(files)}
    manifest = {
        "command": command,
        "version": __version__,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("output_dir", "workers")},
        "under_supported": [{"series": s, "alpha": a, "horizon": h} for s, a, h in under],
        "files": hashes,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _under_supported(results):
    found = set()
    for r in results:
        found.update(r.under_supported())
    return sorted(found)


def _backtest(cfg: RunConfig, calibrate_only: bool):
    data = load_data(cfg)
    split = (SplitSpec.thirds(data[0].years) if cfg.split == "thirds"
             else SplitSpec(**cfg.split))
    results = run_grid(data, split, cfg.backtest_config(), transforms=cfg.transforms,
                       kinds=cfg.models, k_rules=cfg.k_rules, workers=cfg.workers,
                       calibrate_only=calibrate_only)
    return data, results


# --------------------------------------------------------------------------
# commands


def _overrides(args):
    def split_list(v, conv=str):
        return None if v is None else [conv(x) for x in v.split(",") if x]

    ov = {
        "output_dir": args.output_dir,
        "seed": args.seed,
        "workers": args.workers,
        "alphas": split_list(args.alphas, float),
        "transforms": split_list(args.transforms),
        "models": split_list(args.models),
        "k_rules": split_list(args.k_rules),
        "approaches": split_list(getattr(args, "approaches", None)),
        "n_draws": getattr(args, "n_draws", None),
    }
    if getattr(args, "plots", False):
        ov["plots"] = True
    return ov


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    if cfg.plots:
        try:
            import matplotlib  # noqa: F401
        except ImportError:
            raise ConfigError("plots requested but matplotlib is not installed") from None
    data, results = _backtest(cfg, calibrate_only=False)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = EvalReport.from_results(results)
    files = write_reports(report, out) + write_calibration(results, out)
    files.append(write_k_history(results, out))
    if cfg.plots:
        files += write_plots(data, results, out)
    under = _under_supported(results)
    write_manifest(cfg, out, files, under, "run")
    print(f"wrote {len(files) + 1} files to {out}")
    return _finish(under)


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    _, results = _backtest(cfg, calibrate_only=True)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = write_calibration(results, out)
    files.append(write_k_history(results, out))
    under = _under_supported(results)
    write_manifest(cfg, out, files, under, "calibrate")
    for f in files:
        print(out / f)
    return _finish(under)


def _finish(under) -> int:
    if under:
        groups = {}
        for s, a, h in under:
            groups.setdefault((s, a), []).append(h)
        cells = "; ".join(f"{s} alpha={a:g} h={_spans(hs)}" for (s, a), hs in groups.items())
        print(f"warning: conformal quantile under-supported at {cells}", file=sys.stderr)
        return EXIT_UNDER
    return EXIT_OK


def _spans(hs):
    """``[1, 2, 3, 7]`` -> ``"1-3,7"``."""
    out, start = [], hs[0]
    for prev, cur in zip(hs, hs[1:] + [None]):
        if cur != prev + 1 if cur is not None else True:
            out.append(f"{start}-{prev}" if prev != start else f"{start}")
            start = cur
    return ",".join(out)


def cmd_report(args) -> int:
    report = EvalReport.from_json(args.detail)
    out = Path(args.output_dir or os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))
    out.mkdir(parents=True, exist_ok=True)
    for f in write_reports(report, out):
        print(out / f)
    flagged = bool(report.detail["under_supported"].any()) if len(report.detail) else False
    return EXIT_UNDER if flagged else EXIT_OK


def cmd_validate_data(args) -> int:
    table = read_hmd_lifetable(args.path, sex=args.sex)
    series = lifetable_from_qx(table.qx, table.radix)
    grid = table.grid
    zeros = series.zero_cells()
    print(f"years {table.years[0]}-{table.years[-1]}, ages {grid.labels[0]}-{grid.labels[-1]}, "
          f"zero counts: {len(zeros)} cells")
    print(f"grid: {table.years.size} years x {grid.count} ages, radix {table.radix:g}")
    for year, age in zeros:
        print(f"  zero count at year {year}, age {age}")
    if zeros:
        print("  (CLR needs strictly positive counts; use the cdf transform)")
    printed = table.columns["dx"].sum(axis=1) - table.radix
    print(f"radix residual of printed dx: max |sum(dx) - radix| = {np.abs(printed).max():g}")
    return EXIT_OK


def _read_series(path, sex, source):
    table = read_hmd_lifetable(path, sex=sex)
    return lifetable_from_qx(table.qx, table.radix) if source == "qx" else table.dx


def cmd_transform(args) -> int:
    series = _read_series(args.input, args.sex, args.source)
    unc = forward(series, args.method, clamp=args.clamp)
    labels = series.grid.labels[:unc.n_coords]
    target = args.output if args.output else sys.stdout
    write_series_csv(target, series.grid, unc.years, unc.values, labels=labels)
    return EXIT_OK


def cmd_fit(args) -> int:
    sexes = args.sex.split(",")
    if len(sexes) != len(args.input):
        raise ConfigError("give one --sex label per --input")
    series = [_read_series(p, s, args.source) for p, s in zip(args.input, sexes)]
    unc = [forward(s, args.transform, clamp=args.clamp) for s in series]
    model = fit_model(args.model, unc, KRule.parse(args.k_rule))
    text = model.to_json(indent=1)
    if args.output:
        Path(args.output).write_text(text + "\n")
        print(f"{args.model} k={model.k_selected} -> {args.output}")
    else:
        print(text)
    return EXIT_OK


# --------------------------------------------------------------------------


def _grid_flags(p):
    p.add_argument("--config", help="JSON run config (default: bundled synthetic config)")
    p.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_ENV} or {DEFAULT_OUTPUT})")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes for backtest cells")
    p.add_argument("--alphas", help="comma list, e.g. 0.2,0.05")
    p.add_argument("--transforms", help="comma list of cdf,clr")
    p.add_argument("--models", help="comma list of ufts,mfts,mlfts")
    p.add_argument("--k-rules", help="comma list, e.g. evr,6")


def _input_flags(p):
    p.add_argument("--sex", default="Total")
    p.add_argument("--source", choices=("qx", "dx"), default="qx",
                   help="rebuild counts from qx (default) or use the printed dx column")
    p.add_argument("--clamp", action="store_true", help="clamp degenerate CDF values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftsintervals", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="backtest and write reports")
    _grid_flags(p)
    p.add_argument("--approaches", help="comma list of sd,conformal,parametric")
    p.add_argument("--n-draws", type=int, help="Monte-Carlo draws for parametric bands")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="validation phase only; writes xi tables")
    _grid_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="rebuild report tables from detail.json")
    p.add_argument("detail")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate-data", help="check an HMD-format life table")
    p.add_argument("path")
    p.add_argument("--sex", default="Total")
    p.set_defaults(func=cmd_validate_data)

    p = sub.add_parser("transform", help="transform a life table to CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=TRANSFORMS, default=CDF)
    p.add_argument("--output")
    _input_flags(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("fit", help="fit an FPCA model and dump it as JSON")
    p.add_argument("--input", action="append", required=True,
                   help="HMD file; repeat for the second series of mfts/mlfts")
    p.add_argument("--model", choices=MODEL_KINDS, default="ufts")
    p.add_argument("--transform", choices=TRANSFORMS, default=CDF)
    p.add_argument("--k-rule", default="evr")
    p.add_argument("--output")
    _input_flags(p)
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
