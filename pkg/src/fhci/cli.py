"""Command-line front end.

Subcommands::

    fhci fit --input data.csv --method nas --alpha 0.05
    fhci intervals --input data.csv --methods direct,cox,t,ct,nas --out intervals.csv
    fhci simulate --scenario scenario.cfg --seed 42 --reps 10000 --out summary.csv
    fhci reproduce table1 --reps 10000 --seed 42 --format markdown

Input files have the header ``area_id,y,D,x1,...,xp``.  Config files are
flat ``key = value`` text (``#`` comments); command-line flags override
them.  The worker thread count comes from ``--threads`` or ``FHCI_THREADS``.

Exit codes: 0 success, 1 estimator or simulation failure, 2 bad input or
usage, 3 existence condition violated for a requested method.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import AdmissibilityError, ConvergenceError, DataFormatError, FayHerriotError, RankDeficiencyError
from .estimators import SearchConfig, estimate_variance, existence_holds
from .intervals import IntervalCalculator, IntervalResult, Method, NominalLevel
from .likelihood import AdjustmentFactor
from .model import SmallAreaDataset, fit_model
from .simulation import (
    PATTERNS,
    ScenarioSpec,
    SimulationError,
    SimulationSummary,
    default_threads,
    run_scenario,
    study1_spec,
    study2_spec,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_EXISTENCE = 3

STUDY1_B = (0.5, 0.7, 0.9)


# number formatting -----------------------------------------------------------

def fmt_csv(x) -> str:
    """Full-precision text for CSV (17 significant digits round-trips a double)."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def fmt_md(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else f"{float(x):.2f}"
    return str(x)


# data files ------------------------------------------------------------------

def _parse_float(text: str, row: int, column: str) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise DataFormatError(f"non-numeric value {text!r}", row, column) from None
    if not math.isfinite(v):
        raise DataFormatError(f"non-finite value {text!r}", row, column)
    return v


def read_dataset(handle: TextIO, source: str = "<input>") -> SmallAreaDataset:
    reader = csv.reader(handle)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataFormatError(f"{source} is empty", 1) from None
    for col in ("area_id", "y", "D"):
        if col not in header:
            raise DataFormatError(f"missing column {col!r}", 1, col)
    xcols = [h for h in header if h not in ("area_id", "y", "D")]
    if not xcols:
        raise DataFormatError("no covariate columns (x1, ..., xp)", 1)
    idx = {h: k for k, h in enumerate(header)}
    ids, ys, ds, xs = [], [], [], []
    for line_no, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise DataFormatError(f"expected {len(header)} fields, found {len(rec)}", line_no)
        ids.append(rec[idx["area_id"]].strip())
        ys.append(_parse_float(rec[idx["y"]], line_no, "y"))
        d = _parse_float(rec[idx["D"]], line_no, "D")
        if d <= 0:
            raise DataFormatError(f"sampling variance must be positive, got {d!r}", line_no, "D")
        ds.append(d)
        xs.append([_parse_float(rec[idx[c]], line_no, c) for c in xcols])
    if not ids:
        raise DataFormatError(f"{source} has no data rows", 2)
    try:
        return SmallAreaDataset(np.array(ys), np.array(ds), np.array(xs), tuple(ids))
    except RankDeficiencyError as exc:
        names = [xcols[j] for j in exc.columns]
        raise DataFormatError(f"covariates are rank deficient; dependent columns {names}", None, ",".join(names)) from exc


def ingest_csv(path: str | Path) -> SmallAreaDataset:
    """Parse ``area_id,y,D,x1,...,xp`` into a validated dataset."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file {path} does not exist")
    with path.open(newline="") as fh:
        return read_dataset(fh, str(path))


def write_dataset(dataset: SmallAreaDataset, handle: TextIO) -> None:
    w = csv.writer(handle, lineterminator="\n")
    w.writerow(["area_id", "y", "D"] + [f"x{j + 1}" for j in range(dataset.p)])
    for i in range(dataset.m):
        w.writerow([dataset.area_ids[i], fmt_csv(dataset.y[i]), fmt_csv(dataset.D[i])] + [fmt_csv(v) for v in dataset.X[i]])


def export_csv(dataset: SmallAreaDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        write_dataset(dataset, fh)


# config ----------------------------------------------------------------------

SEARCH_KEYS = {f.name.lower(): f.name for f in fields(SearchConfig)}


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; keys are case-insensitive."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.read_string("[run]\n" + path.read_text())
    return dict(parser["run"])


def _search_from(values: dict[str, str]) -> SearchConfig:
    kw = {}
    for key, raw in values.items():
        name = SEARCH_KEYS.get(key.lower())
        if name is None or raw in (None, ""):
            continue
        kw[name] = int(raw) if name in ("max_iter", "grid_points") else float(raw)
    return SearchConfig(**kw)


def parse_methods(text: str | Sequence[str]) -> tuple[Method, ...]:
    items = text.split(",") if isinstance(text, str) else list(text)
    return tuple(Method.parse(t.strip()) for t in items if str(t).strip())


@dataclass
class RunConfig:
    command: str
    input_path: Path | None = None
    output_path: Path | None = None
    alpha: float = 0.05
    methods: tuple[Method, ...] = ()
    search: SearchConfig = field(default_factory=SearchConfig)
    scenario: dict[str, str] = field(default_factory=dict)
    seed: int = 42
    reps: int | None = None
    threads: int | None = None
    fmt: str = "csv"
    estimator: str = "nas"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.input_path is not None and not Path(self.input_path).exists():
            raise FileNotFoundError(f"input file {self.input_path} does not exist")
        if self.fmt not in ("csv", "markdown"):
            raise ValueError("format must be csv or markdown")

    @property
    def level(self) -> NominalLevel:
        return NominalLevel(self.alpha)


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict[str, str] = {}
    cfg_path = getattr(args, "config", None) or getattr(args, "scenario", None)
    if cfg_path:
        values = read_config(cfg_path)
    # flags win over the file
    for key in ("abs_tol", "max_iter", "grid_points", "a_max", "truncation_floor"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)

    def pick(flag, key, cast, default):
        v = getattr(args, flag, None)
        if v is not None:
            return cast(v)
        if key in values and values[key] != "":
            return cast(values[key])
        return default

    methods = pick("methods", "methods", parse_methods, ())
    return RunConfig(
        command=args.command,
        input_path=Path(args.input) if getattr(args, "input", None) else None,
        output_path=Path(args.out) if getattr(args, "out", None) else None,
        alpha=pick("alpha", "alpha", float, 0.05),
        methods=methods,
        search=_search_from(values),
        scenario=values,
        seed=pick("seed", "seed", int, 42),
        reps=pick("reps", "n_reps", int, None),
        threads=pick("threads", "threads", int, None),
        fmt=pick("format", "format", str, "csv"),
        estimator=pick("method", "method", str, "nas").strip().lower(),
    )


# output ----------------------------------------------------------------------

def render_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt_csv(v) for v in r])
    return buf.getvalue()


def render_markdown(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    for r in rows:
        lines.append("| " + " | ".join(fmt_md(v) for v in r) + " |")
    return "\n".join(lines) + "\n"


def emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# fit -------------------------------------------------------------------------

_FIT_FACTORS = {
    "reml": lambda z: AdjustmentFactor.none(),
    "nas": lambda z: AdjustmentFactor.nas(z),
    "remark1": lambda z: AdjustmentFactor.remark1(),
}


def cmd_fit(cfg: RunConfig) -> int:
    ds = ingest_csv(cfg.input_path)
    name = {"cox": "reml", "t": "reml", "ct": "reml", "nas0": "nas"}.get(cfg.estimator, cfg.estimator)
    if name not in _FIT_FACTORS:
        raise ValueError(f"fit supports reml, nas and remark1, not {name!r}")
    factor = _FIT_FACTORS[name](cfg.level.z)
    if not existence_holds(ds.m, ds.p, factor):
        print(f"error: existence condition fails for {name} (m={ds.m}, p={ds.p})", file=sys.stderr)
        return EXIT_EXISTENCE
    est = estimate_variance(ds, factor, cfg.search, warn=False)
    fit = fit_model(ds, est.A_hat, name)
    rows = [
        ("method", name),
        ("A_hat", est.A_hat),
        ("converged", est.converged),
        ("truncated", est.truncated),
        ("iterations", est.iterations),
        ("objective", est.objective_at_opt),
    ] + [(f"beta{j + 1}", b) for j, b in enumerate(fit.beta_hat)]
    render = render_csv if cfg.fmt == "csv" else render_markdown
    emit(render(("key", "value"), rows), cfg.output_path)
    return EXIT_OK


# intervals -------------------------------------------------------------------

INTERVAL_HEADER = ("area_id", "method", "center", "lower", "upper", "half_width", "A_used", "branch")


def method_factor(method: Method, level: NominalLevel, dataset: SmallAreaDataset) -> AdjustmentFactor | None:
    """Factor whose existence condition gates ``method`` (None if ungated)."""
    if method in (Method.NAS, Method.NAS0):
        return AdjustmentFactor.nas(level.z)
    if method is Method.C_VARIANT:
        return AdjustmentFactor.c_variant(level.z, dataset, 0)
    if method is Method.REMARK1:
        return AdjustmentFactor.remark1()
    return None


def interval_rows(results: Iterable[IntervalResult]) -> list[tuple]:
    return [
        (r.area_id, r.method.value, r.center, r.lower, r.upper, r.half_width, r.A_used,
         r.branch.value if r.branch is not None else "")
        for r in results
    ]


def cmd_intervals(cfg: RunConfig) -> int:
    ds = ingest_csv(cfg.input_path)
    methods = cfg.methods or (Method.DIRECT, Method.COX_RE, Method.T_RE, Method.CT_RE, Method.NAS)
    calc = IntervalCalculator(ds, cfg.level, cfg.search, warn=False)
    code = EXIT_OK
    results: list[IntervalResult] = []
    for meth in methods:
        factor = method_factor(meth, cfg.level, ds)
        if factor is not None and not existence_holds(ds.m, ds.p, factor):
            print(f"error: {meth.value}: existence condition fails (m={ds.m}, p={ds.p})", file=sys.stderr)
            code = max(code, EXIT_EXISTENCE)
            continue
        try:
            results.extend(calc.intervals([meth]))
        except (ConvergenceError, AdmissibilityError, RankDeficiencyError) as exc:
            print(f"error: {meth.value}: {exc}", file=sys.stderr)
            code = code or EXIT_FAILURE
    render = render_csv if cfg.fmt == "csv" else render_markdown
    emit(render(INTERVAL_HEADER, interval_rows(results)), cfg.output_path)
    return code


# simulate / reproduce ---------------------------------------------------------

SUMMARY_HEADER = (
    "scenario", "cell", "B", "leverage", "method", "coverage_pct", "avg_length", "mc_se",
    "nas0_branch_frac", "n_reps", "n_failed", "truncation_rate",
)


def summary_rows(summary: SimulationSummary) -> list[tuple]:
    return [
        (summary.scenario, r.cell.label, r.cell.table_B, r.cell.table_leverage, r.method.value,
         r.coverage_pct, r.avg_length, r.mc_standard_error, r.nas0_branch_frac,
         summary.n_reps, summary.n_failed, summary.truncation_rate)
        for r in summary.rows
    ]


def scenario_from_config(cfg: RunConfig) -> ScenarioSpec:
    """Build a scenario from config keys.

    ``study = study1`` uses key ``B``; ``study = study2`` uses ``pattern``,
    optional ``A_true`` and ``cell_mode``.  Shared keys: ``n_reps``,
    ``seed``, ``alpha``, ``methods`` and the search settings.
    """
    v = cfg.scenario
    study = v.get("study", "").strip().lower()
    kw = dict(n_reps=cfg.reps or 10_000, seed=cfg.seed, alpha=cfg.alpha, search=cfg.search)
    if cfg.methods:
        kw["methods"] = cfg.methods
    if study == "study1":
        if "b" not in v:
            raise ValueError("study1 scenario needs key B")
        return study1_spec(float(v["b"]), **kw)
    if study == "study2":
        pattern = v.get("pattern", "").strip().lower()
        if pattern not in PATTERNS:
            raise ValueError(f"study2 scenario needs pattern in {sorted(PATTERNS)}")
        a = float(v["a_true"]) if v.get("a_true") else None
        return study2_spec(pattern, a, cell_mode=v.get("cell_mode", "single"), **kw)
    raise ValueError("scenario key 'study' must be study1 or study2")


def table_specs(table: str, cfg: RunConfig) -> list[ScenarioSpec]:
    kw = dict(n_reps=cfg.reps or 10_000, seed=cfg.seed, alpha=cfg.alpha, search=cfg.search)
    if cfg.methods:
        kw["methods"] = cfg.methods
    if table == "table1":
        return [study1_spec(B, **kw) for B in STUDY1_B]
    if table == "table2":
        return [study2_spec(p, **kw) for p in sorted(PATTERNS)]
    raise ValueError(f"unknown table {table!r}")


def table_markdown(summaries: Sequence[SimulationSummary]) -> str:
    """One row per reporting cell, ``coverage (length) +/- se`` per method."""
    methods = list(dict.fromkeys(r.method for s in summaries for r in s.rows))
    header = ["scenario", "B", "leverage"] + [m.value for m in methods]
    rows = []
    for s in summaries:
        for label in dict.fromkeys(r.cell.label for r in s.rows):
            first = s.get(label, methods[0])
            cells = []
            for m in methods:
                r = s.get(label, m)
                cells.append(f"{r.coverage_pct:.2f} ({r.avg_length:.2f}) ±{r.mc_standard_error:.2f}")
            rows.append([s.scenario, first.cell.table_B, first.cell.table_leverage] + cells)
    return render_markdown(header, rows)


def _run_all(specs: Sequence[ScenarioSpec], cfg: RunConfig) -> tuple[list[SimulationSummary], int]:
    threads = cfg.threads if cfg.threads is not None else default_threads()
    out, code = [], EXIT_OK
    for spec in specs:
        try:
            out.append(run_scenario(spec, threads=threads))
        except SimulationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            code = EXIT_FAILURE
    return out, code


def _emit_summaries(summaries: Sequence[SimulationSummary], cfg: RunConfig) -> None:
    if cfg.fmt == "markdown":
        emit(table_markdown(summaries), cfg.output_path)
    else:
        emit(render_csv(SUMMARY_HEADER, [row for s in summaries for row in summary_rows(s)]), cfg.output_path)


def cmd_simulate(cfg: RunConfig) -> int:
    summaries, code = _run_all([scenario_from_config(cfg)], cfg)
    _emit_summaries(summaries, cfg)
    return code


def cmd_reproduce(cfg: RunConfig, table: str) -> int:
    summaries, code = _run_all(table_specs(table, cfg), cfg)
    _emit_summaries(summaries, cfg)
    return code


# entry point -------------------------------------------------------------------

def _add_search_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimator search")
    g.add_argument("--a-max", dest="a_max", type=float, help="upper end of the search interval for A")
    g.add_argument("--abs-tol", dest="abs_tol", type=float, help="bracket width at which refinement stops")
    g.add_argument("--max-iter", dest="max_iter", type=int, help="refinement iteration cap")
    g.add_argument("--grid-points", dest="grid_points", type=int, help="size of the initial log grid")
    g.add_argument("--truncation-floor", dest="truncation_floor", type=float, help="REML truncation level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fhci", description="Fay-Herriot empirical Bayes confidence intervals")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate A and beta")
    p.add_argument("--input", required=True)
    p.add_argument("--method", help="reml, nas or remark1 (default nas)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "markdown"))
    p.add_argument("--config")
    _add_search_flags(p)

    p = sub.add_parser("intervals", help="per-area confidence intervals")
    p.add_argument("--input", required=True)
    p.add_argument("--methods", help="comma separated, e.g. direct,cox,t,ct,nas")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "markdown"))
    p.add_argument("--config")
    _add_search_flags(p)

    p = sub.add_parser("simulate", help="run one Monte Carlo scenario from a config file")
    p.add_argument("--scenario", required=True, help="key = value scenario file")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--methods")
    p.add_argument("--alpha", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "markdown"))
    _add_search_flags(p)

    p = sub.add_parser("reproduce", help="regenerate a coverage table")
    p.add_argument("table", choices=("table1", "table2"))
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--methods")
    p.add_argument("--alpha", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "markdown"))
    p.add_argument("--config")
    _add_search_flags(p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        if cfg.command == "fit":
            return cmd_fit(cfg)
        if cfg.command == "intervals":
            return cmd_intervals(cfg)
        if cfg.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_reproduce(cfg, args.table)
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FayHerriotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
