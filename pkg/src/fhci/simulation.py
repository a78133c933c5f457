"""Monte Carlo coverage and length of the interval methods under the model.

A scenario fixes the design ``X``, the sampling variances ``D``, the true
``A`` and ``beta``.  Replicate ``r`` draws

    theta = X beta + sqrt(A) u,   y = theta + sqrt(D) e,   u, e ~ N(0, I)

from its own counter-based stream, builds every requested interval for the
reporting areas, and records coverage of ``theta_i`` and interval length.
Results are stored per replicate and summed in replicate order, so the
summary does not depend on the number of worker threads.
"""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .errors import AdmissibilityError, ConvergenceError, FayHerriotError, RankDeficiencyError
from .estimators import SearchConfig
from .intervals import Branch, IntervalCalculator, Method, NominalLevel
from .model import SmallAreaDataset, leverages, yl_condition_holds

DEFAULT_METHODS = (Method.COX_RE, Method.T_RE, Method.NAS, Method.CT_RE, Method.DIRECT)
MAX_FAILURE_RATE = 0.01
THREADS_ENV = "FHCI_THREADS"

PATTERNS = {
    "a": (0.2, 0.4, 0.5, 0.6, 2.0),
    "b": (2.0, 4.0, 5.0, 6.0, 20.0),
    "c": (2.0, 0.6, 0.5, 0.4, 0.2),
}
# True A per pattern.  These put B_i = D_i / (A + D_i) at 0.47 for the
# smaller reported D group and 0.9 for the larger one in every pattern.
STUDY2_A = {"a": 2.0 / 9.0, "b": 20.0 / 9.0, "c": 2.0 / 9.0}


class SimulationError(FayHerriotError, RuntimeError):
    """Too many replicates failed."""


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ReportingCell:
    """Areas whose coverage and length are pooled into one table cell."""

    label: str
    areas: tuple[int, ...]
    table_B: float | None = None
    table_leverage: float | None = None


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    name: str
    X: np.ndarray
    D: np.ndarray
    A_true: float
    beta: np.ndarray | None = None
    n_reps: int = 10_000
    alpha: float = 0.05
    methods: tuple[Method, ...] = DEFAULT_METHODS
    seed: int = 42
    cells: tuple[ReportingCell, ...] = ()
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        D = np.ascontiguousarray(self.D, dtype=float).reshape(-1)
        if D.size != X.shape[0]:
            raise ValueError("D and X disagree on the number of areas")
        if self.n_reps < 1:
            raise ValueError("n_reps must be at least 1")
        if self.A_true < 0:
            raise ValueError("A_true must be nonnegative")
        beta = np.zeros(X.shape[1]) if self.beta is None else np.asarray(self.beta, dtype=float).reshape(-1)
        if beta.size != X.shape[1]:
            raise ValueError("beta length must equal the number of covariates")
        cells = self.cells or tuple(ReportingCell(f"area {i + 1}", (i,)) for i in range(D.size))
        for c in cells:
            if not c.areas or min(c.areas) < 0 or max(c.areas) >= D.size:
                raise ValueError(f"cell {c.label!r} refers to areas outside the design")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "methods", tuple(Method.parse(m) if isinstance(m, str) else m for m in self.methods))

    @property
    def m(self) -> int:
        return self.D.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @functools.cached_property
    def base_dataset(self) -> SmallAreaDataset:
        return SmallAreaDataset(self.X @ self.beta, self.D, self.X)

    @functools.cached_property
    def level(self) -> NominalLevel:
        return NominalLevel(self.alpha)

    @functools.cached_property
    def report_areas(self) -> tuple[int, ...]:
        return tuple(sorted({a for c in self.cells for a in c.areas}))


def expand_pattern(pattern, m: int) -> np.ndarray:
    """Repeat each group value ``m / len(pattern)`` times, in order."""
    k = len(pattern)
    if k == 0 or m % k:
        raise ValueError(f"pattern of length {k} does not divide {m} areas evenly")
    return np.repeat(np.asarray(pattern, dtype=float), m // k)


def generate_replicate(spec: ScenarioSpec, rep_index: int) -> tuple[SmallAreaDataset, np.ndarray]:
    g = streams.generator(spec.seed, streams.REPLICATES, rep_index)
    z = g.standard_normal((2, spec.m))
    theta = spec.X @ spec.beta + math.sqrt(spec.A_true) * z[0]
    y = theta + np.sqrt(spec.D) * z[1]
    return spec.base_dataset.with_y(y), theta


# covariate designs ---------------------------------------------------------

def study1_covariates(seed: int = 42, m: int = 15, target_max_leverage: float = 0.23, tol: float = 0.01) -> np.ndarray:
    """Intercept plus one U(0, 1) column, redrawn until the largest leverage is near the target."""
    for t in range(100_000):
        x = streams.generator(seed, streams.COVARIATES, t).uniform(0.0, 1.0, m)
        X = np.column_stack([np.ones(m), x])
        h = leverages(SmallAreaDataset(np.zeros(m), np.ones(m), X))
        if abs(h.max() - target_max_leverage) <= tol:
            return X
    raise RuntimeError("no covariate draw met the leverage target")


def study2_covariates(seed: int = 42, m: int = 15, target_last_leverage: float = 0.64, tol: float = 0.01) -> np.ndarray:
    """First ``m - 1`` covariates from U(0, 0.5), the last from U(0.5, 1).

    The last draw is repeated until its leverage is within ``tol`` of the
    target and the leverage condition fails for that area alone.
    """
    probe = np.ones(m)
    for t in range(10_000):
        g = streams.generator(seed, streams.COVARIATES, 1_000_000 + t)
        head = g.uniform(0.0, 0.5, m - 1)
        for _ in range(200):
            x = np.append(head, g.uniform(0.5, 1.0))
            X = np.column_stack([np.ones(m), x])
            ds = SmallAreaDataset(np.zeros(m), probe, X)
            h = leverages(ds)
            if abs(h[-1] - target_last_leverage) > tol:
                continue
            holds = [yl_condition_holds(ds, i, h[i]) for i in range(m)]
            if not holds[-1] and all(holds[:-1]):
                return X
    raise RuntimeError("no covariate draw met the leverage target")


def study1_spec(B: float, n_reps: int = 10_000, seed: int = 42, **kw) -> ScenarioSpec:
    """Balanced design: m = 15, D_i = 1, A = D (1 - B) / B.

    Reporting cells are the areas with the smallest and largest leverage.
    """
    if not 0.0 < B < 1.0:
        raise ValueError("B must lie in (0, 1)")
    m, D = 15, 1.0
    X = study1_covariates(seed, m)
    h = leverages(SmallAreaDataset(np.zeros(m), np.ones(m), X))
    lo, hi = int(np.argmin(h)), int(np.argmax(h))
    cells = (
        ReportingCell(f"B={B:.2f} lev={h[lo]:.2f}", (lo,), B, float(h[lo])),
        ReportingCell(f"B={B:.2f} lev={h[hi]:.2f}", (hi,), B, float(h[hi])),
    )
    return ScenarioSpec(
        name=f"study1_B{B:.2f}",
        X=X,
        D=np.full(m, D),
        A_true=D * (1.0 - B) / B,
        n_reps=n_reps,
        seed=seed,
        cells=cells,
        **kw,
    )


def study2_spec(
    pattern: str, A_true: float | None = None, n_reps: int = 10_000, seed: int = 42, cell_mode: str = "single", **kw
) -> ScenarioSpec:
    """Unbalanced design with five D groups of three areas and one high-leverage area.

    ``A_true`` defaults to :data:`STUDY2_A`.  Two cells are reported per
    pattern, identified by their direct-interval length: the ``D = 0.2``
    and ``D = 2`` groups for patterns (a) and (c), ``D = 2`` and ``D = 20``
    for (b).  The group containing the final,
    high-leverage area is reported through that area alone; the other
    group is reported through its lowest-leverage member (``cell_mode=
    "single"``) or all its members (``cell_mode="group"``).
    """
    pattern = pattern.lower()
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}")
    if A_true is None:
        A_true = STUDY2_A[pattern]
    m = 15
    X = study2_covariates(seed, m)
    D = expand_pattern(PATTERNS[pattern], m)
    h = leverages(SmallAreaDataset(np.zeros(m), np.ones(m), X))
    last = m - 1
    low_d, high_d = sorted(set(PATTERNS[pattern]))[0], sorted(set(PATTERNS[pattern]))[-1]
    other_d = high_d if D[last] == low_d else low_d
    group = [i for i in range(m) if D[i] == other_d and i != last]
    if cell_mode == "single":
        group = [min(group, key=lambda i: h[i])]
    elif cell_mode != "group":
        raise ValueError("cell_mode must be 'single' or 'group'")

    def cell(areas, d):
        B = float(d / (A_true + d))
        lev = float(np.mean(h[list(areas)]))
        return ReportingCell(f"({pattern}) B={B:.2f} lev={lev:.2f}", tuple(areas), B, lev)

    cells = [cell(group, other_d), cell((last,), D[last])]
    cells.sort(key=lambda c: c.table_B)
    return ScenarioSpec(
        name=f"study2_{pattern}_A{A_true:g}",
        X=X,
        D=D,
        A_true=A_true,
        n_reps=n_reps,
        seed=seed,
        cells=tuple(cells),
        **kw,
    )


# running -------------------------------------------------------------------

@dataclass(frozen=True)
class CellSummary:
    cell: ReportingCell
    method: Method
    coverage_pct: float
    avg_length: float
    mc_standard_error: float
    nas0_branch_frac: float | None = None
    uncalibrated_frac: float | None = None
    A_bar: float | None = None


@dataclass(frozen=True)
class SimulationSummary:
    scenario: str
    n_reps: int
    n_failed: int
    truncation_rate: float
    rows: tuple[CellSummary, ...]
    cell_D: dict = field(default_factory=dict)

    def get(self, cell_label: str, method: Method | str) -> CellSummary:
        method = Method.parse(method) if isinstance(method, str) else method
        for r in self.rows:
            if r.cell.label == cell_label and r.method is method:
                return r
        raise KeyError((cell_label, method))

    def by_index(self, cell_index: int, method: Method | str) -> CellSummary:
        method = Method.parse(method) if isinstance(method, str) else method
        labels = list(dict.fromkeys(r.cell.label for r in self.rows))
        label = labels[cell_index]
        return self.get(label, method)

    @property
    def failure_rate(self) -> float:
        return self.n_failed / self.n_reps


def _run_chunk(spec: ScenarioSpec, reps: range, out: dict) -> None:
    methods = spec.methods
    areas = spec.report_areas
    level = spec.level
    for r in reps:
        ds, theta = generate_replicate(spec, r)
        calc = IntervalCalculator(ds, level, spec.search, warn=False)
        try:
            for k, meth in enumerate(methods):
                for j, a in enumerate(areas):
                    res = calc.interval(meth, a)
                    out["cover"][r, k, j] = res.contains(theta[a])
                    out["length"][r, k, j] = res.length
                    out["A"][r, k, j] = res.A_used if res.A_used is not None else math.nan
                    if res.branch is not None:
                        out["branch"][r, k, j] = res.branch is Branch.NAS0
                    if meth is Method.CT_RE:
                        out["uncal"][r, k, j] = not res.calibrated
            if any(m in (Method.COX_RE, Method.T_RE, Method.CT_RE) for m in methods):
                out["trunc"][r] = calc.estimate("reml").truncated
        except (ConvergenceError, RankDeficiencyError, AdmissibilityError):
            out["failed"][r] = True


def run_scenario(spec: ScenarioSpec, threads: int | None = None, chunk_size: int = 250) -> SimulationSummary:
    """Simulate ``spec.n_reps`` replicates and pool coverage/length per reporting cell.

    Replicates in which an estimator fails are excluded and counted; more
    than 1% failures raises :class:`SimulationError`.
    """
    threads = default_threads() if threads is None else max(1, int(threads))
    n, K, J = spec.n_reps, len(spec.methods), len(spec.report_areas)
    out = {
        "cover": np.zeros((n, K, J), dtype=bool),
        "length": np.zeros((n, K, J)),
        "A": np.full((n, K, J), math.nan),
        "branch": np.zeros((n, K, J), dtype=bool),
        "uncal": np.zeros((n, K, J), dtype=bool),
        "trunc": np.zeros(n, dtype=bool),
        "failed": np.zeros(n, dtype=bool),
    }
    chunks = [range(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(lambda c: _run_chunk(spec, c, out), chunks))
    else:
        for c in chunks:
            _run_chunk(spec, c, out)

    failed = out["failed"]
    n_failed = int(failed.sum())
    if n_failed > MAX_FAILURE_RATE * n:
        raise SimulationError(f"{spec.name}: {n_failed} of {n} replicates failed")
    ok = ~failed
    n_ok = int(ok.sum())
    col = {a: j for j, a in enumerate(spec.report_areas)}
    rows = []
    for cell in spec.cells:
        js = [col[a] for a in cell.areas]
        for k, meth in enumerate(spec.methods):
            cov = out["cover"][ok][:, k, js]
            c_hat = float(cov.mean()) if n_ok else math.nan
            rows.append(
                CellSummary(
                    cell=cell,
                    method=meth,
                    coverage_pct=100.0 * c_hat,
                    avg_length=float(out["length"][ok][:, k, js].mean()) if n_ok else math.nan,
                    mc_standard_error=100.0 * math.sqrt(c_hat * (1.0 - c_hat) / n_ok) if n_ok else math.nan,
                    nas0_branch_frac=float(out["branch"][ok][:, k, js].mean()) if meth is Method.NAS and n_ok else None,
                    uncalibrated_frac=float(out["uncal"][ok][:, k, js].mean()) if meth is Method.CT_RE and n_ok else None,
                    A_bar=float(np.nanmean(out["A"][ok][:, k, js])) if meth is not Method.DIRECT and n_ok else None,
                )
            )
    return SimulationSummary(
        scenario=spec.name,
        n_reps=n,
        n_failed=n_failed,
        truncation_rate=float(out["trunc"][ok].mean()) if n_ok else math.nan,
        rows=tuple(rows),
        cell_D={c.label: tuple(float(spec.D[a]) for a in c.areas) for c in spec.cells},
    )
