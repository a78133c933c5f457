"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the collected lines
are repeated in the terminal summary.
"""

import math

import numpy as np
import pytest

from fhci.cli import main as cli_main
from fhci.estimators import (
    DEFAULT_SEARCH,
    SearchConfig,
    balanced_nas_closed_form,
    estimate_variance,
    moment_diagnostics,
    nas_estimate,
)
from fhci.intervals import IntervalCalculator, Method, NominalLevel
from fhci.likelihood import AdjustmentFactor, adjusted_profile, adjusted_score
from fhci.model import SmallAreaDataset
from fhci.mse import mse_components_all
from fhci.simulation import run_scenario, study1_spec, study2_spec

from .conftest import record
from .oracles import grid_maximizer, random_instance

Z = NominalLevel().z
SEED = 42

# published values (coverage %, average length) by (B, leverage cell index)
TABLE1_NAS = {
    (0.5, 0): (96.24, 3.23), (0.5, 1): (96.18, 3.38),
    (0.7, 0): (97.66, 3.04), (0.7, 1): (97.08, 3.24),
    (0.9, 0): (98.82, 2.89), (0.9, 1): (98.20, 3.13),
}
TABLE2_COX_HIGH_LEVERAGE = {"a": 53.51, "b": 50.69}


@pytest.fixture(scope="module")
def table1():
    return {B: run_scenario(study1_spec(B, n_reps=10_000, seed=SEED)) for B in (0.5, 0.7, 0.9)}


@pytest.fixture(scope="module")
def table2():
    return {p: run_scenario(study2_spec(p, n_reps=10_000, seed=SEED)) for p in "abc"}


def _check(criterion, failures, detail_ok):
    ok = not failures
    record(criterion, ok, detail_ok if ok else "; ".join(failures))
    assert ok, failures


def test_criterion_1_direct_exactness():
    runs = [run_scenario(study1_spec(B, n_reps=2000, seed=SEED)) for B in (0.5, 0.7, 0.9)]
    runs += [run_scenario(study2_spec(p, n_reps=2000, seed=SEED)) for p in "abc"]
    failures, worst = [], 0.0
    for s in runs:
        for label, Ds in s.cell_D.items():
            r = s.get(label, Method.DIRECT)
            exact = 2 * Z * math.sqrt(Ds[0])
            if abs(r.avg_length - exact) > 1e-12 * exact:
                failures.append(f"{s.scenario} {label}: length {r.avg_length!r} != {exact!r}")
            se = 100 * math.sqrt(0.95 * 0.05 / (s.n_reps - s.n_failed))
            dev = abs(r.coverage_pct - 95.0) / se
            worst = max(worst, dev)
            if dev > 3:
                failures.append(f"{s.scenario} {label}: coverage {r.coverage_pct:.2f} is {dev:.2f} SE from 95")
    _check("1", failures, f"12 cells, lengths exact, max |coverage-95| = {worst:.2f} SE")


def test_criterion_2_table1(table1):
    failures = []
    for B, s in table1.items():
        for j in (0, 1):
            nas = s.by_index(j, Method.NAS)
            cov, length = TABLE1_NAS[(B, j)]
            if nas.coverage_pct < 95:
                failures.append(f"B={B} cell {j}: NAS coverage {nas.coverage_pct:.2f} < 95")
            if abs(nas.coverage_pct - cov) > 1.5:
                failures.append(f"B={B} cell {j}: NAS coverage {nas.coverage_pct:.2f} vs {cov}")
            if not nas.avg_length < 2 * Z:
                failures.append(f"B={B} cell {j}: NAS length {nas.avg_length:.3f} >= 3.92")
            if abs(nas.avg_length - length) > 0.15:
                failures.append(f"B={B} cell {j}: NAS length {nas.avg_length:.3f} vs {length}")
    for j in (0, 1):
        cox = [table1[B].by_index(j, Method.COX_RE).coverage_pct for B in (0.5, 0.7, 0.9)]
        if not cox[0] < 85:
            failures.append(f"cell {j}: Cox coverage {cox[0]:.2f} at B=0.5 not below 85")
        if not cox[0] > cox[1] > cox[2]:
            failures.append(f"cell {j}: Cox coverage not declining in B: {cox}")
    ct = table1[0.9].by_index(0, Method.CT_RE).avg_length
    if not ct > 2 * Z:
        failures.append(f"CT length {ct:.3f} not above Direct at B=0.9, low leverage")
    cells = ", ".join(
        f"{table1[B].by_index(j, Method.NAS).coverage_pct:.2f}/{table1[B].by_index(j, Method.NAS).avg_length:.2f}"
        for B in (0.5, 0.7, 0.9) for j in (0, 1)
    )
    cox = [table1[B].by_index(0, Method.COX_RE).coverage_pct for B in (0.5, 0.7, 0.9)]
    _check("2", failures, f"NAS cov/len {cells}; Cox {cox[0]:.2f}>{cox[1]:.2f}>{cox[2]:.2f}; CT {ct:.2f} > 3.92")


def test_criterion_3_table2(table2):
    failures = []
    for p, s in table2.items():
        for label, Ds in s.cell_D.items():
            nas = s.get(label, Method.NAS)
            direct = s.get(label, Method.DIRECT)
            if nas.coverage_pct < 95:
                failures.append(f"{label}: NAS coverage {nas.coverage_pct:.2f} < 95")
            if not nas.avg_length < direct.avg_length:
                failures.append(f"{label}: NAS length {nas.avg_length:.3f} >= Direct {direct.avg_length:.3f}")
    t = table2["c"].by_index(1, Method.T_RE)
    if not (t.cell.table_B == pytest.approx(0.9, abs=0.01) and t.cell.table_leverage < 0.1):
        failures.append(f"unexpected pattern (c) cell {t.cell.label}")
    if not t.coverage_pct < 90:
        failures.append(f"T.Re coverage {t.coverage_pct:.2f} at (c, 0.9, low leverage) not below 90")
    cox_detail = []
    for p, ref in TABLE2_COX_HIGH_LEVERAGE.items():
        r = table2[p].by_index(1, Method.COX_RE)
        cox_detail.append(f"({p}) {r.coverage_pct:.2f} vs {ref}")
        if not r.cell.table_leverage > 0.6:
            failures.append(f"pattern ({p}) B=0.9 cell is not the high-leverage area")
        if abs(r.coverage_pct - ref) > 3:
            failures.append(f"Cox ({p}) B=0.9 high leverage: {r.coverage_pct:.2f} vs {ref}")
    ct_detail = []
    for p in "ab":
        ct = table2[p].by_index(0, Method.CT_RE).avg_length
        direct = table2[p].by_index(0, Method.DIRECT).avg_length
        ct_detail.append(f"({p}) {ct:.2f}>{direct:.2f}")
        if not ct > direct:
            failures.append(f"CT ({p}) B=0.47 length {ct:.3f} not above Direct {direct:.3f}")
    _check("3", failures, f"NAS >= 95 and < Direct in 6 cells; T.Re(c) {t.coverage_pct:.2f}; Cox {', '.join(cox_detail)}; CT {', '.join(ct_detail)}")


def test_criterion_4_oracle_equivalence():
    rng = np.random.default_rng(4)
    failures, worst = [], 0.0
    cfg = SearchConfig(truncation_floor=0.0)
    for kind in ("nas", "c_variant", "remark1", "none"):
        for k in range(50):
            m = (8, 15, 40)[k % 3]
            y, X, D, _ = random_instance(rng, m)
            ds = SmallAreaDataset(y, D, X)
            i = int(rng.integers(m))
            factor = {
                "nas": AdjustmentFactor.nas(Z),
                "c_variant": AdjustmentFactor.c_variant(Z, ds, i),
                "remark1": AdjustmentFactor.remark1(),
                "none": AdjustmentFactor.none(),
            }[kind]
            est = estimate_variance(ds, factor, cfg, warn=False)
            ref = grid_maximizer(y, X, D, kind, cfg.a_max_for(ds), Z, D[i])
            err = abs(est.A_hat - ref) / (1 + est.A_hat)
            worst = max(worst, err)
            if err > 1e-6:
                failures.append(f"{kind} instance {k}: {est.A_hat!r} vs oracle {ref!r}")
    worst_bal = 0.0
    for k in range(50):
        m = (8, 15, 40)[k % 3]
        y, X, D, _ = random_instance(rng, m, d_choices=(float(rng.uniform(0.2, 5.0)),))
        ds = SmallAreaDataset(y, D, X)
        err = abs(nas_estimate(ds, Z).A_hat - balanced_nas_closed_form(ds, Z))
        worst_bal = max(worst_bal, err)
        if err > 1e-8:
            failures.append(f"balanced instance {k}: closed form differs by {err:.3g}")
    _check("4", failures, f"200 instances, max rel err {worst:.2e}; balanced max abs err {worst_bal:.2e}")


def test_criterion_5_moments():
    m = 200
    rng = np.random.default_rng(5)
    X = np.column_stack([np.ones(m), rng.uniform(size=m)])
    ds = SmallAreaDataset(np.zeros(m), np.ones(m), X)
    nas = moment_diagnostics(ds, AdjustmentFactor.nas(Z), 1.0, 5000, seed=SEED)
    re = moment_diagnostics(ds, AdjustmentFactor.none(), 1.0, 5000, seed=SEED)
    failures = []
    pb = 2 * (1 + Z * Z) / m
    if abs(nas.predicted_bias - pb) > 1e-12:
        failures.append("predicted bias formula mismatch")
    zb = (nas.bias - pb) / nas.bias_se
    zv = (nas.variance - 8 / m) / nas.variance_se
    zr = re.bias / re.bias_se
    for name, zval in (("NAS bias", zb), ("NAS variance", zv), ("REML bias", zr)):
        if abs(zval) > 3:
            failures.append(f"{name} {zval:.2f} SE from prediction")
    if nas.n_failed or re.n_failed:
        failures.append("failed replicates")
    _check(
        "5",
        failures,
        f"NAS bias {nas.bias:.4f} vs {pb:.4f} ({zb:+.2f} SE), variance {nas.variance:.4f} vs {8 / m:.4f} ({zv:+.2f} SE), REML bias {re.bias:.4f} ({zr:+.2f} SE)",
    )


def _random_dataset(rng, m_lo=8, m_hi=40):
    m = int(rng.integers(m_lo, m_hi + 1))
    p = int(rng.integers(1, 4))
    y, X, D, _ = random_instance(rng, m, p, d_choices=tuple(rng.uniform(0.05, 10.0, size=5)))
    return SmallAreaDataset(y, D, X)


def test_criterion_6i_blup_mse_below_D():
    rng = np.random.default_rng(61)
    margin = math.inf
    for _ in range(1000):
        ds = _random_dataset(rng)
        A = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e2))))
        c = mse_components_all(ds, A)
        margin = min(margin, float(np.min((ds.D - c.blup_mse) / ds.D)))
    ok = margin > 0
    record("6(i)", ok, f"1000 draws, min relative margin (D - g1 - g2)/D = {margin:.3e}")
    assert ok


def test_criterion_6ii_length_dominance():
    rng = np.random.default_rng(62)
    failures, n = [], 0
    for k in range(100):
        ds = _random_dataset(rng, m_lo=10)
        calc = IntervalCalculator(ds, warn=False)
        for i in range(ds.m):
            d = calc.interval(Method.DIRECT, i).half_width
            for meth in (Method.NAS, Method.C_VARIANT):
                n += 1
                if not calc.interval(meth, i).half_width < d:
                    failures.append(f"dataset {k} area {i} {meth.value}")
    _check("6(ii)", failures, f"{n} NAS/C intervals strictly shorter than Direct")


def test_criterion_6iii_translation_equivariance():
    rng = np.random.default_rng(63)
    failures, worst = [], 0.0
    for k in range(50):
        ds = _random_dataset(rng, m_lo=10)
        b = rng.normal(size=ds.p) * 5
        shift = ds.X @ b
        c1 = IntervalCalculator(ds, warn=False)
        c2 = IntervalCalculator(ds.with_y(ds.y + shift), warn=False)
        for meth in Method:
            for i in range(ds.m):
                r1, r2 = c1.interval(meth, i), c2.interval(meth, i)
                e_c = abs(r2.center - r1.center - shift[i]) / (1 + abs(shift[i]) + abs(r1.center))
                e_h = abs(r2.half_width - r1.half_width) / r1.half_width
                worst = max(worst, e_c, e_h)
                if e_c > 1e-6 or e_h > 1e-6 or r1.branch != r2.branch:
                    failures.append(f"dataset {k} area {i} {meth.value}: {e_c:.2e}, {e_h:.2e}")
    _check("6(iii)", failures, f"50 datasets x 8 methods, max relative deviation {worst:.2e}")


def test_criterion_6iv_score_vs_finite_differences():
    rng = np.random.default_rng(64)
    failures, worst = [], 0.0
    for k in range(20):
        ds = _random_dataset(rng)
        factors = (AdjustmentFactor.none(), AdjustmentFactor.nas(Z), AdjustmentFactor.c_variant(Z, ds, 0), AdjustmentFactor.remark1())
        for factor in factors:
            for A in (0.1, 0.5, 1.0, 5.0, 20.0):
                h = 1e-5 * (A + ds.D.mean())
                f = lambda a: adjusted_profile(ds, factor, a)
                fd = (-f(A + 2 * h) + 8 * f(A + h) - 8 * f(A - h) + f(A - 2 * h)) / (12 * h)
                an = adjusted_score(ds, factor, A)
                rel = abs(fd - an) / max(abs(an), 1e-4)
                worst = max(worst, rel)
                if abs(fd - an) > 1e-5 * abs(an) + 1e-9:
                    failures.append(f"instance {k} {factor.kind.value} A={A}: {an!r} vs {fd!r}")
    _check("6(iv)", failures, f"400 (instance, factor, A) points, max relative error {worst:.2e}")


def test_criterion_6v_existence_interior():
    rng = np.random.default_rng(65)
    failures = []
    for k in range(100):
        ds = _random_dataset(rng, m_lo=3, m_hi=40)
        a_max = DEFAULT_SEARCH.a_max_for(ds)
        checks = []
        if ds.m > ds.p + (1 + Z * Z) / 2:
            checks.append(AdjustmentFactor.nas(Z))
        if ds.m > ds.p + 4:
            checks.append(AdjustmentFactor.c_variant(Z, ds, int(rng.integers(ds.m))))
        for factor in checks:
            est = estimate_variance(ds, factor, warn=False)
            score = adjusted_score(ds, factor, est.A_hat)
            if not (0 < est.A_hat < a_max) or abs(score) > 1e-4 * (1 + abs(est.objective_at_opt)):
                failures.append(f"instance {k} {factor.kind.value}: A_hat {est.A_hat!r}, score {score:.2e}")
    _check("6(v)", failures, "100 instances, NAS and C maxima interior with vanishing score")


def test_criterion_7_determinism(tmp_path):
    a, b = tmp_path / "t1.csv", tmp_path / "t4.csv"
    assert cli_main(["reproduce", "table1", "--seed", "42", "--threads", "1", "--out", str(a)]) == 0
    assert cli_main(["reproduce", "table1", "--seed", "42", "--threads", "4", "--out", str(b)]) == 0
    ok = a.read_bytes() == b.read_bytes()
    record("7", ok, f"reproduce table1 --seed 42 with 1 and 4 threads: {'byte-identical' if ok else 'DIFFERENT'} ({a.stat().st_size} bytes)")
    assert ok
