import math

import numpy as np
import pytest

from fhci.errors import RankDeficiencyError
from fhci.likelihood import (
    BRACES_BASIC,
    BRACES_MATCHED,
    AdjustmentFactor,
    FactorKind,
    adjusted_profile,
    adjusted_score,
    coverage_braces,
    residual_loglik,
    residual_score,
    score_equation_residual,
    target_log_deriv,
)
from fhci.model import SmallAreaDataset

from .oracles import dense_P, dense_residual_loglik, log_factor

Z = 1.959963984540054
A_GRID = (0.1, 0.5, 1.0, 5.0, 20.0)


def test_matches_dense_six_area(rng):
    X = np.column_stack([np.ones(6), rng.uniform(size=6)])
    D = np.array([0.2, 0.5, 1.0, 1.0, 2.0, 3.0])
    y = rng.normal(size=6) * 2
    ds = SmallAreaDataset(y, D, X)
    for A in (0.0, 0.01, 0.7, 4.0, 100.0):
        assert residual_loglik(ds, A) == pytest.approx(dense_residual_loglik(y, X, D, A), rel=1e-12, abs=1e-12)


def test_balanced_score_closed_form(rng):
    m, p, D = 12, 2, 0.8
    X = np.column_stack([np.ones(m), rng.uniform(size=m)])
    y = rng.normal(size=m)
    ds = SmallAreaDataset(y, np.full(m, D), X)
    M = np.eye(m) - X @ np.linalg.solve(X.T @ X, X.T)
    S = y @ M @ y
    for A in A_GRID:
        expect = (S - (m - p) * (A + D)) / (2 * (A + D) ** 2)
        assert residual_score(ds, A) == pytest.approx(expect, rel=1e-11)


def test_translation_invariance(unbalanced8, rng):
    b = rng.normal(size=2) * 10
    shifted = unbalanced8.with_y(unbalanced8.y + unbalanced8.X @ b)
    for A in A_GRID:
        assert residual_loglik(shifted, A) == pytest.approx(residual_loglik(unbalanced8, A), abs=1e-10)


def test_score_vs_dense_identity(unbalanced8):
    y, X, D = unbalanced8.y, unbalanced8.X, unbalanced8.D
    for A in A_GRID:
        V = np.diag(A + D)
        Vi = np.linalg.inv(V)
        P = dense_P(X, D, A)
        G = X.T @ Vi @ X
        expect = -0.5 * np.trace(Vi) + 0.5 * np.trace(np.linalg.solve(G, X.T @ Vi @ Vi @ X)) + 0.5 * y @ P @ P @ y
        assert residual_score(unbalanced8, A) == pytest.approx(expect, rel=1e-10)


@pytest.mark.parametrize("kind", ["none", "nas", "c_variant", "remark1"])
def test_score_vs_finite_differences(unbalanced8, kind):
    ds = unbalanced8
    factor = {
        "none": AdjustmentFactor.none(),
        "nas": AdjustmentFactor.nas(Z),
        "c_variant": AdjustmentFactor.c_variant(Z, ds, 2),
        "remark1": AdjustmentFactor.remark1(),
    }[kind]
    for A in A_GRID:
        h = 1e-5 * (A + ds.D.mean())
        f = lambda a: adjusted_profile(ds, factor, a)
        fd = (-f(A + 2 * h) + 8 * f(A + h) - 8 * f(A - h) + f(A - 2 * h)) / (12 * h)
        an = adjusted_score(ds, factor, A)
        assert abs(fd - an) <= 1e-5 * abs(an) + 1e-9


def test_adjusted_profile_examples(unbalanced8):
    ds = unbalanced8
    nas = AdjustmentFactor.nas(Z)
    assert adjusted_profile(ds, AdjustmentFactor.none(), 0.7) == residual_loglik(ds, 0.7)
    assert adjusted_profile(ds, nas, 1.0) == pytest.approx(residual_loglik(ds, 1.0), abs=1e-14)
    lhs = (adjusted_profile(ds, nas, 1.4) - residual_loglik(ds, 1.4)) - (adjusted_profile(ds, nas, 0.7) - residual_loglik(ds, 0.7))
    assert lhs == pytest.approx((1 + Z * Z) / 4 * math.log(2), abs=1e-12)
    for A in A_GRID:
        assert adjusted_profile(ds, nas, A) - adjusted_profile(ds, AdjustmentFactor.none(), A) == pytest.approx(
            (1 + Z * Z) / 4 * math.log(A), abs=1e-11
        )


def test_factor_values_match_definitions(unbalanced8):
    d = float(unbalanced8.D[4])
    pairs = [
        (AdjustmentFactor.none(), "none"),
        (AdjustmentFactor.nas(Z), "nas"),
        (AdjustmentFactor.c_variant(Z, unbalanced8, 4), "c_variant"),
        (AdjustmentFactor.remark1(), "remark1"),
    ]
    for factor, kind in pairs:
        for A in A_GRID:
            assert factor.log_value(A) == pytest.approx(float(log_factor(kind, A, Z, d)), abs=1e-14)
            h = 1e-6 * A
            fd = (factor.log_value(A + h) - factor.log_value(A - h)) / (2 * h)
            assert factor.log_deriv(A) == pytest.approx(fd, rel=1e-7, abs=1e-9)


def test_factor_metadata_and_cache(unbalanced8):
    c = AdjustmentFactor.c_variant(Z, unbalanced8, 0)
    assert c.kind is FactorKind.C_VARIANT and c.shift == unbalanced8.D[0] and c.area == 0
    assert AdjustmentFactor.nas(Z) is AdjustmentFactor.nas(Z)
    assert not AdjustmentFactor.none().is_adjusted and AdjustmentFactor.remark1().is_adjusted
    assert AdjustmentFactor.nas(Z).log_value(0.0) == -math.inf


def test_negative_A_rejected(unbalanced8):
    with pytest.raises(ValueError):
        residual_loglik(unbalanced8, -0.1)


def test_singular_design_raises():
    X = np.column_stack([np.ones(4), [1.0, 1.0, 1.0, 1.0 + 1e-15]])
    with pytest.raises(RankDeficiencyError):
        ds = SmallAreaDataset(np.arange(4.0), np.ones(4), X)
        residual_loglik(ds, 1.0)


# second-order pairing diagnostics ---------------------------------------------

@pytest.mark.parametrize("A", A_GRID)
def test_c_variant_zero_braces(unbalanced8, A):
    for i in range(unbalanced8.m):
        r = score_equation_residual(unbalanced8, AdjustmentFactor.c_variant(Z, unbalanced8, i), A, 0.0, i)
        assert abs(r.matched) < 1e-12 and abs(r.factor_mismatch) < 1e-12


@pytest.mark.parametrize("A", A_GRID)
def test_nas_pairing(unbalanced8, A):
    c = (7 - Z * Z) / 4
    i = 5
    d = unbalanced8.D[i]
    r = score_equation_residual(unbalanced8, AdjustmentFactor.nas(Z), A, c, i)
    assert abs(r.matched) < 1e-12
    # the basic form keeps a nonzero D_i / A remainder
    expect_basic = (A + d) * (1 + Z * Z) / (4 * A) + c - 2 * d / A
    assert r.basic == pytest.approx(expect_basic, rel=1e-13)
    assert r.basic == pytest.approx(2 - (7 - Z * Z) * d / (4 * A), rel=1e-12)


@pytest.mark.parametrize("A", A_GRID)
def test_remark1_and_reml_pairings(unbalanced8, A):
    i = 1
    d = unbalanced8.D[i]
    r = score_equation_residual(unbalanced8, AdjustmentFactor.remark1(), A, 1.75 + Z * Z * d / (4 * A), i, z=Z)
    assert abs(r.matched) < 1e-12
    r = score_equation_residual(unbalanced8, AdjustmentFactor.none(), A, 2 + (1 + Z * Z) * d / (4 * A), i, z=Z)
    assert abs(r.matched) < 1e-12
    r = score_equation_residual(unbalanced8, AdjustmentFactor.none(), A, 2.0, i, z=Z)
    assert r.basic == pytest.approx(2 - 2 * d / A, rel=1e-13)


def test_target_log_deriv_consistency():
    for A, d, c in [(0.3, 1.0, 0.0), (2.0, 0.5, 1.2), (1.0, 4.0, -0.3)]:
        lp = target_log_deriv(A, d, c, Z)
        assert coverage_braces(A, d, lp, c, Z, BRACES_MATCHED) == pytest.approx(0.0, abs=1e-12)


def test_braces_errors():
    with pytest.raises(ValueError):
        coverage_braces(0.0, 1.0, 0.0, 2.0)
    with pytest.raises(ValueError):
        coverage_braces(1.0, 1.0, 0.0, 2.0, None, BRACES_MATCHED)
    with pytest.raises(ValueError):
        coverage_braces(1.0, 1.0, 0.0, 2.0, Z, "other")
    assert coverage_braces(1.0, 1.0, 0.0, 2.0, form=BRACES_BASIC) == 0.0


def test_score_residual_domain(unbalanced8):
    with pytest.raises(ValueError):
        score_equation_residual(unbalanced8, AdjustmentFactor.nas(Z), 0.0, 0.79, 0)
    with pytest.raises(ValueError):
        score_equation_residual(unbalanced8, AdjustmentFactor.remark1(), 1.0, 0.79, 0)
