"""Confidence intervals for the small area means ``theta_i``.

Every interval has the form ``center +/- q * s``:

=========  ==========================  ======  ==================================
method     center                      q       s^2
=========  ==========================  ======  ==================================
direct     y_i                         z       D_i
cox        EBLUP at REML               z       g1
t          EBLUP at REML               z       g1 + g2 + 2 g3
ct         EBLUP at REML               q*      g1 + g2 + 2 g3
nas0       EBLUP at NAS                z       g1 + g2 + (7 - z^2)/4 g3
c          EBLUP at area-specific fit  z       g1 + g2
nas        nas0 if its s^2 < D_i, otherwise c
remark1    EBLUP at A^(1/4) fit        z       g1 + g2 + (7/4 + z^2 D_i/(4A)) g3
=========  ==========================  ======  ==================================

REML fits are truncated at the search floor (0.01 by default) before use.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from scipy import optimize, stats

from .errors import AdmissibilityError
from .estimators import (
    DEFAULT_SEARCH,
    SearchConfig,
    VarianceEstimate,
    estimate_variance,
)
from .likelihood import BRACES_BASIC, BRACES_MATCHED, AdjustmentFactor, coverage_braces
from .model import ModelFit, SmallAreaDataset, eblups, fit_model
from .mse import MseComponents, c_star_lower_bound, mse_components_all


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Method(str, enum.Enum):
    DIRECT = "direct"
    COX_RE = "cox"
    T_RE = "t"
    CT_RE = "ct"
    NAS0 = "nas0"
    C_VARIANT = "c"
    NAS = "nas"
    REMARK1 = "remark1"

    @classmethod
    def parse(cls, text: str) -> "Method":
        key = text.strip().lower().replace("-", "_").replace(".", "_")
        aliases = {
            "cox_re": "cox", "t_re": "t", "traditional": "t", "ct_re": "ct",
            "c_variant": "c", "direct": "direct",
        }
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown interval method {text!r}") from None


class Branch(str, enum.Enum):
    NAS0 = "nas0"
    C = "c"


@dataclass(frozen=True)
class NominalLevel:
    """Nominal coverage ``1 - alpha`` and its two-sided normal quantile ``z``."""

    alpha: float = 0.05
    z: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "z", float(stats.norm.isf(self.alpha / 2.0)))


@dataclass(frozen=True)
class IntervalResult:
    area_id: str
    method: Method
    center: float
    half_width: float
    A_used: float | None
    q_used: float
    branch: Branch | None = None
    calibrated: bool = True

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    @property
    def length(self) -> float:
        return 2.0 * self.half_width

    def contains(self, theta: float) -> bool:
        return self.lower <= theta <= self.upper


def _as_fit(dataset: SmallAreaDataset, fit: VarianceEstimate | ModelFit) -> ModelFit:
    if isinstance(fit, ModelFit):
        return fit
    return fit_model(dataset, fit.A_hat, fit.method)


def _comps(dataset, A, i) -> MseComponents:
    c = mse_components_all(dataset, A)
    return MseComponents(float(c.g1[i]), float(c.g2[i]), float(c.g3[i]))


def _center(dataset, fit: ModelFit, i) -> float:
    b = dataset.D[i] / (fit.A_hat + dataset.D[i])
    return float((1.0 - b) * dataset.y[i] + b * (dataset.X[i] @ fit.beta_hat))


def _result(dataset, i, method, center, q, s2, A, branch=None, calibrated=True):
    return IntervalResult(
        dataset.area_ids[i], method, float(center), float(q * math.sqrt(s2)), A, float(q), branch, calibrated
    )


def direct_interval(dataset: SmallAreaDataset, i: int, level: NominalLevel) -> IntervalResult:
    return _result(dataset, i, Method.DIRECT, dataset.y[i], level.z, dataset.D[i], None)


def cox_interval(dataset, fit, i: int, level: NominalLevel, comps: MseComponents | None = None) -> IntervalResult:
    """EBLUP +/- z sqrt(g1) at the (truncated) REML estimate."""
    fit = _as_fit(dataset, fit)
    comps = comps or _comps(dataset, fit.A_hat, i)
    return _result(dataset, i, Method.COX_RE, _center(dataset, fit, i), level.z, comps.g1, fit.A_hat)


def traditional_interval(dataset, fit, i: int, level: NominalLevel, comps: MseComponents | None = None) -> IntervalResult:
    """EBLUP +/- z sqrt(g1 + g2 + 2 g3) at the REML estimate."""
    fit = _as_fit(dataset, fit)
    comps = comps or _comps(dataset, fit.A_hat, i)
    return _result(dataset, i, Method.T_RE, _center(dataset, fit, i), level.z, comps.traditional, fit.A_hat)


def ct_quantile(
    g1: float, g3: float, D_i: float, A: float, level: NominalLevel, form: str = BRACES_BASIC
) -> tuple[float, bool]:
    """Calibrated percentile ``q*`` for the traditional interval.

    Solves ``2 Phi(q) - 1 + q phi(q) (g3/g1) K = 1 - alpha`` on
    ``[z/4, 4z]``, where ``K`` is the coverage-expansion bracket for REML
    (zero log-factor derivative) with ``c* = 2``.  Returns ``(z, False)``
    when the equation has no root in the search interval.
    """
    z = level.z
    K = (g3 / g1) * coverage_braces(A, D_i, 0.0, 2.0, z, form)
    target = 1.0 - level.alpha

    def f(q):
        # 2 Phi(q) - 1 = erf(q / sqrt 2)
        return math.erf(q * _INV_SQRT2) + q * _INV_SQRT_2PI * math.exp(-0.5 * q * q) * K - target

    lo, hi = z / 4.0, 4.0 * z
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo, True
    if fhi == 0.0:
        return hi, True
    if (flo < 0.0) == (fhi < 0.0):
        return z, False
    return float(optimize.brentq(f, lo, hi, xtol=1e-12)), True


def ct_interval(
    dataset, fit, i: int, level: NominalLevel, comps: MseComponents | None = None, form: str = BRACES_BASIC
) -> IntervalResult:
    """EBLUP +/- q* sqrt(g1 + g2 + 2 g3) with ``q*`` from :func:`ct_quantile`."""
    fit = _as_fit(dataset, fit)
    if fit.A_hat <= 0:
        raise ValueError("CT calibration needs a positive variance estimate")
    comps = comps or _comps(dataset, fit.A_hat, i)
    q, ok = ct_quantile(comps.g1, comps.g3, float(dataset.D[i]), fit.A_hat, level, form)
    return _result(dataset, i, Method.CT_RE, _center(dataset, fit, i), q, comps.traditional, fit.A_hat, calibrated=ok)


def nas_c_star(level: NominalLevel) -> float:
    """``(7 - z^2) / 4``."""
    return (7.0 - level.z ** 2) / 4.0


def nas0_interval(dataset, A_nas, i: int, level: NominalLevel, comps: MseComponents | None = None) -> IntervalResult:
    """EBLUP +/- z sqrt(g1 + g2 + (7 - z^2)/4 g3) at the NAS estimate."""
    fit = _as_fit(dataset, A_nas)
    comps = comps or _comps(dataset, fit.A_hat, i)
    c = nas_c_star(level)
    s2 = comps.measure(c)
    if c < 0 and (c <= c_star_lower_bound(dataset, fit.A_hat, i) or s2 <= 0):
        raise AdmissibilityError(f"c* = {c:.4g} is inadmissible for area {i} at z = {level.z:.4g}")
    return _result(dataset, i, Method.NAS0, _center(dataset, fit, i), level.z, s2, fit.A_hat)


def c_variant_estimate(dataset, i: int, level: NominalLevel, cfg: SearchConfig | None = None) -> VarianceEstimate:
    return estimate_variance(dataset, AdjustmentFactor.c_variant(level.z, dataset, i), cfg)


def c_variant_interval(
    dataset, i: int, level: NominalLevel, cfg: SearchConfig | None = None, estimate=None
) -> IntervalResult:
    """EBLUP +/- z sqrt(g1 + g2) at the area-specific adjusted estimate."""
    fit = _as_fit(dataset, estimate if estimate is not None else c_variant_estimate(dataset, i, level, cfg))
    comps = _comps(dataset, fit.A_hat, i)
    return _result(dataset, i, Method.C_VARIANT, _center(dataset, fit, i), level.z, comps.blup_mse, fit.A_hat)


def nas_interval(
    dataset,
    i: int,
    level: NominalLevel,
    cfg: SearchConfig | None = None,
    nas=None,
    c_estimate=None,
) -> IntervalResult:
    """NAS0 where its uncertainty measure is below ``D_i``, else the area-specific interval.

    ``nas`` may carry a precomputed NAS estimate (one optimization per
    dataset); ``c_estimate`` likewise for the fallback branch.
    """
    if nas is None:
        nas = estimate_variance(dataset, AdjustmentFactor.nas(level.z), cfg)
    fit = _as_fit(dataset, nas)
    comps = _comps(dataset, fit.A_hat, i)
    if comps.measure(nas_c_star(level)) < dataset.D[i]:
        r = nas0_interval(dataset, fit, i, level, comps)
        branch = Branch.NAS0
    else:
        r = c_variant_interval(dataset, i, level, cfg, c_estimate)
        branch = Branch.C
    return IntervalResult(r.area_id, Method.NAS, r.center, r.half_width, r.A_used, r.q_used, branch)


def remark1_interval(dataset, i: int, level: NominalLevel, cfg: SearchConfig | None = None, estimate=None) -> IntervalResult:
    """``A^(1/4)``-adjusted fit with ``c* = 7/4 + z^2 D_i / (4 A)``."""
    if estimate is None:
        estimate = estimate_variance(dataset, AdjustmentFactor.remark1(), cfg)
    fit = _as_fit(dataset, estimate)
    comps = _comps(dataset, fit.A_hat, i)
    c = 1.75 + level.z ** 2 * dataset.D[i] / (4.0 * fit.A_hat)
    return _result(dataset, i, Method.REMARK1, _center(dataset, fit, i), level.z, comps.measure(c), fit.A_hat)


def coverage_expansion_diagnostic(
    dataset: SmallAreaDataset,
    factor: AdjustmentFactor,
    A: float,
    i: int,
    c_star: float,
    level: NominalLevel,
    form: str = BRACES_MATCHED,
) -> float:
    """Second-order predicted coverage ``1 - alpha + z phi(z) g3/g1 * K``.

    ``K`` is :func:`fhci.likelihood.coverage_braces` in the requested form.
    """
    if A <= 0:
        raise ValueError("A must be positive")
    comps = _comps(dataset, A, i)
    z = level.z
    K = coverage_braces(A, float(dataset.D[i]), factor.log_deriv(A), c_star, z, form)
    return 1.0 - level.alpha + z * stats.norm.pdf(z) * comps.g3 / comps.g1 * K


class IntervalCalculator:
    """Builds many intervals for one dataset, fitting each estimator once.

    The NAS estimate is computed at most once per dataset and shared by all
    areas; area-specific fits are cached by ``D_i`` since the factor depends
    on the area only through it.
    """

    def __init__(
        self,
        dataset: SmallAreaDataset,
        level: NominalLevel | None = None,
        cfg: SearchConfig | None = None,
        ct_form: str = BRACES_BASIC,
        warn: bool = True,
    ):
        self.dataset = dataset
        self.level = level or NominalLevel()
        self.cfg = cfg or DEFAULT_SEARCH
        self.ct_form = ct_form
        self.warn = warn
        self._est: dict[object, VarianceEstimate] = {}
        self._fits: dict[object, ModelFit] = {}
        self._comps: dict[float, MseComponents] = {}

    def estimate(self, key) -> VarianceEstimate:
        """``key`` is ``"reml"``, ``"nas"``, ``"remark1"`` or ``("c", D_i)``."""
        if key not in self._est:
            ds, z = self.dataset, self.level.z
            if key == "reml":
                factor = AdjustmentFactor.none()
            elif key == "nas":
                factor = AdjustmentFactor.nas(z)
            elif key == "remark1":
                factor = AdjustmentFactor.remark1()
            else:
                i = int(next(j for j in range(ds.m) if ds.D[j] == key[1]))
                factor = AdjustmentFactor.c_variant(z, ds, i)
            self._est[key] = estimate_variance(ds, factor, self.cfg, warn=self.warn)
        return self._est[key]

    def fit(self, key) -> ModelFit:
        if key not in self._fits:
            self._fits[key] = _as_fit(self.dataset, self.estimate(key))
        return self._fits[key]

    def components(self, A: float, i: int) -> MseComponents:
        if A not in self._comps:
            self._comps[A] = mse_components_all(self.dataset, A)
        c = self._comps[A]
        return MseComponents(float(c.g1[i]), float(c.g2[i]), float(c.g3[i]))

    def eblups(self, key):
        return eblups(self.dataset, self.fit(key))

    def interval(self, method: Method | str, i: int) -> IntervalResult:
        method = Method.parse(method) if isinstance(method, str) else method
        ds, lv = self.dataset, self.level
        if method is Method.DIRECT:
            return direct_interval(ds, i, lv)
        if method in (Method.COX_RE, Method.T_RE, Method.CT_RE):
            fit = self.fit("reml")
            comps = self.components(fit.A_hat, i)
            if method is Method.COX_RE:
                return cox_interval(ds, fit, i, lv, comps)
            if method is Method.T_RE:
                return traditional_interval(ds, fit, i, lv, comps)
            return ct_interval(ds, fit, i, lv, comps, self.ct_form)
        if method is Method.NAS0:
            fit = self.fit("nas")
            return nas0_interval(ds, fit, i, lv, self.components(fit.A_hat, i))
        c_key = ("c", float(ds.D[i]))
        if method is Method.C_VARIANT:
            return c_variant_interval(ds, i, lv, self.cfg, self.fit(c_key))
        if method is Method.NAS:
            fit = self.fit("nas")
            comps = self.components(fit.A_hat, i)
            if comps.measure(nas_c_star(lv)) < ds.D[i]:
                r = nas0_interval(ds, fit, i, lv, comps)
                branch = Branch.NAS0
            else:
                r = c_variant_interval(ds, i, lv, self.cfg, self.fit(c_key))
                branch = Branch.C
            return IntervalResult(r.area_id, Method.NAS, r.center, r.half_width, r.A_used, r.q_used, branch)
        if method is Method.REMARK1:
            return remark1_interval(ds, i, lv, self.cfg, self.fit("remark1"))
        raise ValueError(f"unhandled method {method}")

    def intervals(
        self, methods: Sequence[Method | str], areas: Iterable[int] | None = None
    ) -> list[IntervalResult]:
        areas = range(self.dataset.m) if areas is None else list(areas)
        return [self.interval(meth, i) for meth in methods for i in areas]
