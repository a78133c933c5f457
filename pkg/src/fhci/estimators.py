"""Estimators of the model variance ``A`` by (adjusted) residual maximum likelihood."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _core, streams
from .errors import ConvergenceError, ExistenceWarning, RankDeficiencyError
from .likelihood import AdjustmentFactor, FactorKind
from .model import SmallAreaDataset, gls_beta


@dataclass(frozen=True)
class SearchConfig:
    """Settings for the bracketed 1-D maximizer.

    ``A_max=None`` means ``100 * (max_i D_i + s^2)`` with ``s^2`` the OLS
    residual variance of ``y`` (translation invariant), resolved per dataset.  ``truncation_floor`` is applied to plain REML only.
    """

    A_max: float | None = None
    abs_tol: float = 1e-8
    max_iter: int = 200
    grid_points: int = 60
    truncation_floor: float = 0.01

    def __post_init__(self):
        if self.abs_tol <= 0:
            raise ValueError("abs_tol must be positive")
        if self.max_iter < 1 or self.grid_points < 3:
            raise ValueError("max_iter >= 1 and grid_points >= 3 required")
        if self.truncation_floor < 0:
            raise ValueError("truncation_floor must be nonnegative")
        if self.A_max is not None and self.A_max <= self.truncation_floor:
            raise ValueError("A_max must exceed truncation_floor")

    def a_max_for(self, dataset: SmallAreaDataset) -> float:
        if self.A_max is not None:
            return float(self.A_max)
        beta, *_ = np.linalg.lstsq(dataset.X, dataset.y, rcond=None)
        r = dataset.y - dataset.X @ beta
        s2 = float(r @ r) / max(dataset.m - dataset.p, 1)
        return max(100.0 * (float(dataset.D.max()) + s2), 10.0 * self.truncation_floor, 1e-6)


DEFAULT_SEARCH = SearchConfig()


@dataclass(frozen=True)
class VarianceEstimate:
    A_hat: float
    method: str
    converged: bool
    truncated: bool
    objective_at_opt: float
    iterations: int
    existence_ok: bool = True


def existence_holds(m: int, p: int, factor: AdjustmentFactor) -> bool:
    """Whether the adjusted likelihood vanishes as ``A -> inf``.

    The residual likelihood decays like ``A^{-(m-p)/2}``; a factor growing
    like ``A^k`` leaves a maximizer on ``(0, inf)`` when ``m > p + 2k``.
    """
    return m > p + 2.0 * (factor.log_a + factor.log_ad)


def nas_existence_holds(m: int, p: int, z: float) -> bool:
    """``m > p + (1 + z^2) / 2``."""
    return m > p + (1.0 + z * z) / 2.0


def c_variant_existence_holds(m: int, p: int) -> bool:
    """``m > p + 4``."""
    return m > p + 4


def estimate_variance(
    dataset: SmallAreaDataset,
    factor: AdjustmentFactor | None = None,
    cfg: SearchConfig | None = None,
    warn: bool = True,
) -> VarianceEstimate:
    """Maximize ``log L~(A) + log L_RE(A)`` over ``(0, A_max]``.

    Plain REML (``factor.kind == NONE``) searches ``[0, A_max]`` and is
    truncated up to ``cfg.truncation_floor`` when the maximizer falls below
    it.  Adjusted factors vanish at ``A = 0`` and are never truncated.
    """
    factor = factor or AdjustmentFactor.none()
    cfg = cfg or DEFAULT_SEARCH
    ok = existence_holds(dataset.m, dataset.p, factor)
    if not ok and warn:
        warnings.warn(
            f"existence condition fails for {factor.kind.value} with m={dataset.m}, p={dataset.p}",
            ExistenceWarning,
            stacklevel=2,
        )
    a_max = cfg.a_max_for(dataset)
    try:
        a_hat, value, it, converged, lo, hi = _core.maximize_adjusted(
            dataset.y, dataset.X, dataset.D, *factor.kernel_args(),
            a_max, cfg.grid_points, cfg.abs_tol, cfg.max_iter,
        )
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(str(exc)) from exc
    if not converged:
        raise ConvergenceError(
            f"{factor.kind.value} maximizer did not converge in {cfg.max_iter} iterations", (lo, hi)
        )
    truncated = False
    if factor.kind is FactorKind.NONE and a_hat < cfg.truncation_floor:
        a_hat = cfg.truncation_floor
        value = float(_core.adjusted_value_and_score(dataset.y, dataset.X, dataset.D, a_hat)[0])
        truncated = True
    return VarianceEstimate(float(a_hat), factor.kind.value, bool(converged), truncated, float(value), int(it), ok)


def reml(dataset: SmallAreaDataset, cfg: SearchConfig | None = None) -> VarianceEstimate:
    return estimate_variance(dataset, AdjustmentFactor.none(), cfg)


def nas_estimate(dataset: SmallAreaDataset, z: float, cfg: SearchConfig | None = None) -> VarianceEstimate:
    return estimate_variance(dataset, AdjustmentFactor.nas(z), cfg)


def balanced_nas_closed_form(dataset: SmallAreaDataset, z: float) -> float:
    """Positive root of the NAS score equation when every ``D_i = D``.

    With ``S = y'My`` (OLS residual sum of squares) the score equation is

        -2 (m - p - (1+z^2)/2) A^2 + 2 (S - (m - p - 1 - z^2) D) A + (1+z^2) D^2 = 0.

    The leading coefficient is negative and the constant positive, so the
    roots have opposite signs; the positive one is taken without cancellation.
    """
    if not dataset.is_balanced:
        raise ValueError("closed form requires equal sampling variances")
    m, p = dataset.m, dataset.p
    if not nas_existence_holds(m, p, z):
        raise ValueError("closed form requires m > p + (1 + z^2) / 2")
    D = float(dataset.D[0])
    beta, *_ = np.linalg.lstsq(dataset.X, dataset.y, rcond=None)
    r = dataset.y - dataset.X @ beta
    S = float(r @ r)
    k = 1.0 + z * z
    a = -2.0 * (m - p - k / 2.0)
    b = 2.0 * (S - (m - p - 1.0 - z * z) * D)
    c = k * D * D
    sq = math.sqrt(b * b - 4.0 * a * c)
    if b >= 0:
        q = -0.5 * (b + sq)
        return q / a
    q = -0.5 * (b - sq)
    return c / q


@dataclass(frozen=True)
class MomentDiagnostics:
    """Monte Carlo moments of ``A_hat - A`` next to their large-m predictions."""

    bias: float
    bias_se: float
    variance: float
    variance_se: float
    second_moment: float
    second_moment_se: float
    predicted_bias: float
    predicted_variance: float
    n_reps: int
    n_failed: int


def moment_diagnostics(
    dataset: SmallAreaDataset,
    factor: AdjustmentFactor,
    A_true: float,
    n_reps: int,
    seed: int,
    cfg: SearchConfig | None = None,
    threads: int = 1,
) -> MomentDiagnostics:
    """Re-estimate ``A`` on ``n_reps`` datasets simulated at ``A_true``.

    Data are drawn with the design and ``D`` of ``dataset`` and mean
    ``X beta`` where ``beta`` is the GLS fit at ``A_true`` (the estimators
    are translation invariant, so the choice does not matter).  Predictions:
    bias ``2 / tr(V^-2) * l'(A)`` and variance ``2 / tr(V^-2)``.
    """
    if n_reps < 100:
        raise ValueError("n_reps must be at least 100")
    cfg = cfg or DEFAULT_SEARCH
    mean = dataset.X @ gls_beta(dataset, A_true)
    sd_u = math.sqrt(A_true)
    sd_e = np.sqrt(dataset.D)
    m = dataset.m

    def one(r: int) -> float:
        g = streams.generator(seed, streams.MOMENTS, r)
        z = g.standard_normal((2, m))
        y = mean + sd_u * z[0] + sd_e * z[1]
        try:
            return estimate_variance(dataset.with_y(y), factor, cfg, warn=False).A_hat
        except (ConvergenceError, RankDeficiencyError):
            return math.nan

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            est = np.array(list(ex.map(one, range(n_reps))))
    else:
        est = np.array([one(r) for r in range(n_reps)])
    ok = est[np.isfinite(est)]
    n = ok.size
    dev = ok - A_true
    bias = float(dev.mean())
    var = float(ok.var(ddof=1))
    sq = dev * dev
    centered = (ok - ok.mean()) ** 2
    tr = float(np.sum((A_true + dataset.D) ** -2.0))
    return MomentDiagnostics(
        bias=bias,
        bias_se=float(ok.std(ddof=1) / math.sqrt(n)),
        variance=var,
        variance_se=float(centered.std(ddof=1) / math.sqrt(n)),
        second_moment=float(sq.mean()),
        second_moment_se=float(sq.std(ddof=1) / math.sqrt(n)),
        predicted_bias=2.0 / tr * factor.log_deriv(A_true),
        predicted_variance=2.0 / tr,
        n_reps=n_reps,
        n_failed=int(n_reps - n),
    )
