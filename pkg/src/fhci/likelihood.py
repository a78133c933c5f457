"""Residual log-likelihood of the model variance and its adjustment factors.

Everything is kept on the log scale.  The residual log-likelihood is

    -1/2 ln|X'V^-1X| - 1/2 ln|V| - 1/2 y'Py

with no ``2*pi`` constant, so it equals ``ln L_RE(A | y)`` exactly.

An adjustment factor multiplies the residual likelihood by a data-free
function of ``A``.  All factors used here have the form
``A**a * (A + shift)**b`` so they are carried as the three numbers
``(a, b, shift)`` and handed straight to the compiled kernels.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _core
from .errors import RankDeficiencyError
from .model import SmallAreaDataset


class FactorKind(str, enum.Enum):
    NONE = "none"
    NAS = "nas"
    C_VARIANT = "c_variant"
    REMARK1 = "remark1"


@dataclass(frozen=True)
class AdjustmentFactor:
    """``log L~(A) = log_a * ln A + log_ad * ln(A + shift)``.

    ``z`` is the nominal-level quantile the factor was built for (``None``
    for factors that do not depend on it).  ``area`` is set for the
    area-specific variant only.
    """

    kind: FactorKind
    log_a: float = 0.0
    log_ad: float = 0.0
    shift: float = 0.0
    z: float | None = None
    area: int | None = None

    @classmethod
    def none(cls) -> "AdjustmentFactor":
        return _NONE

    @classmethod
    def nas(cls, z: float) -> "AdjustmentFactor":
        return _nas(float(z))

    @classmethod
    def c_variant(cls, z: float, dataset: SmallAreaDataset, i: int) -> "AdjustmentFactor":
        return _c_variant(float(z), float(dataset.D[i]), int(i))

    @classmethod
    def remark1(cls) -> "AdjustmentFactor":
        return _REMARK1

    @property
    def is_adjusted(self) -> bool:
        return self.log_a != 0.0 or self.log_ad != 0.0

    def log_value(self, A: float) -> float:
        out = 0.0
        if self.log_a:
            out += self.log_a * math.log(A) if A > 0 else -math.inf
        if self.log_ad:
            out += self.log_ad * math.log(A + self.shift)
        return out

    def log_deriv(self, A: float) -> float:
        out = 0.0
        if self.log_a:
            out += self.log_a / A if A > 0 else math.inf
        if self.log_ad:
            out += self.log_ad / (A + self.shift)
        return out

    def kernel_args(self) -> tuple[float, float, float]:
        return self.log_a, self.log_ad, self.shift


_NONE = AdjustmentFactor(FactorKind.NONE)
_REMARK1 = AdjustmentFactor(FactorKind.REMARK1, log_a=0.25)


@functools.lru_cache(maxsize=64)
def _nas(z: float) -> AdjustmentFactor:
    return AdjustmentFactor(FactorKind.NAS, log_a=(1.0 + z * z) / 4.0, z=z)


@functools.lru_cache(maxsize=1024)
def _c_variant(z: float, d: float, i: int) -> AdjustmentFactor:
    return AdjustmentFactor(
        FactorKind.C_VARIANT,
        log_a=(1.0 + z * z) / 4.0,
        log_ad=(7.0 - z * z) / 4.0,
        shift=d,
        z=z,
        area=i,
    )


def _value_score(dataset: SmallAreaDataset, A: float, a=0.0, b=0.0, shift=0.0):
    if A < 0:
        raise ValueError("A must be nonnegative")
    try:
        return _core.adjusted_value_and_score(dataset.y, dataset.X, dataset.D, float(A), a, b, shift)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(str(exc)) from exc


def residual_loglik(dataset: SmallAreaDataset, A: float) -> float:
    """``ln L_RE(A | y)``; defined for ``A >= 0`` since every ``D_i > 0``."""
    return float(_value_score(dataset, A)[0])


def residual_score(dataset: SmallAreaDataset, A: float) -> float:
    """Analytic ``d/dA ln L_RE``: ``-tr(V^-1)/2 + tr(G^-1 X'V^-2 X)/2 + y'P^2y/2``."""
    return float(_value_score(dataset, A)[1])


def adjusted_profile(dataset: SmallAreaDataset, factor: AdjustmentFactor, A: float) -> float:
    """``factor.log_value(A) + residual_loglik(A)``."""
    return float(_value_score(dataset, A, *factor.kernel_args())[0])


def adjusted_score(dataset: SmallAreaDataset, factor: AdjustmentFactor, A: float) -> float:
    return float(_value_score(dataset, A, *factor.kernel_args())[1])


BRACES_BASIC = "basic"
BRACES_MATCHED = "matched"


def target_log_deriv(A: float, D_i: float, c_star: float, z: float) -> float:
    """Derivative of the log-factor that pairs with ``c_star`` for second-order coverage.

    ``(7 - z^2 - 4 c*) / (4 (A + D_i)) + (1 + z^2) / (4 A)``
    """
    return (7.0 - z * z - 4.0 * c_star) / (4.0 * (A + D_i)) + (1.0 + z * z) / (4.0 * A)


def coverage_braces(
    A: float, D_i: float, log_deriv: float, c_star: float, z: float | None = None, form: str = BRACES_BASIC
) -> float:
    """Bracketed term multiplying ``z phi(z) g3/g1`` in the coverage expansion.

    ``form="basic"``:   ``(A + D_i) l' + c* - 2 D_i / A``
    ``form="matched"``: ``(A + D_i) l' + c* - 2 - (1 + z^2) D_i / (4 A)``

    The matched form vanishes exactly for every (factor, c*) pairing derived
    from :func:`target_log_deriv` (REML with ``c* = 2 + (1+z^2) D_i/(4A)``,
    the area-specific variant with ``c* = 0``, NAS with ``c* = (7 - z^2)/4``,
    the ``A^(1/4)`` factor with ``c* = 7/4 + z^2 D_i/(4A)``).  The basic form
    does not; it is kept because the CT calibration is defined on it.
    """
    if A <= 0:
        raise ValueError("A must be positive")
    if form == BRACES_BASIC:
        return (A + D_i) * log_deriv + c_star - 2.0 * D_i / A
    if form == BRACES_MATCHED:
        if z is None:
            raise ValueError("matched form needs z")
        return (A + D_i) * log_deriv + c_star - 2.0 - (1.0 + z * z) * D_i / (4.0 * A)
    raise ValueError(f"unknown form {form!r}")


class ScoreResidual(NamedTuple):
    basic: float
    matched: float
    factor_mismatch: float


def score_equation_residual(
    dataset: SmallAreaDataset,
    factor: AdjustmentFactor,
    A: float,
    c_star: float,
    i: int,
    z: float | None = None,
) -> ScoreResidual:
    """How far a (factor, c*) pairing is from second-order correctness at ``A``.

    ``basic`` and ``matched`` are the two forms of :func:`coverage_braces`;
    ``factor_mismatch`` is ``l'(A) - target_log_deriv(A, D_i, c*, z)``, which
    is ``matched / (A + D_i)``.
    """
    if A <= 0:
        raise ValueError("A must be positive (2 D_i / A is singular at 0)")
    if z is None:
        z = factor.z
    if z is None:
        raise ValueError("z is required for factors built without a nominal level")
    d = float(dataset.D[i])
    lp = factor.log_deriv(A)
    return ScoreResidual(
        coverage_braces(A, d, lp, c_star, z, BRACES_BASIC),
        coverage_braces(A, d, lp, c_star, z, BRACES_MATCHED),
        lp - target_log_deriv(A, d, c_star, z),
    )
