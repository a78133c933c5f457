"""MSE components of the EBLUP and the uncertainty measures built from them.

    g1 = A D / (A + D)
    g2 = B^2 x'(X'V^-1X)^-1 x
    g3 = 2 B^2 / ((A + D) tr V^-2)

with ``B = D / (A + D)``.  Functions taking an area index return floats;
the ``*_all`` variants return arrays over areas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityError
from .model import SmallAreaDataset, gls_quad_forms


@dataclass(frozen=True)
class MseComponents:
    g1: float | np.ndarray
    g2: float | np.ndarray
    g3: float | np.ndarray

    @property
    def blup_mse(self):
        """``g1 + g2``."""
        return self.g1 + self.g2

    @property
    def traditional(self):
        """Second-order unbiased MSE estimate ``g1 + g2 + 2 g3``."""
        return self.g1 + self.g2 + 2.0 * self.g3

    def measure(self, c_star):
        return self.g1 + self.g2 + c_star * self.g3


def trace_v_inv_sq(dataset: SmallAreaDataset, A: float) -> float:
    return float(np.sum((A + dataset.D) ** -2.0))


def mse_components_all(dataset: SmallAreaDataset, A: float) -> MseComponents:
    if A < 0:
        raise ValueError("A must be nonnegative")
    D = dataset.D
    v = A + D
    B = D / v
    k = gls_quad_forms(dataset, A)
    tr = float(np.sum(v ** -2.0))
    return MseComponents(A * D / v, B * B * k, 2.0 * B * B / (v * tr))


def mse_components(dataset: SmallAreaDataset, A: float, i: int) -> MseComponents:
    c = mse_components_all(dataset, A)
    return MseComponents(float(c.g1[i]), float(c.g2[i]), float(c.g3[i]))


def c_star_lower_bound_all(dataset: SmallAreaDataset, A: float) -> np.ndarray:
    """Smallest ``c*`` (exclusive) keeping ``g1 + g2 + c* g3 > 0``.

    ``-(A + D)^2 tr(V^-2) / (2 D) * (A + D/(A + D) * x'(X'V^-1X)^-1 x)``
    """
    D = dataset.D
    v = A + D
    k = gls_quad_forms(dataset, A)
    tr = float(np.sum(v ** -2.0))
    return -(v * v) * tr / (2.0 * D) * (A + D / v * k)


def c_star_lower_bound(dataset: SmallAreaDataset, A: float, i: int) -> float:
    return float(c_star_lower_bound_all(dataset, A)[i])


def uncertainty_measure(dataset: SmallAreaDataset, A: float, i: int, c_star: float) -> float:
    """``s_i^2 = g1 + g2 + c* g3``; rejects ``c*`` outside the admissible class."""
    bound = c_star_lower_bound(dataset, A, i)
    s2 = mse_components(dataset, A, i).measure(c_star)
    if c_star <= bound or not s2 > 0:
        raise AdmissibilityError(
            f"c*={c_star:.6g} is not above the admissible bound {bound:.6g} for area {i} (s^2={s2:.3g})"
        )
    return float(s2)
