"""Fay-Herriot area-level model: data container, design algebra and predictors.

Level 1: ``y_i | theta_i ~ N(theta_i, D_i)`` with ``D_i`` known.
Level 2: ``theta_i ~ N(x_i' beta, A)``.

Only the diagonal of ``V = diag(A + D_i)`` is ever stored.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _core
from .errors import RankDeficiencyError


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


def _dependent_columns(X: np.ndarray) -> list[int]:
    """Columns that are linear combinations of the columns before them."""
    bad = []
    kept: list[int] = []
    for j in range(X.shape[1]):
        cols = kept + [j]
        if np.linalg.matrix_rank(X[:, cols]) < len(cols):
            bad.append(j)
        else:
            kept.append(j)
    return bad


@dataclass(frozen=True, eq=False)
class SmallAreaDataset:
    """Direct estimates ``y``, known sampling variances ``D`` and covariates ``X``.

    Arrays are copied on construction and frozen.  Area ids are opaque labels;
    all numerics use positional indices.
    """

    y: np.ndarray
    D: np.ndarray
    X: np.ndarray
    area_ids: tuple[str, ...] = ()

    def __post_init__(self):
        y = _readonly(np.asarray(self.y, dtype=float).reshape(-1))
        D = _readonly(np.asarray(self.D, dtype=float).reshape(-1))
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X = _readonly(X)
        m = y.size
        if m < 1:
            raise ValueError("dataset needs at least one area")
        if D.size != m or X.shape[0] != m:
            raise ValueError(f"length mismatch: y has {m}, D has {D.size}, X has {X.shape[0]} rows")
        if X.shape[1] < 1:
            raise ValueError("X needs at least one column")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(D)) and np.all(np.isfinite(X))):
            raise ValueError("non-finite values in dataset")
        bad_d = np.flatnonzero(D <= 0)
        if bad_d.size:
            raise ValueError(f"sampling variances must be positive; offending areas {bad_d.tolist()}")
        if X.shape[1] > m or np.linalg.matrix_rank(X) < X.shape[1]:
            cols = _dependent_columns(X)
            raise RankDeficiencyError(f"X is rank deficient; dependent columns {cols}", cols)
        ids = tuple(str(a) for a in self.area_ids) if len(self.area_ids) else tuple(str(i + 1) for i in range(m))
        if len(ids) != m:
            raise ValueError("area_ids length must equal the number of areas")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "area_ids", ids)

    @property
    def m(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def is_balanced(self) -> bool:
        return bool(np.all(self.D == self.D[0]))

    def with_y(self, y) -> "SmallAreaDataset":
        """Same design and variances, new direct estimates (no re-validation of X)."""
        y = _readonly(np.asarray(y, dtype=float).reshape(-1))
        if y.size != self.m:
            raise ValueError("y length does not match the design")
        new = object.__new__(SmallAreaDataset)
        object.__setattr__(new, "y", y)
        object.__setattr__(new, "D", self.D)
        object.__setattr__(new, "X", self.X)
        object.__setattr__(new, "area_ids", self.area_ids)
        return new

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[str, float, float, Sequence[float]]]) -> "SmallAreaDataset":
        """Build from ``(area_id, y_i, D_i, x_i)`` tuples."""
        ids, ys, ds, xs = zip(*rows)
        return cls(np.array(ys), np.array(ds), np.array(xs, dtype=float), tuple(ids))


@dataclass(frozen=True)
class ModelFit:
    """Variance estimate plus the GLS coefficients evaluated at it."""

    A_hat: float
    beta_hat: np.ndarray
    method: str


def shrinkage(dataset: SmallAreaDataset, A: float) -> np.ndarray:
    """Shrinkage factors ``B_i = D_i / (A + D_i)``."""
    return dataset.D / (A + dataset.D)


def leverages(dataset: SmallAreaDataset) -> np.ndarray:
    """Diagonal of the OLS hat matrix, ``x_i'(X'X)^-1 x_i``."""
    X = dataset.X
    Q, _ = np.linalg.qr(X)
    return np.einsum("ij,ij->i", Q, Q)


def leverage(dataset: SmallAreaDataset, i: int) -> float:
    return float(leverages(dataset)[i])


def yl_condition_holds(dataset: SmallAreaDataset, i: int, h: float | None = None) -> bool:
    """Leverage condition ``m > (4 + p) / (1 - h_i)``; false when ``h_i = 1``."""
    if h is None:
        h = leverage(dataset, i)
    if h >= 1.0:
        return False
    return dataset.m > (4 + dataset.p) / (1.0 - h)


def gls_beta(dataset: SmallAreaDataset, A: float) -> np.ndarray:
    """Weighted least squares ``(X'V^-1X)^-1 X'V^-1 y`` with ``V = diag(A + D)``."""
    if A < 0:
        raise ValueError("A must be nonnegative")
    w = 1.0 / (A + dataset.D)
    Xw = dataset.X * w[:, None]
    G = Xw.T @ dataset.X
    try:
        c = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("X'V^-1X is numerically singular") from exc
    rhs = Xw.T @ dataset.y
    return np.linalg.solve(c.T, np.linalg.solve(c, rhs))


def fit_model(dataset: SmallAreaDataset, A_hat: float, method: str = "") -> ModelFit:
    return ModelFit(float(A_hat), gls_beta(dataset, A_hat), method)


def eblups(dataset: SmallAreaDataset, fit: ModelFit) -> np.ndarray:
    """``(1 - B_i) y_i + B_i x_i' beta_hat`` for all areas."""
    B = shrinkage(dataset, fit.A_hat)
    return (1.0 - B) * dataset.y + B * (dataset.X @ fit.beta_hat)


def eblup(dataset: SmallAreaDataset, fit: ModelFit, i: int) -> float:
    B = dataset.D[i] / (fit.A_hat + dataset.D[i])
    return float((1.0 - B) * dataset.y[i] + B * (dataset.X[i] @ fit.beta_hat))


def gls_quad_forms(dataset: SmallAreaDataset, A: float) -> np.ndarray:
    """``x_i'(X'V^-1X)^-1 x_i`` for every area."""
    return _core.quad_forms(dataset.X, dataset.D, float(A))
