"""Core data containers and covariate moments.

All containers are frozen dataclasses holding read-only numpy arrays, so a
validated :class:`Dataset` can be shared freely between estimators and
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fnmiss.exceptions import (
    DimensionMismatch,
    NonBinaryIndicator,
    NonFiniteCovariate,
    NonFiniteObservedOutcome,
    TooFewObserved,
    ValidationError,
)

__all__ = [
    "Grid",
    "Dataset",
    "CovariateMoments",
    "MeanEstimate",
    "validate_dataset",
    "covariate_moments",
]


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid:
    """Evaluation points shared by every curve, strictly increasing in [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 1:
            raise ValidationError("grid points must be a non-empty 1-d array")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("grid points must be finite")
        if pts[0] < 0.0 or pts[-1] > 1.0:
            raise ValidationError("grid points must lie in [0, 1]")
        if np.any(np.diff(pts) <= 0):
            raise ValidationError("grid points must be strictly increasing")
        object.__setattr__(self, "points", _frozen(pts))

    @classmethod
    def equidistant(cls, T: int) -> "Grid":
        """``T`` points ``j / (T - 1)``, both endpoints included."""
        if T < 1:
            raise ValidationError("T must be positive")
        if T == 1:
            return cls(np.array([0.0]))
        return cls(np.arange(T) / (T - 1))

    @property
    def T(self) -> int:
        return self.points.size

    def __len__(self) -> int:
        return self.T

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates ``X`` (n x p), indicators ``Z`` (n,) and outcomes ``Y`` (n x T).

    Rows of ``Y`` with ``Z == 0`` are not available; after
    :func:`validate_dataset` they hold NaN. Build instances with
    :meth:`from_arrays` unless the arrays are already known to be valid.
    """

    X: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    grid: Grid

    @classmethod
    def from_arrays(cls, X, Z, Y, grid: Optional[Grid] = None) -> "Dataset":
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if grid is None:
            grid = Grid.equidistant(Y.shape[1])
        raw = cls(X=np.asarray(X), Z=np.asarray(Z), Y=Y, grid=grid)
        return validate_dataset(raw)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def observed(self) -> np.ndarray:
        """Boolean mask of units whose outcome curve is available."""
        return self.Z == 1

    @property
    def n_obs(self) -> int:
        return int(np.count_nonzero(self.Z))


def validate_dataset(raw: Dataset) -> Dataset:
    """Check a candidate dataset and return a normalized, read-only copy.

    Outcome rows of missing units are overwritten with NaN so that no
    estimator can accidentally depend on them.

    Raises
    ------
    DimensionMismatch
        Row counts of ``X``, ``Z`` and ``Y`` differ, or ``Y`` does not match
        the grid.
    NonBinaryIndicator
        ``Z`` holds a value other than 0 or 1.
    NonFiniteObservedOutcome
        An observed outcome row contains NaN or inf.
    TooFewObserved
        Fewer observed units than covariates.
    """
    X = np.asarray(raw.X, dtype=float)
    Y = np.asarray(raw.Y, dtype=float)
    Zin = np.asarray(raw.Z)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or Y.ndim != 2 or Zin.ndim != 1:
        raise DimensionMismatch("expected X (n, p), Z (n,), Y (n, T)")
    n = X.shape[0]
    if Zin.shape[0] != n or Y.shape[0] != n:
        raise DimensionMismatch(
            f"row counts differ: X has {n}, Z has {Zin.shape[0]}, Y has {Y.shape[0]}"
        )
    if Y.shape[1] != raw.grid.T:
        raise DimensionMismatch(f"Y has {Y.shape[1]} columns but the grid has {raw.grid.T} points")

    Zf = np.asarray(Zin, dtype=float)
    bad = ~np.isin(Zf, (0.0, 1.0))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NonBinaryIndicator(f"Z[{i}] = {Zin[i]!r} is not 0 or 1")
    Z = Zf.astype(np.int8)

    if not np.all(np.isfinite(X)):
        raise NonFiniteCovariate("X contains non-finite entries")

    obs = Z == 1
    finite_rows = np.all(np.isfinite(Y), axis=1)
    bad_rows = np.flatnonzero(obs & ~finite_rows)
    if bad_rows.size:
        raise NonFiniteObservedOutcome(f"observed outcome row {int(bad_rows[0])} is not finite")

    p = X.shape[1]
    if obs.sum() < p:
        raise TooFewObserved(f"{int(obs.sum())} observed units for {p} covariates")

    Y = Y.copy()
    Y[~obs] = np.nan
    return Dataset(X=_frozen(X), Z=_frozen(Z, np.int8), Y=_frozen(Y), grid=raw.grid)


@dataclass(frozen=True, eq=False)
class CovariateMoments:
    """Sample moments of the covariates, all with divisor ``n``.

    ``Pi`` is the observed second-moment matrix ``n^-1 sum Z_i x_i x_i'``.
    """

    mu_x: np.ndarray
    Sigma_x: np.ndarray
    Pi: np.ndarray

    def restrict(self, keep) -> "CovariateMoments":
        keep = np.asarray(keep, dtype=int)
        return CovariateMoments(
            mu_x=self.mu_x[keep],
            Sigma_x=self.Sigma_x[np.ix_(keep, keep)],
            Pi=self.Pi[np.ix_(keep, keep)],
        )


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def covariate_moments(ds: Dataset) -> CovariateMoments:
    X = ds.X
    n = ds.n
    mu = X.mean(axis=0)
    Xc = X - mu
    Sigma = _sym(Xc.T @ Xc / n)
    Xo = X[ds.observed]
    Pi = _sym(Xo.T @ Xo / n)
    return CovariateMoments(mu_x=_frozen(mu), Sigma_x=_frozen(Sigma), Pi=_frozen(Pi))


@dataclass(frozen=True, eq=False)
class MeanEstimate:
    """An estimated mean curve with its plug-in asymptotic covariance.

    ``C_hat`` estimates the covariance of ``sqrt(n) * (mu_hat - mu)``, so the
    standard error at grid point ``j`` is ``sqrt(C_hat[j, j] / n)``.
    """

    method: str
    mu_hat: np.ndarray
    C_hat: np.ndarray
    n: int
    grid: Grid
    info: dict = field(default_factory=dict, compare=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.C_hat) / self.n)
