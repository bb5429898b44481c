"""Simultaneous and pointwise confidence bands for mean curves.

Simultaneous bands use a Kac-Rice bound on the probability that the
standardized estimation error leaves ``[-u, u]`` somewhere on the domain.
For a unit-variance Gaussian process ``G`` with roughness
``tau(t) = sd(G'(t))``,

    Pr(sup |G| > u) <= 2 * (Phi_bar(u) + kappa / (2 pi) * exp(-u^2 / 2)),

where ``kappa`` is the integral of ``tau``. The critical value is the ``u``
that makes the right-hand side equal to ``alpha``. A partition of the domain
gives a piecewise-constant ``u`` whose error budget is shared in proportion
to interval length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from fnmiss.exceptions import (
    BadPartition,
    DimensionMismatch,
    LevelOutOfRange,
    ZeroVarianceDiagonal,
)
from fnmiss.model import Grid, MeanEstimate, _frozen

__all__ = [
    "RoughnessProfile",
    "Band",
    "roughness",
    "kac_rice_bound",
    "critical_constant",
    "critical_fair",
    "build_scb",
    "build_pcb",
    "covers",
    "equal_partition",
]

Partition = Sequence[Tuple[float, float]]

_U_MAX = 20.0
_XTOL = 1e-12


@dataclass(frozen=True, eq=False)
class RoughnessProfile:
    """Local roughness on the grid midpoints and its integral ``kappa``."""

    tau: np.ndarray
    kappa: float
    grid: Grid


@dataclass(frozen=True, eq=False)
class Band:
    kind: str  # "SCB" or "PCB"
    alpha: float
    center: np.ndarray
    u: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n: int

    @property
    def half_width(self) -> np.ndarray:
        return self.upper - self.center


def roughness(C, grid: Grid) -> RoughnessProfile:
    """Discrete roughness of the standardized process with covariance ``C``.

    With neighbour correlation ``rho_j`` and spacing ``d_j``, the roughness on
    ``[t_j, t_{j+1}]`` is ``sqrt(2 (1 - rho_j)) / d_j``: the standard
    deviation of the finite-difference derivative of the standardized
    process.
    """
    C = np.asarray(C, dtype=float)
    T = grid.T
    if C.shape != (T, T):
        raise DimensionMismatch(f"covariance shape {C.shape} does not match grid of {T} points")
    var = np.diag(C)
    if np.any(~(var > 0)):
        raise ZeroVarianceDiagonal("covariance diagonal must be strictly positive")
    if T == 1:
        return RoughnessProfile(tau=_frozen(np.zeros(0)), kappa=0.0, grid=grid)
    sd = np.sqrt(var)
    rho = np.diag(C, 1) / (sd[:-1] * sd[1:])
    dt = np.diff(grid.points)
    tau = np.sqrt(np.maximum(0.0, 2.0 * (1.0 - rho))) / dt
    return RoughnessProfile(tau=_frozen(tau), kappa=float(np.sum(tau * dt)), grid=grid)


def kac_rice_bound(u: float, kappa: float, entry: bool = True) -> float:
    """Two-sided Kac-Rice bound ``2 (Phi_bar(u) + kappa/(2 pi) e^{-u^2/2})``.

    ``entry=False`` drops the starting-point term, as used for every interval
    of a partition except the first.
    """
    tail = stats.norm.sf(u) if entry else 0.0
    return 2.0 * (tail + kappa / (2.0 * np.pi) * np.exp(-0.5 * u * u))


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise LevelOutOfRange(f"alpha must lie in (0, 1), got {alpha!r}")


def _solve(kappa: float, level: float, entry: bool) -> float:
    f = lambda u: kac_rice_bound(u, kappa, entry) - level  # noqa: E731
    if f(0.0) <= 0.0:
        return 0.0
    return optimize.bisect(f, 0.0, _U_MAX, xtol=_XTOL, maxiter=200)


def critical_constant(kappa: float, alpha: float = 0.05) -> float:
    """Constant critical value solving ``kac_rice_bound(u, kappa) = alpha``.

    >>> round(critical_constant(0.0, 0.05), 6)
    1.959964
    """
    _check_alpha(alpha)
    if not (kappa >= 0.0) or not np.isfinite(kappa):
        raise ValueError(f"kappa must be finite and non-negative, got {kappa!r}")
    return _solve(kappa, alpha, entry=True)


def equal_partition(k: int) -> list:
    """``k`` equal-length intervals covering [0, 1]."""
    if k < 1:
        raise BadPartition("need at least one interval")
    edges = np.linspace(0.0, 1.0, k + 1)
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


def _check_partition(partition: Partition) -> np.ndarray:
    edges = np.asarray(partition, dtype=float)
    if edges.ndim != 2 or edges.shape[1] != 2 or edges.shape[0] < 1:
        raise BadPartition("partition must be a non-empty list of (start, end) pairs")
    if not np.all(np.isfinite(edges)):
        raise BadPartition("partition bounds must be finite")
    if np.any(edges[:, 1] <= edges[:, 0]):
        raise BadPartition("every interval needs start < end")
    tol = 1e-12
    if abs(edges[0, 0]) > tol or abs(edges[-1, 1] - 1.0) > tol:
        raise BadPartition("partition must start at 0 and end at 1")
    if np.any(np.abs(edges[1:, 0] - edges[:-1, 1]) > tol):
        raise BadPartition("partition intervals must be contiguous and non-overlapping")
    return edges


def critical_fair(
    profile: RoughnessProfile, alpha: float = 0.05, partition: Optional[Partition] = None
) -> np.ndarray:
    """Piecewise-constant critical values, one level per partition interval.

    On interval ``k`` of length ``l_k`` the value ``u_k`` solves
    ``kac_rice_bound(u_k, kappa_k, entry=(k == 0)) = alpha * l_k`` where
    ``kappa_k`` integrates the roughness over the interval. Intervals after
    the first never go below the pointwise normal quantile for their budget.
    Grid point ``t`` belongs to the interval with ``start <= t < end`` (the
    last interval is closed).
    """
    _check_alpha(alpha)
    if partition is None:
        partition = [(0.0, 1.0)]
    edges = _check_partition(partition)
    pts = profile.grid.points

    # roughness mass of each grid segment, shared by overlap length
    seg_lo, seg_hi = pts[:-1], pts[1:]
    seg_mass = profile.tau * (seg_hi - seg_lo)

    u = np.empty(pts.size)
    assigned = np.zeros(pts.size, dtype=bool)
    for k, (a, b) in enumerate(edges):
        if seg_mass.size:
            overlap = np.clip(np.minimum(seg_hi, b) - np.maximum(seg_lo, a), 0.0, None)
            frac = np.divide(overlap, seg_hi - seg_lo)
            kappa_k = float(np.sum(seg_mass * frac))
        else:
            kappa_k = 0.0
        level = alpha * (b - a)
        if k == 0:
            u_k = _solve(kappa_k, level, entry=True)
        else:
            u_k = max(_solve(kappa_k, level, entry=False), stats.norm.isf(level / 2.0))
        last = k == len(edges) - 1
        member = (pts >= a) & ((pts <= b) if last else (pts < b))
        u[member] = u_k
        assigned |= member
    if not np.all(assigned):
        raise BadPartition("partition leaves grid points uncovered")
    return u


def _band(est: MeanEstimate, kind: str, alpha: float, u: np.ndarray) -> Band:
    var = np.diag(est.C_hat)
    if np.any(~(var > 0)):
        raise ZeroVarianceDiagonal("estimate covariance diagonal must be strictly positive")
    half = u * np.sqrt(var / est.n)
    center = np.asarray(est.mu_hat, dtype=float)
    return Band(
        kind=kind,
        alpha=alpha,
        center=_frozen(center),
        u=_frozen(u),
        lower=_frozen(center - half),
        upper=_frozen(center + half),
        n=est.n,
    )


def build_scb(
    est: MeanEstimate, alpha: float = 0.05, partition: Optional[Partition] = None
) -> Band:
    """Simultaneous band ``mu_hat +- u(t) sqrt(C(t, t) / n)``."""
    profile = roughness(est.C_hat, est.grid)
    u = critical_fair(profile, alpha, partition)
    return _band(est, "SCB", alpha, u)


def build_pcb(est: MeanEstimate, alpha: float = 0.05) -> Band:
    """Pointwise band with the Student-t quantile on ``n - 1`` degrees of freedom."""
    _check_alpha(alpha)
    if est.n < 2:
        raise ValueError("pointwise band needs n >= 2")
    q = stats.t.ppf(1.0 - alpha / 2.0, est.n - 1)
    return _band(est, "PCB", alpha, np.full(est.grid.T, q))


def covers(band: Band, truth) -> bool:
    """True when ``truth`` lies inside the band at every grid point."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != band.center.shape:
        raise DimensionMismatch(f"truth has shape {truth.shape}, band has {band.center.shape}")
    return bool(np.all((band.lower <= truth) & (truth <= band.upper)))
