"""Mean-curve estimators and their plug-in asymptotic covariances.

Three estimators are provided:

* outcome regression (OR): average the fitted curves ``B_hat' x_i`` over all
  units, observed or not;
* double robust (DR): the OR estimate plus an inverse-probability-weighted
  average of the observed residual curves;
* complete case (CC): the plain mean of the observed curves.

Every returned :class:`~fnmiss.model.MeanEstimate` carries ``C_hat``, an
estimate of the covariance of ``sqrt(n) * (mu_hat - mu)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from fnmiss.exceptions import InsufficientObserved, SingularPi
from fnmiss.model import (
    CovariateMoments,
    Dataset,
    MeanEstimate,
    _frozen,
    _sym,
    covariate_moments,
)
from fnmiss.nuisance import OutcomeModel, PropensityModel, predict, propensities

__all__ = [
    "DRWeights",
    "estimate_or",
    "cov_or",
    "dr_weights",
    "estimate_dr",
    "cov_dr",
    "estimate_cc",
]


@dataclass(frozen=True, eq=False)
class DRWeights:
    """Inverse-probability weights ``w_i = Z_i / tau_i`` and the mean of ``1 / tau_i``."""

    w: np.ndarray
    mean_inv_tau: float


def cov_or(ds: Dataset, om: OutcomeModel, cm: Optional[CovariateMoments] = None) -> np.ndarray:
    """Plug-in covariance ``B' Sigma_x B + (mu_x' Pi^-1 mu_x) Sigma_eps``.

    The quadratic form uses the covariates kept by the outcome model, which is
    the design the regression was actually fitted on.
    """
    if cm is None:
        cm = covariate_moments(ds)
    sub = cm.restrict(om.kept_columns)
    try:
        if np.linalg.cond(sub.Pi) > 1e12:
            raise np.linalg.LinAlgError
        quad = float(sub.mu_x @ np.linalg.solve(sub.Pi, sub.mu_x))
    except np.linalg.LinAlgError as exc:
        raise SingularPi("observed second-moment matrix is singular") from exc
    B = om.B_hat
    C = B.T @ cm.Sigma_x @ B + quad * om.Sigma_eps_hat
    return _sym(C)


def estimate_or(
    ds: Dataset, om: OutcomeModel, cm: Optional[CovariateMoments] = None
) -> MeanEstimate:
    mu = predict(om, ds.X).mean(axis=0)
    C = cov_or(ds, om, cm)
    return MeanEstimate(
        method="OR",
        mu_hat=_frozen(mu),
        C_hat=_frozen(C),
        n=ds.n,
        grid=ds.grid,
        info={"dropped_outcome": list(om.dropped_columns)},
    )


def dr_weights(ds: Dataset, pm: PropensityModel) -> DRWeights:
    tau = propensities(pm, ds.X)
    w = np.where(ds.observed, 1.0 / tau, 0.0)
    return DRWeights(w=_frozen(w), mean_inv_tau=float(np.mean(1.0 / tau)))


def cov_dr(
    ds: Dataset,
    om: OutcomeModel,
    pm: PropensityModel,
    cm: Optional[CovariateMoments] = None,
    weights: Optional[DRWeights] = None,
) -> np.ndarray:
    """Plug-in covariance ``B' Sigma_x B + mean(1 / tau_i) Sigma_eps``.

    This is the limit when both working models are correct; it is used as is
    under misspecification too.
    """
    if cm is None:
        cm = covariate_moments(ds)
    if weights is None:
        weights = dr_weights(ds, pm)
    B = om.B_hat
    C = B.T @ cm.Sigma_x @ B + weights.mean_inv_tau * om.Sigma_eps_hat
    return _sym(C)


def estimate_dr(
    ds: Dataset,
    om: OutcomeModel,
    pm: PropensityModel,
    cm: Optional[CovariateMoments] = None,
) -> MeanEstimate:
    weights = dr_weights(ds, pm)
    fitted = predict(om, ds.X)
    obs = ds.observed
    # only observed rows enter the correction, missing outcomes are never read
    correction = weights.w[obs] @ (ds.Y[obs] - fitted[obs])
    mu = (fitted.sum(axis=0) + correction) / ds.n
    C = cov_dr(ds, om, pm, cm, weights)
    return MeanEstimate(
        method="DR",
        mu_hat=_frozen(mu),
        C_hat=_frozen(C),
        n=ds.n,
        grid=ds.grid,
        info={
            "dropped_outcome": list(om.dropped_columns),
            "dropped_propensity": list(pm.dropped_columns),
            "mean_inv_tau": weights.mean_inv_tau,
        },
    )


def estimate_cc(ds: Dataset) -> MeanEstimate:
    """Complete-case mean and covariance.

    ``C_hat`` is the observed-row sample covariance (divisor ``n_obs - 1``)
    scaled by ``n / n_obs``, so ``C_hat / n`` is the usual squared standard
    error of a mean of ``n_obs`` curves.
    """
    obs = ds.observed
    n_obs = int(obs.sum())
    if n_obs < 2:
        raise InsufficientObserved("complete-case covariance needs two observed curves")
    Yo = ds.Y[obs]
    mu = Yo.mean(axis=0)
    R = Yo - mu
    S = R.T @ R / (n_obs - 1)
    C = _sym(S * (ds.n / n_obs))
    return MeanEstimate(
        method="CC", mu_hat=_frozen(mu), C_hat=_frozen(C), n=ds.n, grid=ds.grid, info={}
    )
