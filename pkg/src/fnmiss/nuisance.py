"""Working models: multivariate OLS for outcomes, logistic MLE for missingness.

Both fitters accept a set of covariate columns to leave out. Omitted columns
still appear in the fitted coefficients as zeros, so that every fitted model
has the full ``p`` rows and can be applied to the original design matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy.special import expit

from fnmiss.exceptions import (
    AllSameIndicator,
    DimensionMismatch,
    InsufficientObserved,
    Separation,
    SingularDesign,
)
from fnmiss.model import Dataset, _frozen, _sym

__all__ = [
    "OutcomeModel",
    "PropensityModel",
    "fit_ols",
    "predict",
    "fit_logistic",
    "inverse_logit",
    "propensities",
    "PROPENSITY_CLIP",
]

PROPENSITY_CLIP = 1e-6
MAX_CONDITION = 1e12
# |eta| beyond this puts the fitted probability within one ulp of 0 or 1
_ETA_SATURATED = 36.0


def _kept_columns(p: int, drop: Iterable[int]) -> Tuple[np.ndarray, Tuple[int, ...]]:
    dropped = tuple(sorted({int(j) for j in drop}))
    if any(j < 0 or j >= p for j in dropped):
        raise DimensionMismatch(f"dropped column indices {dropped} out of range for p={p}")
    keep = np.array([j for j in range(p) if j not in dropped], dtype=int)
    if keep.size == 0:
        raise DimensionMismatch("cannot drop every covariate")
    return keep, dropped


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    """Fitted multivariate regression ``y_i = B' x_i + eps_i``.

    ``B_hat`` is p x T with zero rows at ``dropped_columns``;
    ``Sigma_eps_hat`` is the T x T residual covariance.
    """

    B_hat: np.ndarray
    Sigma_eps_hat: np.ndarray
    n_obs: int
    dropped_columns: Tuple[int, ...] = ()

    @property
    def kept_columns(self) -> np.ndarray:
        return np.array(
            [j for j in range(self.B_hat.shape[0]) if j not in self.dropped_columns], dtype=int
        )


@dataclass(frozen=True, eq=False)
class PropensityModel:
    """Fitted logistic model for ``Pr[Z = 1 | x]``.

    ``constant``, when set, replaces the logistic fit by a fixed probability
    (used when every unit is observed and the MLE sits on the boundary).
    """

    gamma_hat: np.ndarray
    converged: bool
    iterations: int
    score_norm: float
    dropped_columns: Tuple[int, ...] = ()
    constant: Optional[float] = None

    @classmethod
    def fully_observed(cls, p: int) -> "PropensityModel":
        """Boundary model ``tau = 1 - PROPENSITY_CLIP`` for data without missing rows."""
        return cls(
            gamma_hat=_frozen(np.zeros(p)),
            converged=True,
            iterations=0,
            score_norm=0.0,
            constant=1.0 - PROPENSITY_CLIP,
        )


def fit_ols(ds: Dataset, drop: Iterable[int] = ()) -> OutcomeModel:
    """Least squares fit of the observed outcome curves on the kept covariates.

    The residual covariance uses the degrees-of-freedom divisor
    ``n_obs - p_kept``.
    """
    keep, dropped = _kept_columns(ds.p, drop)
    obs = ds.observed
    Xo = ds.X[np.ix_(obs, keep)]
    Yo = ds.Y[obs]
    n_obs, pk = Xo.shape
    if n_obs <= pk:
        raise InsufficientObserved(f"{n_obs} observed units for {pk} regressors")

    gram = Xo.T @ Xo
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > MAX_CONDITION:
        raise SingularDesign("observed Gram matrix is numerically singular")
    coef = np.linalg.solve(gram, Xo.T @ Yo)

    resid = Yo - Xo @ coef
    sigma = _sym(resid.T @ resid / (n_obs - pk))

    B = np.zeros((ds.p, ds.T))
    B[keep] = coef
    return OutcomeModel(
        B_hat=_frozen(B), Sigma_eps_hat=_frozen(sigma), n_obs=n_obs, dropped_columns=dropped
    )


def predict(model: OutcomeModel, X) -> np.ndarray:
    """Fitted curves ``B_hat' x_i`` as an (n, T) array."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.B_hat.shape[0]:
        raise DimensionMismatch(
            f"X has shape {X.shape}, model expects {model.B_hat.shape[0]} columns"
        )
    return X @ model.B_hat


def inverse_logit(s):
    """Logistic function ``1 / (1 + exp(-s))``, overflow-free for large ``|s|``."""
    return expit(s)


def _loglik(eta: np.ndarray, z: np.ndarray) -> float:
    # sum z*eta - log(1 + e^eta), stable for large |eta|
    return float(np.sum(z * eta - np.logaddexp(0.0, eta)))


def fit_logistic(
    ds: Dataset,
    drop: Iterable[int] = (),
    tol: float = 1e-10,
    max_iter: int = 100,
) -> PropensityModel:
    """Maximum likelihood logistic regression of ``Z`` on the kept covariates.

    Damped Newton iterations from ``gamma = 0``. A step is halved until the
    log-likelihood does not decrease. Convergence is declared once the score
    norm falls below ``tol * n``.

    Raises
    ------
    AllSameIndicator
        ``Z`` is constant, so the likelihood has no finite maximizer.
    Separation
        The coefficients diverge, a fitted probability saturates at 0 or 1,
        or Newton stalls without reaching the score tolerance.
    """
    keep, dropped = _kept_columns(ds.p, drop)
    z = ds.Z.astype(float)
    n = ds.n
    if np.all(z == 1) or np.all(z == 0):
        raise AllSameIndicator("missingness indicator takes a single value")

    Xk = ds.X[:, keep]
    gamma = np.zeros(keep.size)
    eta = Xk @ gamma
    ll = _loglik(eta, z)
    threshold = tol * n
    converged = False
    iterations = 0
    while True:
        prob = expit(eta)
        score = Xk.T @ (z - prob)
        score_norm = float(np.linalg.norm(score))
        if score_norm <= threshold:
            converged = True
            break
        if iterations == max_iter:
            break
        info = (Xk * (prob * (1.0 - prob))[:, None]).T @ Xk
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise SingularDesign("singular information matrix in logistic fit") from exc

        # roundoff slack: near the optimum a full step can lose an ulp of likelihood
        floor = ll - 1e-12 * max(1.0, abs(ll))
        t = 1.0
        for _ in range(60):
            cand = gamma + t * step
            cand_eta = Xk @ cand
            cand_ll = _loglik(cand_eta, z)
            if cand_ll >= floor:
                break
            t *= 0.5
        else:
            break
        gamma, eta, ll = cand, cand_eta, cand_ll
        iterations += 1
        if np.linalg.norm(gamma) > 1e4:
            raise Separation(f"|gamma| = {np.linalg.norm(gamma):.3g} diverges; data look separated")

    if converged and np.max(np.abs(eta)) > _ETA_SATURATED:
        raise Separation("fitted probabilities reach 0 or 1; data look separated")
    if not converged:
        raise Separation(
            f"logistic fit did not converge after {iterations} iterations "
            f"(score norm {score_norm:.3g})"
        )

    full = np.zeros(ds.p)
    full[keep] = gamma
    return PropensityModel(
        gamma_hat=_frozen(full),
        converged=True,
        iterations=iterations,
        score_norm=score_norm,
        dropped_columns=dropped,
    )


def propensities(model: PropensityModel, X) -> np.ndarray:
    """Fitted observation probabilities, clipped into ``[1e-6, 1 - 1e-6]``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.gamma_hat.shape[0]:
        raise DimensionMismatch(
            f"X has shape {X.shape}, model expects {model.gamma_hat.shape[0]} columns"
        )
    if model.constant is not None:
        tau = np.full(X.shape[0], float(model.constant))
    else:
        tau = expit(X @ model.gamma_hat)
    return np.clip(tau, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
