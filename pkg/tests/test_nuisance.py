import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnmiss.exceptions import AllSameIndicator, InsufficientObserved, Separation, SingularDesign
from fnmiss.model import Dataset, Grid
from fnmiss.nuisance import (
    OutcomeModel,
    PropensityModel,
    fit_logistic,
    fit_ols,
    inverse_logit,
    predict,
    propensities,
)

from conftest import make_dataset


# --- OLS -------------------------------------------------------------------


def test_ols_intercept_only_gives_column_means(rng):
    Y = rng.normal(size=(12, 4))
    ds = Dataset.from_arrays(np.ones((12, 1)), np.ones(12), Y)
    om = fit_ols(ds)
    np.testing.assert_allclose(om.B_hat[0], Y.mean(axis=0), atol=1e-13)


def test_ols_hand_solved_normal_equations():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
    om = fit_ols(Dataset.from_arrays(X, [1, 1, 1], [1.0, 2.0, 4.0]))
    np.testing.assert_allclose(om.B_hat[:, 0], [5 / 6, 3 / 2], atol=1e-14)


def test_ols_ignores_missing_rows():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 5.0]])
    y = np.array([[1.0], [2.0], [4.0], [7.0]])
    a = fit_ols(Dataset.from_arrays(X, [1, 1, 1, 0], y))
    b = fit_ols(Dataset.from_arrays(X[:3], [1, 1, 1], y[:3]))
    np.testing.assert_array_equal(a.B_hat, b.B_hat)


def test_ols_residual_orthogonality(small_ds):
    om = fit_ols(small_ds)
    obs = small_ds.observed
    resid = small_ds.Y[obs] - small_ds.X[obs] @ om.B_hat
    scale = np.abs(small_ds.Y[obs]).max() * obs.sum()
    assert np.max(np.abs(small_ds.X[obs].T @ resid)) < 1e-8 * scale
    assert np.max(np.abs(resid.sum(axis=0))) < 1e-8 * scale


def test_ols_residual_covariance_psd(small_ds):
    om = fit_ols(small_ds)
    S = om.Sigma_eps_hat
    assert np.array_equal(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-8 * np.trace(S)


def test_ols_dropped_columns_zero_padded(small_ds):
    om = fit_ols(small_ds, drop=[2])
    assert om.dropped_columns == (2,)
    assert np.all(om.B_hat[2] == 0.0)
    ref = fit_ols(Dataset.from_arrays(small_ds.X[:, :2], small_ds.Z, small_ds.Y, small_ds.grid))
    np.testing.assert_allclose(om.B_hat[:2], ref.B_hat, atol=1e-12)


def test_ols_singular_design():
    X = np.column_stack([np.ones(6), np.ones(6)])
    with pytest.raises(SingularDesign):
        fit_ols(Dataset.from_arrays(X, np.ones(6), np.arange(6.0)))


def test_ols_insufficient_observed():
    X = np.column_stack([np.ones(4), np.arange(4.0)])
    with pytest.raises(InsufficientObserved):
        fit_ols(Dataset.from_arrays(X, [1, 1, 0, 0], np.arange(4.0)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_ols_permutation_and_rescaling(seed, a):
    rng = np.random.default_rng(seed)
    ds = make_dataset(rng, n=40, p=3, T=5)
    om = fit_ols(ds)
    perm = rng.permutation(ds.n)
    omp = fit_ols(Dataset.from_arrays(ds.X[perm], ds.Z[perm], ds.Y[perm], ds.grid))
    np.testing.assert_allclose(omp.B_hat, om.B_hat, atol=1e-10)
    Xs = ds.X.copy()
    Xs[:, 1] *= a
    oms = fit_ols(Dataset.from_arrays(Xs, ds.Z, ds.Y, ds.grid))
    np.testing.assert_allclose(oms.B_hat[1], om.B_hat[1] / a, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(predict(oms, Xs), predict(om, ds.X), atol=1e-10)


# --- predict ---------------------------------------------------------------


def test_predict_zero_and_constant_models():
    zero = OutcomeModel(B_hat=np.zeros((2, 3)), Sigma_eps_hat=np.eye(3), n_obs=5)
    assert np.all(predict(zero, np.ones((4, 2))) == 0.0)
    ybar = np.array([1.0, 2.0, 3.0])
    const = OutcomeModel(B_hat=ybar[None, :], Sigma_eps_hat=np.eye(3), n_obs=5)
    np.testing.assert_array_equal(predict(const, np.ones((4, 1))), np.tile(ybar, (4, 1)))


def test_predict_matrix_vector_product():
    B = np.array([[1.0, -1.0, 0.5], [2.0, 0.0, 3.0]])
    om = OutcomeModel(B_hat=B, Sigma_eps_hat=np.eye(3), n_obs=5)
    np.testing.assert_allclose(predict(om, [[1.0, 2.0]])[0], B[0] + 2 * B[1])


def test_predict_dimension_mismatch():
    om = OutcomeModel(B_hat=np.zeros((2, 3)), Sigma_eps_hat=np.eye(3), n_obs=5)
    with pytest.raises(ValueError):
        predict(om, np.ones((4, 3)))


# --- logistic --------------------------------------------------------------


def test_inverse_logit_values():
    assert inverse_logit(0.0) == 0.5
    assert inverse_logit(3.7) == pytest.approx(1 - inverse_logit(-3.7), abs=1e-15)
    # extended-precision value of 1 / (1 + e^-2)
    assert inverse_logit(2.0) == pytest.approx(0.880797077977882444, abs=1e-15)
    s = np.linspace(-700, 700, 2001)
    v = inverse_logit(s)
    assert np.all(np.isfinite(v)) and np.all(np.diff(v) >= 0)


def test_logistic_intercept_closed_form():
    n, k = 50, 17
    Z = np.r_[np.ones(k), np.zeros(n - k)]
    pm = fit_logistic(Dataset.from_arrays(np.ones((n, 1)), Z, np.where(Z[:, None] == 1, 0.0, np.nan)))
    assert pm.converged
    assert pm.gamma_hat[0] == pytest.approx(np.log(k / (n - k)), abs=1e-10)


def test_logistic_all_same_indicator():
    with pytest.raises(AllSameIndicator):
        fit_logistic(Dataset.from_arrays(np.ones((5, 1)), np.ones(5), np.zeros((5, 1))))


def test_logistic_separation():
    x = np.arange(-5.0, 5.0)
    X = np.column_stack([np.ones(10), x])
    Z = (x > 0).astype(int)
    with pytest.raises(Separation):
        fit_logistic(Dataset.from_arrays(X, Z, np.zeros((10, 1))))


def _loglik(gamma, X, z):
    eta = X @ gamma
    return np.sum(z * eta - np.logaddexp(0, eta))


def _grid_search(X, z, lo=-3.0, hi=3.0, rounds=12, k=21):
    """Coarse-to-fine grid search for the 2-parameter logistic maximizer."""
    c = np.array([(lo + hi) / 2] * 2)
    half = (hi - lo) / 2
    for _ in range(rounds):
        g0 = np.linspace(c[0] - half, c[0] + half, k)
        g1 = np.linspace(c[1] - half, c[1] + half, k)
        best = max(((a, b) for a in g0 for b in g1), key=lambda g: _loglik(np.array(g), X, z))
        c = np.array(best)
        half *= 0.25
    return c


def test_logistic_matches_grid_search_oracle():
    rng = np.random.default_rng(7)
    n = 200
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    z = (rng.random(n) < inverse_logit(X @ np.array([0.4, -1.1]))).astype(int)
    pm = fit_logistic(Dataset.from_arrays(X, z, np.zeros((n, 1))))
    np.testing.assert_allclose(pm.gamma_hat, _grid_search(X, z), atol=1e-4)
    assert pm.score_norm <= 1e-10 * n
    prob = inverse_logit(X @ pm.gamma_hat)
    info = (X * (prob * (1 - prob))[:, None]).T @ X
    assert np.linalg.eigvalsh(info).min() >= 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_logistic_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, p = 15, 3
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    z = rng.integers(0, 2, size=n)
    gamma = rng.normal(size=p)
    grad = X.T @ (z - inverse_logit(X @ gamma))
    h = 1e-5
    fd = np.array(
        [(_loglik(gamma + h * e, X, z) - _loglik(gamma - h * e, X, z)) / (2 * h) for e in np.eye(p)]
    )
    assert np.linalg.norm(grad - fd) <= 1e-5 * max(1.0, np.linalg.norm(grad))


def test_logistic_dropped_columns(small_ds):
    pm = fit_logistic(small_ds, drop=[1])
    assert pm.dropped_columns == (1,) and pm.gamma_hat[1] == 0.0


def test_propensities_values_and_clip():
    X = np.ones((3, 1))
    zero = PropensityModel(gamma_hat=np.zeros(1), converged=True, iterations=0, score_norm=0.0)
    assert np.all(propensities(zero, X) == 0.5)
    three = PropensityModel(gamma_hat=np.array([np.log(3.0)]), converged=True, iterations=0, score_norm=0.0)
    np.testing.assert_allclose(propensities(three, X), 0.75, atol=1e-15)
    far = PropensityModel(gamma_hat=np.array([-40.0]), converged=True, iterations=0, score_norm=0.0)
    assert np.all(propensities(far, X) == 1e-6)
    with pytest.raises(ValueError):
        propensities(zero, np.ones((3, 2)))
