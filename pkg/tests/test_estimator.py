import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from robust_debias import NonFiniteInput, RobustDebiasedRegressor

from conftest import make_problem


def test_fit_predict(rng):
    X, y, beta = make_problem(rng, n=100, p=30)
    est = RobustDebiasedRegressor(lam=0.05, tau=0.1).fit(X, y)
    assert est.coef_.shape == (30,)
    np.testing.assert_allclose(est.predict(X), X @ est.coef_)
    assert est.trace_.method == "closed_form"
    assert np.isfinite(est.v_hat_)
    assert est.fit_result_.kkt_residual <= 1e-8


def test_params_roundtrip():
    est = RobustDebiasedRegressor(loss="pseudo_huber", lam=0.2)
    params = est.get_params()
    assert params["loss"] == "pseudo_huber" and params["lam"] == 0.2
    twin = clone(est).set_params(tau=0.5)
    assert twin.tau == 0.5 and est.tau == 0.1


def test_not_fitted():
    with pytest.raises(NotFittedError):
        RobustDebiasedRegressor().predict(np.ones((2, 2)))


def test_validation(rng):
    X, y, _ = make_problem(rng, n=20, p=5)
    X[0, 0] = np.nan
    with pytest.raises(NonFiniteInput):
        RobustDebiasedRegressor().fit(X, y)
    with pytest.raises(ValueError):
        RobustDebiasedRegressor().fit(np.ones((3, 2)), np.ones(4))
    est = RobustDebiasedRegressor().fit(np.ones((5, 2)) + np.eye(5, 2), np.arange(5.0))
    with pytest.raises(ValueError):
        est.predict(np.ones((2, 3)))


def test_intervals_and_pivots(rng):
    X, y, beta = make_problem(rng, n=100, p=30)
    est = RobustDebiasedRegressor(lam=0.05, tau=0.1).fit(X, y)
    ci = est.confidence_intervals(coords=[0, 1, 2])
    assert np.all(ci.lo < ci.hi)
    np.testing.assert_allclose(est.debiased_coef(coords=[0, 1, 2]), ci.debiased)
    z = est.pivots(beta, coords=[0])
    assert z.shape == (1,) and np.isfinite(z).all()


def test_smooth_loss_uses_finite_differences(rng):
    X, y, _ = make_problem(rng, n=30, p=8)
    est = RobustDebiasedRegressor(loss="pseudo_huber", lam=0.05, tau=0.5).fit(X, y)
    assert est.trace_.method == "finite_difference"
    est = RobustDebiasedRegressor(loss="huber", lam=0.05, tau=0.5, trace_method="hutch",
                                  n_probes=10, random_state=0).fit(X, y)
    assert est.trace_.method == "hutchinson"


def test_score_is_r2(rng):
    X, y, _ = make_problem(rng, n=100, p=10, noise="normal")
    est = RobustDebiasedRegressor(lam=0.01, tau=0.01).fit(X, y)
    assert est.score(X, y) > 0.5
