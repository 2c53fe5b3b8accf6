import warnings

import numpy as np
import pytest

from robust_debias import (MaxIterExceeded, NonFiniteInput, RobustLoss, SolverOptions,
                           elastic_net, fit, kkt_residual, ridge, stability_check)
from robust_debias.solver import FitResult, objective

from conftest import make_problem

HUBER = RobustLoss("huber", 1.0)


def test_zero_design_gives_zero():
    res = fit(np.zeros((5, 3)), np.arange(5.0), HUBER, elastic_net(0.1, 1.0))
    np.testing.assert_array_equal(res.beta_hat, 0.0)


def test_one_dimensional_closed_forms():
    X = np.array([[1.0]])
    assert fit(X, np.array([0.5]), HUBER, ridge(1.0)).beta_hat[0] == pytest.approx(0.25, abs=1e-10)
    # b = psi(10 - b) with psi clipped at 1
    assert fit(X, np.array([10.0]), HUBER, ridge(1.0)).beta_hat[0] == pytest.approx(1.0, abs=1e-10)


def test_non_finite_input():
    X = np.ones((3, 2))
    X[0, 0] = np.nan
    with pytest.raises(NonFiniteInput):
        fit(X, np.ones(3), HUBER, ridge(1.0))
    with pytest.raises(NonFiniteInput):
        fit(np.ones((3, 2)), np.array([1.0, np.inf, 0.0]), HUBER, ridge(1.0))


@pytest.mark.parametrize("kind", ["huber", "pseudo_huber", "smoothed_huber", "logistic1"])
def test_kkt_certificate(rng, kind):
    X, y, _ = make_problem(rng, n=50, p=80)
    loss = RobustLoss(kind, 1.0)
    pen = elastic_net(0.05, 0.2)
    res = fit(X, y, loss, pen)
    assert res.converged
    assert res.kkt_residual <= 1e-8
    assert abs(res.kkt_residual - kkt_residual(X, y, res.beta_hat, loss, pen)) <= 1e-12


def test_objective_not_worse_than_simple_starts(rng):
    X, y, _ = make_problem(rng)
    pen = elastic_net(0.1, 0.3)
    res = fit(X, y, HUBER, pen)
    n, p = X.shape
    ridge_start = np.linalg.solve(X.T @ X / n + 0.3 * np.eye(p), X.T @ y / n)
    assert res.objective <= objective(X, y, np.zeros(p), HUBER, pen) + 1e-12
    assert res.objective <= objective(X, y, ridge_start, HUBER, pen) + 1e-12


def test_unique_from_random_starts(rng):
    X, y, _ = make_problem(rng, n=40, p=30)
    pen = elastic_net(0.05, 0.5)
    ref = fit(X, y, HUBER, pen).beta_hat
    for _ in range(10):
        b0 = rng.standard_normal(30) * 3
        np.testing.assert_allclose(fit(X, y, HUBER, pen, beta0=b0).beta_hat, ref, atol=1e-6)


def test_objective_trace_monotone_without_polish(rng):
    X, y, _ = make_problem(rng)
    res = fit(X, y, RobustLoss("pseudo_huber"), elastic_net(0.05, 0.1), SolverOptions(polish=False))
    assert res.converged and not res.polished
    assert np.all(np.diff(res.objective_trace) <= 1e-12 * np.abs(res.objective_trace[:-1]).max())


def test_max_iter_warns(rng):
    X, y, _ = make_problem(rng)
    with pytest.warns(MaxIterExceeded):
        res = fit(X, y, HUBER, elastic_net(0.05, 0.1), SolverOptions(max_iter=3, polish=False))
    assert not res.converged
    assert np.isfinite(res.beta_hat).all()


def test_n_hat_counts_quadratic_zone(rng):
    X, y, _ = make_problem(rng)
    res = fit(X, y, HUBER, elastic_net(0.1, 0.1))
    assert res.n_hat == int(np.sum(np.abs(res.residuals) <= 1.0))
    np.testing.assert_allclose(res.residuals, y - X @ res.beta_hat)


def test_zero_psi_warns():
    # y exactly fitted by beta = 0 with no residual: psi is identically zero
    with pytest.warns(RuntimeWarning):
        fit(np.ones((4, 2)), np.zeros(4), HUBER, elastic_net(0.1, 1.0))


def test_fit_result_roundtrip(rng):
    X, y, _ = make_problem(rng, n=20, p=10)
    res = fit(X, y, HUBER, elastic_net(0.05, 0.2))
    back = FitResult.from_dict(res.to_dict())
    np.testing.assert_array_equal(back.beta_hat, res.beta_hat)
    np.testing.assert_array_equal(back.active_set, res.active_set)
    assert back.penalty == res.penalty and back.loss == res.loss


def test_warm_start_same_certificate(rng):
    X, y, _ = make_problem(rng)
    pen = elastic_net(0.1, 0.1)
    cold = fit(X, y, HUBER, pen)
    warm = fit(X, y, HUBER, pen, beta0=fit(X, y, HUBER, elastic_net(0.2, 0.1)).beta_hat)
    assert warm.kkt_residual <= 1e-8
    np.testing.assert_allclose(warm.beta_hat, cold.beta_hat, atol=1e-8)


def test_stability_trivial_and_random(rng):
    X, y, beta = make_problem(rng, n=40, p=30)
    pen = elastic_net(0.05, 0.3)
    rep = stability_check(X, y, HUBER, pen, (np.zeros(40), np.zeros((40, 30))), beta)
    assert rep.lhs == pytest.approx(0.0, abs=1e-20) and rep.rhs == pytest.approx(0.0, abs=1e-20)
    for _ in range(20):
        pert = (1e-2 * rng.standard_normal(40), 1e-2 * rng.standard_normal((40, 30)))
        assert stability_check(X, y, HUBER, pen, pert, beta).holds


def test_rank_one_perturbation_keeps_psi(rng):
    X, y, beta = make_problem(rng, n=40, p=30)
    pen = elastic_net(0.05, 0.3)
    res = fit(X, y, HUBER, pen)
    psi = res.psi_vec
    eta = rng.standard_normal(40)
    eta -= (eta @ psi) / (psi @ psi) * psi
    eta *= 0.05
    a = rng.standard_normal(30)
    h = res.beta_hat - beta
    X2 = X + np.outer(eta, a)
    eps2 = (y - X @ beta) + (h @ a) * eta
    res2 = fit(X2, X2 @ beta + eps2, HUBER, pen, beta0=res.beta_hat)
    assert np.linalg.norm(res2.psi_vec - psi) <= 1e-8


def _grid_oracle(X, y, loss, pen):
    """Dense grid (step 1e-3 around a coarse optimum) then local refinement."""
    p = X.shape[1]
    best = np.zeros(p)
    for step, half in ((0.05, 4.0), (1e-3, 0.06)):
        axes = [np.arange(c - half, c + half + step / 2, step) for c in best]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, p)
        vals = np.mean(loss.rho(y[None, :] - grid @ X.T), axis=1)
        vals += pen.lam * np.abs(grid).sum(1) + 0.5 * pen.tau * (grid**2).sum(1)
        best = grid[np.argmin(vals)]
    from scipy.optimize import minimize

    f = lambda b: objective(X, y, b, loss, pen)  # noqa: E731
    ref = minimize(f, best, method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-14})
    return ref.x if ref.fun <= f(best) else best


@pytest.mark.parametrize("seed", range(6))
def test_brute_force_small(seed):
    rng = np.random.default_rng(seed)
    n, p = rng.integers(2, 6), rng.integers(1, 3)
    X = rng.standard_normal((n, p))
    y = X @ rng.standard_normal(p) + rng.standard_cauchy(n)
    pen = elastic_net(rng.uniform(0, 0.5), rng.uniform(0.05, 1.0))
    res = fit(X, y, HUBER, pen)
    np.testing.assert_allclose(res.beta_hat, _grid_oracle(X, y, HUBER, pen), atol=5e-3)
