"""scikit-learn estimator front end."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dof import compute_trace
from .inference import PrecisionInfo, infer, pivot_oracle
from .losses import RobustLoss
from .penalties import make_penalty
from .solver import SolverOptions, fit
from .validation import check_coords, check_design


class RobustDebiasedRegressor(RegressorMixin, BaseEstimator):
    """Penalized robust M-estimator with debiased coordinate-wise inference.

    Minimizes ``(1/n) sum_i rho(y_i - x_i^T b) + lam ||b||_1 + tau ||b||^2 / 2``
    and, after fitting, exposes the Jacobian trace, the variance estimate
    ``v_hat_`` and confidence intervals for individual coefficients given a
    known design covariance.

    Parameters
    ----------
    loss : {'huber', 'pseudo_huber', 'smoothed_huber', 'logistic1'}
    sigma : float
        Loss scale.
    penalty : {'elastic_net', 'ridge'}
    lam : float
        l1 weight (must be 0 for ``ridge``).
    tau : float
        Ridge weight; must be positive.
    trace_method : {'auto', 'closed', 'fd', 'hutch'}
        ``auto`` uses the closed form for the Huber loss and finite
        differences otherwise.
    fd_step : float or None
        Finite-difference step; ``None`` uses ``1e-4 (1 + ||y||_inf)``
        capped at ``1e-3 sigma``.
    n_probes : int
        Probes for the Hutchinson trace.
    max_iter, kkt_tol : solver controls.
    random_state : int or None
        Seed for the Hutchinson probes.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    fit_result_ : FitResult
    trace_ : TraceReport
    v_hat_ : float
        ``inf`` when the trace is degenerate.
    """

    def __init__(self, loss="huber", sigma=1.0, penalty="elastic_net", lam=0.1, tau=0.1,
                 trace_method="auto", fd_step=None, n_probes=100, max_iter=50_000,
                 kkt_tol=1e-8, random_state=None):
        self.loss = loss
        self.sigma = sigma
        self.penalty = penalty
        self.lam = lam
        self.tau = tau
        self.trace_method = trace_method
        self.fd_step = fd_step
        self.n_probes = n_probes
        self.max_iter = max_iter
        self.kkt_tol = kkt_tol
        self.random_state = random_state

    def _components(self):
        loss = RobustLoss(self.loss, self.sigma)
        lam = 0.0 if self.penalty == "ridge" else self.lam
        pen = make_penalty(self.penalty, lam, self.tau)
        return loss, pen, SolverOptions(max_iter=self.max_iter, kkt_tol=self.kkt_tol)

    def fit(self, X, y):
        X, y = check_design(X, y)
        loss, pen, opts = self._components()
        res = fit(X, y, loss, pen, opts)
        self.fit_result_ = res
        self.coef_ = res.beta_hat
        self.n_features_in_ = X.shape[1]
        self.X_fit_ = X
        self.y_fit_ = y
        self.trace_ = compute_trace(res, X, y, self.trace_method, h=self.fd_step,
                                    probes=self.n_probes, seed=self.random_state, opts=opts)
        n = X.shape[0]
        t = self.trace_.trace_value
        if abs(t) < 1e-8 * n:
            self.v_hat_ = np.inf
        else:
            self.v_hat_ = float(res.psi_vec @ res.psi_vec / n / (t / n) ** 2)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_

    def _precision(self, Sigma):
        p = self.n_features_in_
        return PrecisionInfo(np.eye(p) if Sigma is None else Sigma)

    def confidence_intervals(self, Sigma=None, level=0.95, coords=None):
        """Intervals for ``coords`` (zero-based); ``Sigma=None`` assumes identity."""
        check_is_fitted(self, "coef_")
        return infer(self.fit_result_, self.X_fit_, self._precision(Sigma), self.trace_.trace_value,
                     coords=coords, level=level)

    def debiased_coef(self, Sigma=None, coords=None):
        return self.confidence_intervals(Sigma, coords=coords).debiased

    def pivots(self, beta_true, Sigma=None, coords=None):
        """Oracle pivots ``sqrt(omega_j) xi'_j``; simulation use only."""
        check_is_fitted(self, "coef_")
        prec = self._precision(Sigma)
        beta_true = np.asarray(beta_true, dtype=float)
        coords = check_coords(coords, self.n_features_in_)
        t = self.trace_.trace_value
        return np.array([
            pivot_oracle(self.fit_result_, prec, self.X_fit_, t, j, beta_true[j]).z_xi_prime
            for j in coords
        ])
