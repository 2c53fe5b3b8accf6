"""Penalized robust M-estimation by accelerated proximal gradient.

Solves ``min_b (1/n) sum_i rho(y_i - x_i^T b) + g(b)`` and certifies the
result with the sup-norm KKT residual ``dist(X^T psi / n, dg(b))``.

Once the support of the iterate settles, an active-set Newton step is tried
on the reduced stationarity equations. For the Huber loss with an Elastic-Net
penalty those equations are piecewise linear, so a single step lands on the
exact minimizer as soon as the sign and quadratic-zone patterns are right.
The polished point is only accepted if it passes the full KKT test, so the
certificate never depends on the polish.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, solve

from .exceptions import MaxIterExceeded
from .losses import RobustLoss
from .penalties import Penalty
from .validation import check_design

ACTIVE_THRESHOLD = 1e-10


@dataclass
class SolverOptions:
    max_iter: int = 50_000
    kkt_tol: float = 1e-8
    initial_step: float | None = None
    backtrack_factor: float = 0.5
    accelerate: bool = True
    polish: bool = True
    check_every: int = 10

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")


@dataclass
class FitResult:
    beta_hat: np.ndarray
    residuals: np.ndarray
    psi_vec: np.ndarray
    psi_prime_vec: np.ndarray
    active_set: np.ndarray
    n_hat: float
    kkt_residual: float
    objective: float
    objective_trace: np.ndarray
    n_iter: int
    converged: bool
    loss: RobustLoss
    penalty: Penalty
    polished: bool = False
    restarts: list = field(default_factory=list)

    @property
    def psi_norm(self) -> float:
        return float(np.linalg.norm(self.psi_vec))

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat.tolist(),
            "residuals": self.residuals.tolist(),
            "psi_vec": self.psi_vec.tolist(),
            "psi_prime_vec": self.psi_prime_vec.tolist(),
            "active_set": self.active_set.tolist(),
            "n_hat": self.n_hat,
            "kkt_residual": self.kkt_residual,
            "objective": self.objective,
            "objective_trace": self.objective_trace.tolist(),
            "n_iter": self.n_iter,
            "converged": self.converged,
            "polished": self.polished,
            "loss": {"kind": self.loss.kind, "sigma": self.loss.sigma},
            "penalty": {
                "kind": self.penalty.kind,
                "lambda": self.penalty.lam,
                "tau": self.penalty.tau,
                "allow_tau_zero": self.penalty.allow_tau_zero,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        pen = d["penalty"]
        return cls(
            beta_hat=np.asarray(d["beta_hat"], dtype=float),
            residuals=np.asarray(d["residuals"], dtype=float),
            psi_vec=np.asarray(d["psi_vec"], dtype=float),
            psi_prime_vec=np.asarray(d["psi_prime_vec"], dtype=float),
            active_set=np.asarray(d["active_set"], dtype=int),
            n_hat=d["n_hat"],
            kkt_residual=float(d["kkt_residual"]),
            objective=float(d["objective"]),
            objective_trace=np.asarray(d.get("objective_trace", []), dtype=float),
            n_iter=int(d["n_iter"]),
            converged=bool(d["converged"]),
            loss=RobustLoss(d["loss"]["kind"], d["loss"]["sigma"]),
            penalty=Penalty(pen["kind"], pen["lambda"], pen["tau"], pen.get("allow_tau_zero", False)),
            polished=bool(d.get("polished", False)),
        )


def active_set(beta) -> np.ndarray:
    """Indices with ``|b_j| > 1e-10 * max(1, ||b||_inf)``."""
    beta = np.asarray(beta, dtype=float)
    if beta.size == 0:
        return np.empty(0, dtype=int)
    thr = ACTIVE_THRESHOLD * max(1.0, float(np.abs(beta).max()))
    return np.flatnonzero(np.abs(beta) > thr)


def objective(X, y, beta, loss, penalty) -> float:
    r = y - X @ beta
    return float(np.mean(loss.rho(r)) + penalty.value(beta))


def kkt_residual(X, y, beta, loss, penalty) -> float:
    """Independent recomputation of the stationarity residual."""
    n = X.shape[0]
    psi = loss.psi(y - X @ beta)
    return penalty.kkt_distance(beta, X.T @ psi / n)


def _opnorm_sq(X, iters=30, seed=0):
    """Power-iteration estimate of ``||X||_op^2`` (from below)."""
    n, p = X.shape
    if not np.any(X):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(p)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = X.T @ (X @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


def _newton_polish(X, y, beta, loss, penalty, tol, max_steps=30):
    """Active-set Newton on the support of ``beta``. Returns a point or None."""
    n, p = X.shape
    S = active_set(beta)
    b = np.zeros(p)
    if S.size == 0:
        return b if kkt_residual(X, y, b, loss, penalty) <= tol else None
    signs = np.sign(beta[S])
    XS = X[:, S]
    bS = beta[S].copy()
    lam, tau = penalty.lam, penalty.tau
    prev = np.inf
    for _ in range(max_steps):
        r = y - XS @ bS
        F = XS.T @ loss.psi(r) / n - lam * signs - tau * bS
        nrm = float(np.abs(F).max())
        if nrm <= 1e-3 * tol:
            break
        if nrm >= prev:
            return None
        prev = nrm
        d = loss.psi_prime(r)
        H = (XS.T * d) @ XS / n
        H[np.diag_indices_from(H)] += tau
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinAlgWarning)
                bS = bS + solve(H, F, assume_a="pos", check_finite=False)
        except (LinAlgError, ValueError):
            return None
        if not np.isfinite(bS).all():
            return None
    if np.any(np.sign(bS) != signs):
        return None
    b[S] = bS
    if kkt_residual(X, y, b, loss, penalty) > tol:
        return None
    return b


def _validate(X, y):
    X, y = check_design(X, y)
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("need n >= 1 and p >= 1")
    return X, y


def fit(X, y, loss: RobustLoss, penalty: Penalty, opts: SolverOptions | None = None,
        beta0=None, check_input=True) -> FitResult:
    """Compute the penalized M-estimator.

    Parameters
    ----------
    X : array of shape (n, p)
    y : array of shape (n,)
    loss, penalty : descriptors
    opts : SolverOptions, optional
    beta0 : array of shape (p,), optional
        Warm start. Only the starting point changes; the certificate
        (KKT residual below ``opts.kkt_tol``) is the same.
    check_input : bool, default True
        Skip validation when False; for repeated refits on arrays that
        were already validated.

    Returns
    -------
    FitResult
        If ``max_iter`` is reached the best iterate is returned with
        ``converged=False`` and a :class:`MaxIterExceeded` warning.
    """
    opts = opts or SolverOptions()
    if check_input:
        X, y = _validate(X, y)
    n, p = X.shape
    tol = opts.kkt_tol

    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float).ravel()
    if beta.shape != (p,):
        raise ValueError("beta0 has the wrong shape")

    def smooth(xb):
        r = y - xb
        return float(np.mean(loss.rho(r))), r

    polished = False
    trace = []
    n_iter = 0
    restarts = []

    if opts.polish and beta0 is not None:
        b = _newton_polish(X, y, beta, loss, penalty, tol)
        if b is not None:
            beta, polished = b, True

    Xb = X @ beta
    f, r = smooth(Xb)
    F = f + penalty.value(beta)
    trace.append(F)
    converged = penalty.kkt_distance(beta, X.T @ loss.psi(r) / n) <= tol

    if not converged:
        if opts.initial_step is not None:
            step = float(opts.initial_step)
        else:
            lip = loss.L * _opnorm_sq(X) / n * 1.05
            step = 1.0 / lip if lip > 0 else 1.0
        x_prev, Xx_prev = beta.copy(), Xb.copy()
        x, Xx = beta, Xb
        t_mom = 1.0
        last_support = None
        F_x = F
        for it in range(1, opts.max_iter + 1):
            n_iter = it
            if opts.accelerate:
                t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
                mom = (t_mom - 1.0) / t_next
            else:
                t_next, mom = 1.0, 0.0
            w = x + mom * (x - x_prev)
            Xw = Xx + mom * (Xx - Xx_prev)
            f_w, r_w = smooth(Xw)
            grad_w = -(X.T @ loss.psi(r_w)) / n
            while True:
                z = penalty.prox(w - step * grad_w, step)
                Xz = X @ z
                f_z, _ = smooth(Xz)
                dz = z - w
                if f_z <= f_w + grad_w @ dz + (dz @ dz) / (2 * step) + 1e-12 * abs(f_w):
                    break
                step *= opts.backtrack_factor
            F_z = f_z + penalty.value(z)
            if F_z > F_x and mom > 0:
                # restart: drop momentum and take a plain step from x
                restarts.append(it)
                t_mom = 1.0
                x_prev, Xx_prev = x, Xx
                continue
            x_prev, Xx_prev = x, Xx
            x, Xx, F_x = z, Xz, F_z
            t_mom = t_next
            trace.append(F_x)

            if it % opts.check_every == 0:
                _, r_x = smooth(Xx)
                if penalty.kkt_distance(x, X.T @ loss.psi(r_x) / n) <= tol:
                    converged = True
                    break
                support = active_set(x)
                if opts.polish and last_support is not None and np.array_equal(support, last_support):
                    b = _newton_polish(X, y, x, loss, penalty, tol)
                    if b is not None:
                        F_b = objective(X, y, b, loss, penalty)
                        if F_b <= F_x + 1e-12 * max(1.0, abs(F_x)):
                            x, Xx, F_x = b, X @ b, F_b
                            trace.append(F_x)
                            converged, polished = True, True
                            break
                last_support = support
        beta = x
        if not converged:
            warnings.warn(
                f"solver stopped after {opts.max_iter} iterations without reaching kkt_tol={tol:g}",
                MaxIterExceeded,
                stacklevel=2,
            )

    return _result(X, y, beta, loss, penalty, np.asarray(trace), n_iter, converged, polished, restarts)


def _result(X, y, beta, loss, penalty, trace, n_iter, converged, polished, restarts):
    n = X.shape[0]
    S = active_set(beta)
    beta = beta.copy()
    r = y - X @ beta
    psi = loss.psi(r)
    dpsi = loss.psi_prime(r)
    if not np.any(psi):
        warnings.warn("psi(y - X beta_hat) is identically zero", RuntimeWarning, stacklevel=3)
    n_hat = int(np.count_nonzero(dpsi == 1.0)) if loss.is_huber else float(dpsi.sum())
    return FitResult(
        beta_hat=beta,
        residuals=r,
        psi_vec=psi,
        psi_prime_vec=dpsi,
        active_set=S,
        n_hat=n_hat,
        kkt_residual=penalty.kkt_distance(beta, X.T @ psi / n),
        objective=float(np.mean(loss.rho(r)) + penalty.value(beta)),
        objective_trace=trace,
        n_iter=n_iter,
        converged=converged,
        loss=loss,
        penalty=penalty,
        polished=polished,
        restarts=restarts,
    )


@dataclass
class StabilityReport:
    lhs: float
    rhs: float
    holds: bool


def stability_check(X, y, loss, penalty, perturbation, beta_true, opts=None, tol=1e-10):
    """Evaluate both sides of the Lipschitz-in-(noise, design) inequality.

    With ``eps = y - X beta`` and ``h = beta_hat - beta`` for the original
    problem and tilded quantities for ``(eps + d_eps, X + d_X)``::

        n tau ||h - h~||^2 + ||psi - psi~||^2 / L
            <= (h - h~)^T (X - X~)^T psi + (eps - eps~ + X~ h - X h)^T (psi - psi~)
    """
    X, y = _validate(X, y)
    d_eps, d_X = perturbation
    n = X.shape[0]
    beta_true = np.asarray(beta_true, dtype=float)
    eps = y - X @ beta_true
    eps_t = eps + np.asarray(d_eps, dtype=float)
    X_t = X + np.asarray(d_X, dtype=float)
    y_t = X_t @ beta_true + eps_t
    a = fit(X, y, loss, penalty, opts)
    b = fit(X_t, y_t, loss, penalty, opts, beta0=a.beta_hat)
    h, h_t = a.beta_hat - beta_true, b.beta_hat - beta_true
    dh, dpsi = h - h_t, a.psi_vec - b.psi_vec
    lhs = n * penalty.tau * (dh @ dh) + (dpsi @ dpsi) / loss.L
    rhs = dh @ ((X - X_t).T @ a.psi_vec) + (eps - eps_t + X_t @ h - X @ h) @ dpsi
    return StabilityReport(float(lhs), float(rhs), bool(lhs <= rhs + tol))
