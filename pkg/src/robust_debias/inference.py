"""Debiased estimates, variance estimate, confidence intervals and pivots.

Everything is computed from a fitted :class:`~robust_debias.solver.FitResult`,
the design ``X`` it was fitted on, a known covariance ``Sigma`` (through
:class:`PrecisionInfo`) and the Jacobian trace from :mod:`robust_debias.dof`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh
from scipy.special import ndtri

from .exceptions import DegenerateTrace, ZeroPsi
from .validation import check_coords, check_covariance


class PrecisionInfo:
    """Precision quantities derived once from a known SPD covariance.

    ``omega[j] = (Sigma^{-1})_{jj}`` and
    ``z_j = X Sigma^{-1} e_j / omega[j]``.
    """

    def __init__(self, Sigma):
        Sigma = np.asarray(Sigma, dtype=float)
        p = Sigma.shape[0] if Sigma.ndim == 2 else -1
        Sigma = check_covariance(Sigma, p)
        try:
            factor = cho_factor(Sigma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Sigma is not positive definite") from exc
        self.Sigma = Sigma
        self.p = p
        self.Sigma_inv = cho_solve(factor, np.eye(p))
        self.Sigma_inv = 0.5 * (self.Sigma_inv + self.Sigma_inv.T)
        self.omega = np.diag(self.Sigma_inv).copy()
        if np.any(self.omega <= 0):
            raise ValueError("non-positive precision diagonal")

    @classmethod
    def identity(cls, p):
        return cls(np.eye(p))

    def eigen_range(self):
        ev = eigvalsh(self.Sigma)
        return float(ev[0]), float(ev[-1])

    def z(self, X, j):
        return np.asarray(X, dtype=float) @ self.Sigma_inv[:, j] / self.omega[j]

    def Q(self, j):
        """``I_p - Sigma^{-1} e_j e_j^T / omega_j``, so that ``X = X Q_j + z_j e_j^T``."""
        Q = np.eye(self.p)
        Q[:, j] -= self.Sigma_inv[:, j] / self.omega[j]
        return Q


def normal_quantile(level):
    """Two-sided multiplier ``Phi^{-1}((1 + level) / 2)``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return float(ndtri(0.5 * (1.0 + level)))


def _check_trace(trace_value, n):
    if not np.isfinite(trace_value) or abs(trace_value) < 1e-8 * n:
        raise DegenerateTrace(f"trace {trace_value!r} is numerically zero; the interval length is infinite")


def variance_hat(psi_vec, trace_value, n=None) -> float:
    """``(||psi||^2 / n) / (trace / n)^2``."""
    psi_vec = np.asarray(psi_vec, dtype=float)
    n = psi_vec.size if n is None else n
    _check_trace(trace_value, n)
    return float((psi_vec @ psi_vec) / n / (trace_value / n) ** 2)


def debias(result, prec: PrecisionInfo, X, trace_value, j) -> float:
    n = result.psi_vec.size
    _check_trace(trace_value, n)
    zj = prec.z(X, j)
    return float(result.beta_hat[j] + prec.omega[j] * (result.psi_vec @ zj) / trace_value)


@dataclass
class Pivot:
    xi: float
    xi_prime: float
    z_xi: float
    z_xi_prime: float


def pivot_oracle(result, prec: PrecisionInfo, X, trace_value, j, beta_true_j) -> Pivot:
    """Oracle pivots needing the true coefficient.

    ``xi = [psi^T z_j - ||z_j||^2 / n (beta_j - beta_hat_j) trace] / ||psi||``
    and ``xi'`` uses ``1 / omega_j`` in place of ``||z_j||^2 / n``. The
    ``z_*`` fields are the same statistics scaled by ``sqrt(omega_j)``.
    """
    psi = result.psi_vec
    n = psi.size
    psi_norm = float(np.linalg.norm(psi))
    if psi_norm == 0:
        raise ZeroPsi("psi vector is identically zero")
    zj = prec.z(X, j)
    gap = beta_true_j - result.beta_hat[j]
    core = psi @ zj
    xi = (core - (zj @ zj) / n * gap * trace_value) / psi_norm
    xi_p = (core - gap * trace_value / prec.omega[j]) / psi_norm
    s = np.sqrt(prec.omega[j])
    return Pivot(float(xi), float(xi_p), float(s * xi), float(s * xi_p))


def confidence_interval(result, prec: PrecisionInfo, X, trace_value, j, level=0.95):
    """``debiased +/- q * sqrt(omega_j V_hat / n)``; ``(-inf, inf)`` if the trace is degenerate."""
    q = normal_quantile(level)
    psi = result.psi_vec
    n = psi.size
    if not np.any(psi):
        raise ZeroPsi("psi vector is identically zero, V_hat would be 0")
    try:
        v = variance_hat(psi, trace_value, n)
        center = debias(result, prec, X, trace_value, j)
    except DegenerateTrace:
        return -np.inf, np.inf
    half = q * np.sqrt(prec.omega[j] * v / n)
    return center - half, center + half


@dataclass
class InferenceResult:
    coords: np.ndarray
    beta_hat: np.ndarray
    debiased: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    omega: np.ndarray
    v_hat: float
    trace_value: float
    psi_norm: float
    level: float
    flags: list = field(default_factory=list)

    @property
    def width(self):
        return self.hi - self.lo

    def rows(self):
        """CSV-ready rows; ``j`` is one-based."""
        flag = ";".join(self.flags)
        for k, j in enumerate(self.coords):
            yield {
                "j": int(j) + 1,
                "beta_hat": float(self.beta_hat[k]),
                "debiased": float(self.debiased[k]),
                "lo": float(self.lo[k]),
                "hi": float(self.hi[k]),
                "omega_jj": float(self.omega[k]),
                "v_hat": float(self.v_hat),
                "flags": flag,
            }


def infer(result, X, prec: PrecisionInfo, trace_value, coords=None, level=0.95) -> InferenceResult:
    """Confidence intervals for the requested (zero-based) coordinates.

    A single ``V_hat`` is shared by all coordinates; coordinates differ only
    through ``omega_j`` and ``z_j``.
    """
    X = np.asarray(X, dtype=float)
    coords = check_coords(coords, X.shape[1])
    psi = result.psi_vec
    n = psi.size
    if not np.any(psi):
        raise ZeroPsi("psi vector is identically zero")
    q = normal_quantile(level)
    flags = []
    beta_hat = result.beta_hat[coords]
    omega = prec.omega[coords]
    try:
        v = variance_hat(psi, trace_value, n)
    except DegenerateTrace:
        flags.append("degenerate_trace")
        inf = np.full(coords.size, np.inf)
        return InferenceResult(coords, beta_hat, beta_hat.copy(), -inf, inf, omega, np.inf,
                               float(trace_value), float(np.linalg.norm(psi)), level, flags)
    if abs(trace_value) < 0.05 * n:
        flags.append("near_zero_trace")
    Z = X @ prec.Sigma_inv[:, coords] / omega
    debiased = beta_hat + omega * (psi @ Z) / trace_value
    half = q * np.sqrt(omega * v / n)
    return InferenceResult(coords, beta_hat, debiased, debiased - half, debiased + half, omega, v,
                           float(trace_value), float(np.linalg.norm(psi)), level, flags)
