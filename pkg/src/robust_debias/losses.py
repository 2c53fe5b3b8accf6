"""Robust loss functions rho with derivative psi and a.e. second derivative.

Every loss is stored in unit scale and rescaled as
``rho_sigma(x) = sigma**2 * rho_1(x / sigma)``, so that
``psi_sigma(x) = sigma * psi_1(x / sigma)`` and
``psi_prime_sigma(x) = psi_prime_1(x / sigma)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .exceptions import AssumptionViolated

KINDS = ("huber", "pseudo_huber", "smoothed_huber", "one_sided_logistic")
_ALIASES = {"logistic1": "one_sided_logistic", "logistic": "one_sided_logistic"}

# Default assumption-check grid, in units of sigma.
GRID_HALF_WIDTH = 10.0
GRID_POINTS = 20001


@dataclass(frozen=True)
class RobustLoss:
    """Immutable loss descriptor.

    Parameters
    ----------
    kind : str
        One of ``huber``, ``pseudo_huber``, ``smoothed_huber`` or
        ``one_sided_logistic`` (alias ``logistic1``).
    sigma : float
        Positive scale. Treated as known; never estimated.
    """

    kind: str = "huber"
    sigma: float = 1.0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        sigma = float(self.sigma)
        if not np.isfinite(sigma) or sigma <= 0:
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")
        object.__setattr__(self, "sigma", sigma)

    @property
    def is_huber(self) -> bool:
        return self.kind == "huber"

    # -- values ---------------------------------------------------------------

    def rho(self, x):
        s = self.sigma
        u = np.asarray(x, dtype=float) / s
        a = np.abs(u)
        if self.kind == "huber":
            out = np.where(a <= 1.0, 0.5 * u * u, a - 0.5)
        elif self.kind == "pseudo_huber":
            out = np.sqrt(1.0 + u * u) - 1.0
        elif self.kind == "smoothed_huber":
            out = np.where(
                a <= 1.0,
                0.5 * u * u,
                np.where(a < 2.0, 1.0 / 6.0 - a / 2.0 + a * a - a**3 / 6.0, -7.0 / 6.0 + 1.5 * a),
            )
        else:
            out = np.logaddexp(0.0, u)
        return s * s * out

    def psi(self, x):
        s = self.sigma
        u = np.asarray(x, dtype=float) / s
        if self.kind == "huber":
            out = np.clip(u, -1.0, 1.0)
        elif self.kind == "pseudo_huber":
            out = u / np.sqrt(1.0 + u * u)
        elif self.kind == "smoothed_huber":
            a = np.abs(u)
            mag = np.where(a <= 1.0, a, np.where(a < 2.0, -0.5 + 2.0 * a - 0.5 * a * a, 1.5))
            out = np.sign(u) * mag
        else:
            out = expit(u)
        return s * out

    def psi_prime(self, x):
        """A.e. derivative of psi; equals 1 at the Huber kink ``|x| = sigma``."""
        u = np.asarray(x, dtype=float) / self.sigma
        if self.kind == "huber":
            return (np.abs(u) <= 1.0).astype(float)
        if self.kind == "pseudo_huber":
            return (1.0 + u * u) ** -1.5
        if self.kind == "smoothed_huber":
            a = np.abs(u)
            return np.where(a <= 1.0, 1.0, np.where(a < 2.0, 2.0 - a, 0.0))
        e = expit(u)
        return e * (1.0 - e)

    # -- declared constants ---------------------------------------------------

    @property
    def L(self) -> float:
        """Lipschitz constant of psi."""
        return 0.25 if self.kind == "one_sided_logistic" else 1.0

    @cached_property
    def K_sq(self) -> float:
        """Lower bound on ``psi' + psi**2``.

        For the one-sided logistic loss the infimum over the real line is 0,
        so the bound is taken over the default check range
        ``[-10 sigma, 10 sigma]``.
        """
        s2 = self.sigma**2
        if self.kind == "huber":
            return min(1.0, s2)
        if self.kind == "pseudo_huber":
            # psi' + psi^2 = t^{-3/2} + s2 (1 - 1/t), t = 1 + u^2 >= 1
            t = 2.25 / s2**2
            if t <= 1.0:
                return 1.0
            return t**-1.5 + s2 * (1.0 - 1.0 / t)
        if self.kind == "smoothed_huber":
            def g(a):
                psi1 = -0.5 + 2.0 * a - 0.5 * a * a
                return (2.0 - a) + s2 * psi1 * psi1

            res = minimize_scalar(g, bounds=(1.0, 2.0), method="bounded", options={"xatol": 1e-12})
            return float(min(1.0, 2.25 * s2, g(1.0), g(2.0), res.fun))

        def h(u):
            e = expit(u)
            return e * (1.0 - e) + s2 * e * e

        res = minimize_scalar(h, bounds=(-GRID_HALF_WIDTH, GRID_HALF_WIDTH), method="bounded",
                              options={"xatol": 1e-12})
        return float(min(h(-GRID_HALF_WIDTH), h(GRID_HALF_WIDTH), res.fun))

    def kinks(self) -> np.ndarray:
        """Points where psi' is discontinuous (empty for smooth losses)."""
        if self.kind == "huber":
            return np.array([-self.sigma, self.sigma])
        return np.empty(0)


def make_loss(kind="huber", sigma=1.0) -> RobustLoss:
    if isinstance(kind, RobustLoss):
        return kind
    return RobustLoss(kind, sigma)


@dataclass
class AssumptionReport:
    min_psi2_plus_psiprime: float
    max_lipschitz_ratio: float
    monotone: bool
    K_sq: float
    L: float
    grid: tuple

    @property
    def ok(self) -> bool:
        return (
            self.min_psi2_plus_psiprime >= self.K_sq - 1e-9
            and self.max_lipschitz_ratio <= self.L * (1 + 1e-9)
            and self.monotone
        )


def check_assumption_rho(loss, grid_spec=None, raise_on_violation=True) -> AssumptionReport:
    """Check the loss conditions on a dense grid.

    ``loss`` may be any object exposing ``psi``, ``psi_prime``, ``sigma``,
    ``K_sq`` and ``L``. ``grid_spec`` is ``(lo, hi, num)`` in units of sigma.
    """
    lo, hi, num = grid_spec or (-GRID_HALF_WIDTH, GRID_HALF_WIDTH, GRID_POINTS)
    if lo > -GRID_HALF_WIDTH or hi < GRID_HALF_WIDTH or num < 10_000:
        raise ValueError("grid must cover [-10 sigma, 10 sigma] with at least 1e4 points")
    x = np.linspace(lo, hi, int(num)) * loss.sigma
    psi = np.asarray(loss.psi(x), dtype=float)
    dpsi = np.asarray(loss.psi_prime(x), dtype=float)
    vals = dpsi + psi * psi
    ratios = np.abs(np.diff(psi)) / np.diff(x)
    report = AssumptionReport(
        min_psi2_plus_psiprime=float(vals.min()),
        max_lipschitz_ratio=float(ratios.max()),
        monotone=bool(np.all(np.diff(psi) >= -1e-15)),
        K_sq=float(loss.K_sq),
        L=float(loss.L),
        grid=(float(lo), float(hi), int(num)),
    )
    if raise_on_violation and not report.ok:
        raise AssumptionViolated(
            f"loss {getattr(loss, 'kind', loss)!r}: min(psi'+psi^2)={report.min_psi2_plus_psiprime:.3g} "
            f"(declared K^2={report.K_sq:.3g}), max Lipschitz ratio={report.max_lipschitz_ratio:.3g} "
            f"(declared L={report.L:.3g}), monotone={report.monotone}"
        )
    return report
