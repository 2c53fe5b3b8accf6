"""Strongly convex penalties: value, proximal map and KKT distance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Penalty:
    """Elastic-Net ``lam * ||b||_1 + tau * ||b||^2 / 2``; ridge is ``lam = 0``.

    ``tau = 0`` (the pure lasso) is outside the strong-convexity regime and
    is refused unless ``allow_tau_zero`` is set. Only the simulation harness
    sets it, to reproduce the ``tau = 0`` table columns.
    """

    kind: str = "elastic_net"
    lam: float = 0.0
    tau: float = 1.0
    allow_tau_zero: bool = False

    def __post_init__(self):
        if self.kind not in ("elastic_net", "ridge"):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        lam, tau = float(self.lam), float(self.tau)
        if self.kind == "ridge" and lam != 0.0:
            raise ValueError("ridge penalty has no l1 part; use elastic_net")
        if not (np.isfinite(lam) and lam >= 0):
            raise ValueError(f"lambda must be >= 0, got {self.lam!r}")
        if not np.isfinite(tau) or tau < 0 or (tau == 0 and not self.allow_tau_zero):
            raise ValueError(f"tau must be > 0 (strong convexity), got {self.tau!r}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "tau", tau)

    @property
    def strongly_convex(self) -> bool:
        return self.tau > 0

    def value(self, b) -> float:
        b = np.asarray(b, dtype=float)
        return float(self.lam * np.abs(b).sum() + 0.5 * self.tau * (b @ b))

    def prox(self, v, t: float):
        """``argmin_b ||b - v||^2 / (2 t) + g(b)``: soft-threshold, then shrink."""
        if t <= 0:
            raise ValueError("prox step must be positive")
        v = np.asarray(v, dtype=float)
        st = np.sign(v) * np.maximum(np.abs(v) - t * self.lam, 0.0)
        return st / (1.0 + t * self.tau)

    def subgradient(self, b, rng=None):
        """An element of the subdifferential at ``b``.

        Zero coordinates get a uniform draw from ``[-lam, lam]`` when ``rng``
        is given, else 0.
        """
        b = np.asarray(b, dtype=float)
        u = self.lam * np.sign(b) + self.tau * b
        zero = b == 0
        if rng is not None and zero.any():
            u[zero] = rng.uniform(-self.lam, self.lam, size=int(zero.sum()))
        return u

    def kkt_distance(self, b, u) -> float:
        """Sup-norm distance from ``u`` to the subdifferential at ``b``."""
        b = np.asarray(b, dtype=float)
        u = np.asarray(u, dtype=float)
        if b.size == 0:
            return 0.0
        res = np.where(
            b != 0,
            np.abs(u - self.lam * np.sign(b) - self.tau * b),
            np.maximum(np.abs(u) - self.lam, 0.0),
        )
        return float(res.max())


def elastic_net(lam, tau, allow_tau_zero=False) -> Penalty:
    return Penalty("elastic_net", lam, tau, allow_tau_zero)


def ridge(tau) -> Penalty:
    return Penalty("ridge", 0.0, tau)


def make_penalty(kind="elastic_net", lam=0.0, tau=1.0, allow_tau_zero=False) -> Penalty:
    if isinstance(kind, Penalty):
        return kind
    if kind == "ridge":
        return ridge(tau)
    return elastic_net(lam, tau, allow_tau_zero)
