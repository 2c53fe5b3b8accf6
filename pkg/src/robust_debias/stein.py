"""Monte-Carlo checks of Stein-type identities for ``z ~ Unif(S^{n-1}(R))``.

A field ``f`` is given on the sphere and extended radially,
``f(x) = f(R x / ||x||)``, so that its Jacobian at a point of the sphere is
already tangential. With ``T = grad f(z)^T P_z`` (``P_z = I - z z^T / R^2``),
the checked relations are::

    first order   E[f^T z] = R^2 / (n - 1) E[tr T]
    Poincare      E||f - E f||^2 <= R^2 / (n - 2) E||T||_F^2
    second order  E[(n f^T z / R^2 - tr T)^2]
                    = n / R^2 E||f||^2 + n / (n - 2) E tr(T^2) - 2 / (n - 2) E (tr T)^2
                    <= n / R^2 E||f||^2 + E||T||_F^2 / (1 - 2 / n)

and, for a normalized field ``f = g / ||g||`` with
``xi = f^T z - R^2 / n tr T``::

    E[(xi - E[f]^T z)^2]       <= 2 R^4 / (n^2 - 2n) E||T||_F^2
    E[(||f|| - ||E f||)^2]     <= R^2 / (n - 2) E||T||_F^2

Every check compares sample means and passes within three standard errors of
the per-sample difference of the two sides (one-sided for inequalities).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonFiniteEvaluation
from .losses import RobustLoss
from .penalties import Penalty, elastic_net
from .solver import SolverOptions, fit

N_SE = 3.0
# Roundoff allowance for finite-difference Jacobians, relative to the sides' size,
# plus an absolute floor for sides that are exactly zero.
FD_FLOOR = 1e-8
ABS_FLOOR = 1e-14
BATCH = 2000
NORM_GUARD = 1e-12


def sample_sphere(n, R=1.0, rng=None, size=None):
    """``R zeta / ||zeta||`` with ``zeta ~ N(0, I_n)``; shape ``(n,)`` or ``(size, n)``."""
    if n < 3:
        raise ValueError("sphere identities need n >= 3")
    rng = np.random.default_rng(rng)
    shape = (n,) if size is None else (size, n)
    zeta = rng.standard_normal(shape)
    return R * zeta / np.linalg.norm(zeta, axis=-1, keepdims=True)


def projector(z):
    z = np.asarray(z, dtype=float)
    return np.eye(z.size) - np.outer(z, z) / (z @ z)


class SphereField:
    """Vector field on ``S^{n-1}(R)`` with its radial extension.

    ``func`` maps an ``(m, n)`` batch of points on the sphere to ``(m, n)``
    values. ``jacobian``, if given, maps the same batch to ``(m, n, n)``
    Jacobians ``d f_k / d x_l`` of ``func``; otherwise central differences
    of the radial extension are used.
    """

    def __init__(self, n, radius, func, jacobian=None, name="field"):
        if n < 3:
            raise ValueError("sphere identities need n >= 3")
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.n = int(n)
        self.radius = float(radius)
        self.func = func
        self.jacobian = jacobian
        self.name = name

    def extension(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        on_sphere = self.radius * X / np.linalg.norm(X, axis=1, keepdims=True)
        out = np.asarray(self.func(on_sphere), dtype=float).reshape(X.shape[0], -1)
        if not np.isfinite(out).all():
            raise NonFiniteEvaluation(f"{self.name} returned non-finite values")
        return out

    def check_radial(self, Z, scales=(0.5, 3.0), tol=1e-8):
        base = self.extension(Z)
        for c in scales:
            if np.max(np.abs(self.extension(c * Z) - base)) > tol * max(1.0, np.abs(base).max()):
                raise NonFiniteEvaluation(f"{self.name} is not invariant under radial scaling")

    def value_and_jacobian(self, Z, h=None):
        """Values and tangential Jacobians ``grad f(z)^T P_z`` at points of the sphere."""
        Z = np.atleast_2d(Z)
        F = self.extension(Z)
        if self.jacobian is not None:
            J = np.asarray(self.jacobian(Z), dtype=float)
        else:
            J = _fd_jacobians(self, Z, h)
        return F, _right_project(J, Z)


def _right_project(J, Z):
    # J P_z = J - (J z) z^T / ||z||^2
    Jz = np.einsum("mkl,ml->mk", J, Z)
    return J - Jz[:, :, None] * Z[:, None, :] / np.einsum("ml,ml->m", Z, Z)[:, None, None]


def _fd_jacobians(fld, Z, h=None):
    m, n = Z.shape
    h = 1e-5 * fld.radius if h is None else h
    eye = np.eye(n) * h
    up = (Z[:, None, :] + eye[None]).reshape(m * n, n)
    down = (Z[:, None, :] - eye[None]).reshape(m * n, n)
    diff = (fld.extension(up) - fld.extension(down)).reshape(m, n, -1) / (2 * h)
    # diff[s, l, k] = d f_k / d x_l
    return np.transpose(diff, (0, 2, 1))


def tangential_jacobian(fld: SphereField, z, h=None):
    """``grad f(z)^T P_z`` at a single point ``z`` of the sphere."""
    z = np.asarray(z, dtype=float)
    if not np.isclose(np.linalg.norm(z), fld.radius, rtol=1e-10):
        raise ValueError("z must lie on the sphere")
    _, T = fld.value_and_jacobian(z[None, :], h)
    return T[0]


# -- fields -------------------------------------------------------------------

def identity_field(n, R=1.0):
    return SphereField(n, R, lambda Z: Z, lambda Z: np.broadcast_to(np.eye(n), (len(Z), n, n)), "identity")


def linear_field(A, R=1.0, analytic=False):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    jac = (lambda Z: np.broadcast_to(A, (len(Z), n, n))) if analytic else None
    return SphereField(n, R, lambda Z: Z @ A.T, jac, "linear")


def constant_field(c, R=1.0):
    c = np.asarray(c, dtype=float)
    n = c.size
    return SphereField(n, R, lambda Z: np.broadcast_to(c, Z.shape).copy(),
                       lambda Z: np.zeros((len(Z), n, n)), "constant")


class PsiPluginField(SphereField):
    """Score vector of a fitted Huber + Elastic-Net model as a function of one design direction.

    With the nuisance part ``W = X Q_j`` and the noise frozen, the design and
    response at a point ``z`` are ``X(z) = W + z e_j^T`` and
    ``y(z) = W beta + beta_j z + eps``; the field is
    ``psi(y(z) - X(z) beta_hat(z))``. Its Jacobian is obtained by implicit
    differentiation of the stationarity equations on the active set, which
    is exact wherever the sign and quadratic-zone patterns are locally
    constant (almost everywhere).
    """

    def __init__(self, W, beta, eps, j, radius, loss: RobustLoss, penalty: Penalty, opts=None):
        W = np.asarray(W, dtype=float)
        n = W.shape[0]
        self.W = W
        self.beta = np.asarray(beta, dtype=float)
        self.eps = np.asarray(eps, dtype=float)
        self.j = int(j)
        self.loss = loss
        self.penalty = penalty
        self.opts = opts or SolverOptions()
        self._offset = W @ self.beta + self.eps
        self._warm = None
        super().__init__(n, radius, self._values, None, "psi-plugin")
        self.jacobian = self._jacobians

    def _fit(self, z):
        X = self.W.copy()
        X[:, self.j] += z
        y = self._offset + self.beta[self.j] * z
        res = fit(X, y, self.loss, self.penalty, self.opts, beta0=self._warm, check_input=False)
        self._warm = res.beta_hat
        return X, res

    def _values(self, Z):
        return np.array([self._fit(z)[1].psi_vec for z in Z])

    def _jac_one(self, X, res):
        n = X.shape[0]
        d = res.psi_prime_vec
        S = res.active_set
        gap = self.beta[self.j] - res.beta_hat[self.j]
        J = gap * np.diag(d)
        if S.size:
            XS = X[:, S]
            H = (XS.T * d) @ XS + n * self.penalty.tau * np.eye(S.size)
            B = gap * (XS.T * d)
            hit = np.flatnonzero(S == self.j)
            if hit.size:
                B[hit[0]] += res.psi_vec
            dbeta = np.linalg.solve(H, B)
            J -= d[:, None] * (XS @ dbeta)
        return J

    def _jacobians(self, Z):
        out = np.empty((len(Z), self.n, self.n))
        for k, z in enumerate(Z):
            X, res = self._fit(z)
            out[k] = self._jac_one(X, res)
        return out

    def value_and_jacobian(self, Z, h=None):
        Z = np.atleast_2d(Z)
        F = np.empty_like(Z)
        J = np.empty((len(Z), self.n, self.n))
        for k, z in enumerate(Z):
            X, res = self._fit(self.radius * z / np.linalg.norm(z))
            F[k] = res.psi_vec
            J[k] = self._jac_one(X, res)
        return F, _right_project(J, Z)


def psi_plugin_field(n=50, p=20, j=0, radius=1.0, lam=0.1, tau=0.5, sigma=1.0, seed=0,
                     noise="cauchy"):
    """Frozen random instance (identity covariance) for :class:`PsiPluginField`."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    X[:, j] = 0.0  # W = X Q_j with Sigma = I
    beta = (rng.random(p) < 0.3).astype(float)
    beta[j] = 1.0
    eps = rng.standard_cauchy(n) if noise == "cauchy" else rng.standard_normal(n)
    return PsiPluginField(X, beta, eps, j, radius, RobustLoss("huber", sigma), elastic_net(lam, tau))


# -- Monte-Carlo draws ----------------------------------------------------------

@dataclass
class FieldDraws:
    """Per-sample summaries of ``(z, f(z), T(z))``.

    ``normalized_view`` holds the same summaries for ``f / ||f||`` when they
    were computed in the same pass.
    """

    n: int
    radius: float
    seed: int
    z: np.ndarray
    f: np.ndarray
    fz: np.ndarray
    tr: np.ndarray
    fro2: np.ndarray
    tr_sq: np.ndarray
    rejected: int = 0
    normalized: bool = False
    normalized_view: "FieldDraws | None" = None

    @property
    def samples(self):
        return self.z.shape[0]


def _normalize(Z, F, T):
    norms = np.linalg.norm(F, axis=1)
    keep = norms >= NORM_GUARD
    Z, F, T, norms = Z[keep], F[keep], T[keep], norms[keep]
    F = F / norms[:, None]
    # d(g/||g||) = (I - f f^T) dg / ||g||
    T = (T - F[:, :, None] * np.einsum("mk,mkl->ml", F, T)[:, None, :]) / norms[:, None, None]
    return Z, F, T, int((~keep).sum())


def _summaries(Z, F, T):
    return (Z, F, np.einsum("mk,mk->m", F, Z), np.einsum("mkk->m", T),
            np.einsum("mkl,mkl->m", T, T), np.einsum("mkl,mlk->m", T, T))


def draw(fld: SphereField, samples, seed=0, normalize=False, h=None, both=False) -> FieldDraws:
    """Sample ``samples`` points and reduce each Jacobian to its scalar summaries.

    Batches use independent RNG substreams spawned from ``seed`` and are
    concatenated in order, so the result does not depend on batch timing.
    With ``normalize`` the field is replaced by ``f / ||f||``; points where
    ``||f|| < 1e-12`` are rejected and counted. ``both`` returns the plain
    summaries with the normalized ones attached as ``normalized_view``,
    from a single evaluation of the field.
    """
    n, R = fld.n, fld.radius
    n_batches = -(-int(samples) // BATCH)
    streams = np.random.SeedSequence(seed).spawn(n_batches)
    plain, normed = [], []
    rejected = 0
    left = int(samples)
    for b, ss in enumerate(streams):
        m = min(BATCH, left)
        left -= m
        Z = sample_sphere(n, R, np.random.default_rng(ss), size=m)
        if b == 0:
            fld.check_radial(Z[: min(m, 8)])
        F, T = fld.value_and_jacobian(Z, h)
        if normalize or both:
            Zn, Fn, Tn, rej = _normalize(Z, F, T)
            rejected += rej
            normed.append(_summaries(Zn, Fn, Tn))
        if not normalize:
            plain.append(_summaries(Z, F, T))

    def assemble(parts, is_norm):
        cols = [np.concatenate(c) for c in zip(*parts)]
        return FieldDraws(n, R, seed, *cols, rejected=rejected if is_norm else 0, normalized=is_norm)

    if normalize:
        return assemble(normed, True)
    out = assemble(plain, False)
    if both:
        out.normalized_view = assemble(normed, True)
    return out


# -- reports ------------------------------------------------------------------

@dataclass
class SteinReport:
    identity: str
    lhs_estimate: float
    rhs_estimate: float
    mc_se_lhs: float
    mc_se_rhs: float
    mc_se_diff: float
    samples: int
    seed: int
    kind: str = "equality"
    passed: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "identity", "lhs_estimate", "rhs_estimate", "mc_se_lhs", "mc_se_rhs", "mc_se_diff",
            "samples", "seed", "kind", "passed")}
        d["extra"] = self.extra
        return d


def _se(x):
    return float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def _compare(name, lhs, rhs, seed, kind):
    diff = lhs - rhs
    L, Rv = float(lhs.mean()), float(rhs.mean())
    se_d = _se(diff)
    slack = N_SE * se_d + FD_FLOOR * (abs(L) + abs(Rv)) + ABS_FLOOR
    gap = L - Rv
    passed = abs(gap) <= slack if kind == "equality" else gap <= slack
    return SteinReport(name, L, Rv, _se(lhs), _se(rhs), se_d, int(lhs.size), seed, kind, bool(passed))


def _draws(fld, samples, seed, normalize=False):
    if isinstance(fld, FieldDraws):
        if normalize and not fld.normalized and fld.normalized_view is not None:
            return fld.normalized_view
        if fld.normalized != normalize:
            raise ValueError("draws were computed with a different normalization")
        return fld
    return draw(fld, samples, seed, normalize=normalize)


def check_first_order(fld, samples=100_000, seed=0) -> SteinReport:
    d = _draws(fld, samples, seed)
    R2, n = d.radius**2, d.n
    return _compare("first_order", d.fz, R2 / (n - 1) * d.tr, d.seed, "equality")


def check_poincare(fld, samples=100_000, seed=0) -> SteinReport:
    d = _draws(fld, samples, seed)
    R2, n, m = d.radius**2, d.n, d.samples
    centered = d.f - d.f.mean(axis=0)
    lhs = np.einsum("mk,mk->m", centered, centered) * m / (m - 1)
    return _compare("poincare", lhs, R2 / (n - 2) * d.fro2, d.seed, "inequality")


def check_second_order(fld, samples=100_000, seed=0) -> SteinReport:
    d = _draws(fld, samples, seed)
    R2, n = d.radius**2, d.n
    f2 = np.einsum("mk,mk->m", d.f, d.f)
    lhs = (n / R2 * d.fz - d.tr) ** 2
    rhs_eq = n / R2 * f2 + n / (n - 2) * d.tr_sq - 2.0 / (n - 2) * d.tr**2
    rhs_ineq = n / R2 * f2 + d.fro2 / (1.0 - 2.0 / n)
    rep = _compare("second_order", lhs, rhs_eq, d.seed, "equality")
    ineq = _compare("second_order_inequality", lhs, rhs_ineq, d.seed, "inequality")
    rep.extra["inequality"] = ineq.to_dict()
    rep.passed = rep.passed and ineq.passed
    return rep


def check_normalized_bounds(raw_field, samples=100_000, seed=0) -> SteinReport:
    d = _draws(raw_field, samples, seed, normalize=True)
    R2, n, m = d.radius**2, d.n, d.samples
    fbar = d.f.mean(axis=0)
    xi = d.fz - R2 / n * d.tr
    lhs1 = (xi - d.z @ fbar) ** 2
    rhs1 = 2 * R2**2 / (n * n - 2 * n) * d.fro2
    lhs2 = (np.linalg.norm(d.f, axis=1) - np.linalg.norm(fbar)) ** 2
    rhs2 = R2 / (n - 2) * d.fro2
    rep = _compare("prop_bounds", lhs1, rhs1, d.seed, "inequality")
    second = _compare("prop_bounds_norm", lhs2, rhs2, d.seed, "inequality")
    rep.extra["norm_deviation"] = second.to_dict()
    rep.extra["rejected"] = d.rejected
    rep.extra["samples_drawn"] = m + d.rejected
    rep.passed = rep.passed and second.passed
    return rep


CHECKS = {
    "first": check_first_order,
    "poincare": check_poincare,
    "second": check_second_order,
    "bounds": check_normalized_bounds,
}
