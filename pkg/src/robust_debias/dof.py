"""Trace of the Jacobian ``y -> psi(y - X beta_hat(y))`` at fixed ``X``.

This trace is the degrees-of-freedom adjustment in the denominators of the
pivots and of the variance estimate. Three routes are provided:

* a closed form for Huber + Elastic-Net, ``trace = n_hat - df`` with
  ``df = trace[D X_S (X_S^T D X_S + n tau I)^{-1} X_S^T D]``;
* central finite differences over the ``n`` coordinates of ``y``;
* a Hutchinson estimator with Rademacher probes.

For smooth (twice differentiable) penalties the Jacobian is the matrix
``V = D - D X M X^T D`` with ``M = (X^T D X + n G)^{-1}``;
:func:`vnm_cross_check` builds it and checks its operator bounds.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, eigvalsh

from .exceptions import BoundViolated, KinkProximity, SingularActiveGram
from .solver import FitResult, SolverOptions, fit


@dataclass
class TraceReport:
    trace_value: float
    method: str
    n_hat: float
    df: float
    diagnostics: dict = field(default_factory=dict)


def huber_enet_trace(result: FitResult, X, penalty=None, allow_singular=False) -> TraceReport:
    """Closed-form trace for the Huber loss with an Elastic-Net penalty.

    With ``tau = 0`` the active Gram ``X_S^T D X_S`` must be invertible; if
    it is numerically rank deficient a :class:`SingularActiveGram` is raised,
    or, with ``allow_singular``, the pseudo-inverse is used (``df = rank``)
    and the report is flagged.
    """
    if not result.loss.is_huber:
        raise ValueError("closed-form trace needs the Huber loss")
    penalty = penalty or result.penalty
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    quad = result.psi_prime_vec == 1.0
    S = result.active_set
    n_hat = int(quad.sum())
    diag = {"active_size": int(S.size), "singular": False}
    if S.size == 0 or n_hat == 0:
        return TraceReport(float(n_hat), "closed_form", n_hat, 0.0, diag)

    XQS = X[np.ix_(quad, S)]
    # eigenvalues of X_QS^T X_QS; df = sum ev / (ev + n tau) is exactly |S| at tau = 0
    ev = np.clip(eigvalsh(XQS.T @ XQS), 0.0, None)
    ntau = n * penalty.tau
    if ntau == 0:
        cutoff = ev.max() * max(XQS.shape) * np.finfo(float).eps
        rank = int(np.count_nonzero(ev > cutoff))
        diag["condition"] = float(ev.max() / ev.min()) if ev.min() > 0 else np.inf
        if rank < S.size:
            if not allow_singular:
                raise SingularActiveGram(
                    f"active Gram has rank {rank} < |S| = {S.size} and tau = 0"
                )
            diag["singular"] = True
            df = float(rank)
        else:
            df = float(np.sum(ev / ev))
    else:
        df = float(np.sum(ev / (ev + ntau)))
        diag["condition"] = float((ev.max() + ntau) / (ev.min() + ntau))
    return TraceReport(n_hat - df, "closed_form", n_hat, df, diag)


def default_step(y, loss=None) -> float:
    """``1e-4 (1 + ||y||_inf)``, capped at ``1e-3 sigma`` when a loss is given.

    The cap keeps heavy-tailed responses from pushing the step to the scale
    of the loss kinks, where most observations would have to be skipped.
    """
    h = 1e-4 * (1.0 + float(np.max(np.abs(y))))
    if loss is not None:
        h = min(h, 1e-3 * loss.sigma)
    return h


def _refit_psi(X, y, loss, penalty, opts, beta0):
    return fit(X, y, loss, penalty, opts, beta0=beta0, check_input=False).psi_vec


def finite_difference_trace(X, y, loss, penalty, h=None, opts=None, base=None) -> TraceReport:
    """``sum_i [psi_i(y + h e_i) - psi_i(y - h e_i)] / (2h)`` with warm-started refits.

    Observations whose residual lies within ``10 h`` of a kink of psi' are
    skipped and listed in ``diagnostics['skipped']``; a
    :class:`KinkProximity` warning is issued when that list is non-empty.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    h = default_step(y, loss) if h is None else float(h)
    opts = opts or SolverOptions()
    base = base or fit(X, y, loss, penalty, opts)
    kinks = loss.kinks()
    if kinks.size:
        near = np.min(np.abs(base.residuals[:, None] - kinks[None, :]), axis=1) < 10 * h
    else:
        near = np.zeros(n, dtype=bool)
    skipped = np.flatnonzero(near)
    total = 0.0
    e = np.zeros(n)
    for i in range(n):
        if near[i]:
            continue
        e[i] = h
        up = _refit_psi(X, y + e, loss, penalty, opts, base.beta_hat)[i]
        down = _refit_psi(X, y - e, loss, penalty, opts, base.beta_hat)[i]
        e[i] = 0.0
        total += (up - down) / (2 * h)
    if skipped.size:
        warnings.warn(f"skipped {skipped.size} observations near a kink", KinkProximity, stacklevel=2)
    n_hat = float(base.n_hat)
    return TraceReport(
        float(total),
        "finite_difference",
        n_hat,
        n_hat - float(total),
        {"step": h, "refits": 2 * (n - skipped.size), "skipped": skipped.tolist()},
    )


def hutchinson_trace(X, y, loss, penalty, probes=100, seed=None, h=None, opts=None,
                     base=None) -> TraceReport:
    """Stochastic trace ``mean_k v_k^T [psi(y + h v_k) - psi(y - h v_k)] / (2h)``.

    ``probes`` is either a count of Rademacher probes drawn from ``seed`` or
    an explicit ``(m, n)`` array of probe vectors.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    h = default_step(y, loss) if h is None else float(h)
    opts = opts or SolverOptions()
    base = base or fit(X, y, loss, penalty, opts)
    if np.ndim(probes) == 0:
        rng = np.random.default_rng(seed)
        V = rng.choice(np.array([-1.0, 1.0]), size=(int(probes), n))
    else:
        V = np.atleast_2d(np.asarray(probes, dtype=float))
    vals = np.empty(V.shape[0])
    for k, v in enumerate(V):
        up = _refit_psi(X, y + h * v, loss, penalty, opts, base.beta_hat)
        down = _refit_psi(X, y - h * v, loss, penalty, opts, base.beta_hat)
        vals[k] = v @ (up - down) / (2 * h)
    m = vals.size
    se = float(vals.std(ddof=1) / np.sqrt(m)) if m > 1 else np.inf
    n_hat = float(base.n_hat)
    est = float(vals.mean())
    return TraceReport(est, "hutchinson", n_hat, n_hat - est,
                       {"probes": m, "step": h, "se": se, "samples": vals})


@dataclass
class VNMReport:
    M: np.ndarray
    V: np.ndarray
    dxm_norm: float
    dxm_bound: float
    slack: dict
    trace_V: float
    trace_fd: float | None = None

    @property
    def ok(self) -> bool:
        return all(v >= -1e-10 for v in self.slack.values())


def vnm_cross_check(result: FitResult, X, y=None, h=None, opts=None, raise_on_violation=True) -> VNMReport:
    """Build ``M`` and ``V`` for a ridge fit and check their bounds.

    Checked, as smallest eigenvalue or norm gaps stored in ``slack``:

    * ``dxm``: ``||D X M||_op <= (1/2) sqrt(L / (n tau))``
    * ``M``: ``M <= I / (n tau)``
    * ``V_lower``: ``D / (L ||X||_op^2 / (n tau) + 1) <= V``
    * ``V_upper``: ``V <= D``
    * ``D_upper``: ``D <= L I``

    If ``y`` is given, ``trace(V)`` is also compared with the
    finite-difference trace at the same data.
    """
    penalty, loss = result.penalty, result.loss
    if penalty.lam != 0.0:
        raise ValueError("vnm_cross_check needs a twice differentiable (ridge) penalty")
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    tau, L = penalty.tau, loss.L
    d = result.psi_prime_vec
    DX = d[:, None] * X
    M = np.linalg.inv(X.T @ DX + n * tau * np.eye(p))
    M = 0.5 * (M + M.T)
    V = np.diag(d) - DX @ M @ DX.T
    V = 0.5 * (V + V.T)

    dxm = float(np.linalg.norm(DX @ M, 2))
    dxm_bound = 0.5 * np.sqrt(L / (n * tau))
    op_sq = float(np.linalg.norm(X, 2)) ** 2 / n
    c = 1.0 / (L * op_sq / tau + 1.0)
    D = np.diag(d)
    slack = {
        "dxm": dxm_bound - dxm,
        "M": float(eigh(np.eye(p) / (n * tau) - M, eigvals_only=True)[0]),
        "V_lower": float(eigh(V - c * D, eigvals_only=True)[0]),
        "V_upper": float(eigh(D - V, eigvals_only=True)[0]),
        "D_upper": float(L - d.max()),
    }
    report = VNMReport(M, V, dxm, dxm_bound, slack, float(np.trace(V)))
    if y is not None:
        fd = finite_difference_trace(X, y, loss, penalty, h=h, opts=opts, base=result)
        report.trace_fd = fd.trace_value
    if raise_on_violation and not report.ok:
        bad = {k: v for k, v in slack.items() if v < -1e-10}
        raise BoundViolated(f"matrix bounds violated: {bad}")
    return report


def compute_trace(result: FitResult, X, y, method="auto", h=None, probes=100, seed=None,
                  opts=None, allow_singular=False) -> TraceReport:
    """Dispatch to a trace method; ``auto`` uses the closed form when it applies."""
    if method == "auto":
        method = "closed" if result.loss.is_huber else "fd"
    if method in ("closed", "closed_form"):
        return huber_enet_trace(result, X, allow_singular=allow_singular)
    if method in ("fd", "finite_difference"):
        return finite_difference_trace(X, y, result.loss, result.penalty, h=h, opts=opts, base=result)
    if method in ("hutch", "hutchinson"):
        return hutchinson_trace(X, y, result.loss, result.penalty, probes=probes, seed=seed, h=h,
                                opts=opts, base=result)
    raise ValueError(f"unknown trace method {method!r}")
