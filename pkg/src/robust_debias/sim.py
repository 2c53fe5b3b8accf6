"""Replication harness for Huber + Elastic-Net inference on Gaussian designs.

One instance: rows of ``X`` are ``N(0, Sigma)`` with ``Sigma`` built once
from a Rademacher matrix ``A`` (``2p x p``), ``beta`` has iid
Bernoulli(``beta_prob``) entries and the noise is Cauchy, Student t(2) or
normal. For each ``(lambda, tau)`` cell the harness records ``n_hat``,
``df``, ``|S|``, ``sqrt(V_hat / n)``, the pivot z-score for one target
coordinate and whether the 95% interval covers it.

Randomness is keyed on ``(seed, stream, rep_index)`` through
:class:`numpy.random.SeedSequence`, so a replication does not depend on
how many others run or in which order.
"""
from __future__ import annotations

import csv
import io
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

from .dof import huber_enet_trace
from .exceptions import MaxIterExceeded, RobustDebiasError, TooFewSamples, ZeroPsi
from .inference import PrecisionInfo, normal_quantile, pivot_oracle
from .losses import RobustLoss
from .penalties import elastic_net
from .solver import SolverOptions, fit

NOISES = ("cauchy", "t2", "normal")
DESIGNS = ("literal", "normalized")

_STREAM_SIGMA, _STREAM_REP, _STREAM_BETA = 0, 1, 2


@dataclass
class SimConfig:
    """Simulation settings.

    ``sigma_design='literal'`` uses ``A^T A / n``; ``'normalized'`` uses
    ``A^T A / (2p)`` so that ``E[Sigma] = I``. ``lambda_scales`` are
    multiples of ``n^{-1/2}``. ``beta_mode='per_rep'`` redraws ``beta`` in
    every replication, ``'fixed'`` draws it once from the master seed.
    ``target_coord`` is one-based.
    """

    n: int = 200
    p: int = 300
    reps: int = 1000
    noise: str = "cauchy"
    sigma_design: str = "literal"
    beta_mode: str = "per_rep"
    beta_prob: float = 0.1
    lambda_scales: tuple = (1.0, 2.0)
    tau_grid: tuple = (0.1, 0.0)
    loss_sigma: float = 1.0
    seed: int = 0
    target_coord: int = 1
    threads: int = 1
    kkt_tol: float = 1e-8
    level: float = 0.95

    def __post_init__(self):
        self.lambda_scales = tuple(float(v) for v in np.atleast_1d(self.lambda_scales))
        self.tau_grid = tuple(float(v) for v in np.atleast_1d(self.tau_grid))
        self.validate()

    def validate(self):
        if self.reps < 2:
            raise ValueError("reps must be at least 2")
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if self.noise not in NOISES:
            raise ValueError(f"noise must be one of {NOISES}")
        if self.sigma_design not in DESIGNS:
            raise ValueError(f"sigma_design must be one of {DESIGNS}")
        if self.beta_mode not in ("per_rep", "fixed"):
            raise ValueError("beta_mode must be 'per_rep' or 'fixed'")
        if not 1 <= self.target_coord <= self.p:
            raise ValueError("target_coord must lie in 1..p")
        if any(t < 0 for t in self.tau_grid) or any(s <= 0 for s in self.lambda_scales):
            raise ValueError("tau must be >= 0 and lambda scales > 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def j(self):
        return self.target_coord - 1

    def cells(self):
        return [(s, t) for s in self.lambda_scales for t in self.tau_grid]

    def to_dict(self):
        d = asdict(self)
        d["lambda_scales"] = list(self.lambda_scales)
        d["tau_grid"] = list(self.tau_grid)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


def _rng(cfg, *key):
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=key))


@lru_cache(maxsize=8)
def _design(seed, n, p, variant):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAM_SIGMA,)))
    A = rng.choice(np.array([-1.0, 1.0]), size=(2 * p, p))
    scale = n if variant == "literal" else 2 * p
    Sigma = A.T @ A / scale
    chol = np.linalg.cholesky(Sigma)  # fails loudly if Sigma is not SPD
    return Sigma, chol, PrecisionInfo(Sigma)


def design(cfg: SimConfig):
    """``(Sigma, cholesky factor, PrecisionInfo)``, shared by all replications."""
    return _design(cfg.seed, cfg.n, cfg.p, cfg.sigma_design)


def draw_noise(u, law):
    """Inverse-CDF transform of uniforms ``u`` in (0, 1)."""
    if law == "cauchy":
        return np.tan(np.pi * (u - 0.5))
    if law == "t2":
        return (2.0 * u - 1.0) / np.sqrt(2.0 * u * (1.0 - u))
    if law == "normal":
        return ndtri(u)
    raise ValueError(f"unknown noise law {law!r}")


def _uniform_open(rng, size):
    # random() lies in [0, 1); map 0 away so the quantile transforms stay finite
    u = rng.random(size)
    return np.where(u == 0.0, np.finfo(float).tiny, u)


def gen_instance(cfg: SimConfig, rep_index: int):
    """``(X, y, beta, Sigma)`` for one replication; bit-reproducible."""
    Sigma, chol, _ = design(cfg)
    rng = _rng(cfg, _STREAM_REP, int(rep_index))
    X = rng.standard_normal((cfg.n, cfg.p)) @ chol.T
    if cfg.beta_mode == "fixed":
        beta = (_rng(cfg, _STREAM_BETA).random(cfg.p) < cfg.beta_prob).astype(float)
        rng.random(cfg.p)  # keep the stream layout identical across modes
    else:
        beta = (rng.random(cfg.p) < cfg.beta_prob).astype(float)
    eps = draw_noise(_uniform_open(rng, cfg.n), cfg.noise)
    y = X @ beta + eps
    return X, y, beta, Sigma


# -- one cell -------------------------------------------------------------------

@dataclass
class CellReport:
    noise: str
    lambda_scale: float
    lam: float
    tau: float
    n_hat: np.ndarray
    df: np.ndarray
    support: np.ndarray
    sqrt_v: np.ndarray
    zscores: np.ndarray
    covered: np.ndarray
    identity_gap: np.ndarray
    failures: dict
    nonconverged: int = 0
    singular: int = 0

    @property
    def label(self):
        return f"{self.noise}_lam{self.lambda_scale:g}_tau{self.tau:g}"

    @property
    def reps(self):
        return self.n_hat.size

    @property
    def ok(self):
        return np.isfinite(self.zscores)

    @property
    def outside_assumptions(self):
        # the normality theory needs tau > 0; tau = 0 cells are an empirical extension
        return self.tau == 0.0

    def stat(self, name):
        x = getattr(self, name)[self.ok]
        m = x.size
        sd = float(x.std(ddof=1)) if m > 1 else float("nan")
        return (float(x.mean()) if m else float("nan"), sd, float(sd / np.sqrt(m)) if m else float("nan"))

    @property
    def coverage(self):
        return float(self.covered[self.ok].mean()) if self.ok.any() else float("nan")

    def ks(self):
        return ks_normal(self.zscores[self.ok])


def _one_rep(cfg, lam, tau, r):
    X, y, beta, _ = gen_instance(cfg, r)
    prec = design(cfg)[2]
    j = cfg.j
    loss = RobustLoss("huber", cfg.loss_sigma)
    pen = elastic_net(lam, tau, allow_tau_zero=True)
    out = {"nonconverged": False, "singular": False, "failure": None}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = fit(X, y, loss, pen, SolverOptions(kkt_tol=cfg.kkt_tol))
    out["nonconverged"] = any(issubclass(w.category, MaxIterExceeded) for w in caught)
    tr = huber_enet_trace(res, X, pen, allow_singular=True)
    out["singular"] = tr.diagnostics["singular"]
    out.update(n_hat=tr.n_hat, df=tr.df, support=float(res.active_set.size))
    t = tr.trace_value
    psi_norm = res.psi_norm
    if abs(t) < 1e-8 * cfg.n:
        out["failure"] = "degenerate_trace"
        return out
    if psi_norm == 0:
        out["failure"] = "zero_psi"
        return out
    piv = pivot_oracle(res, prec, X, t, j, beta[j])
    om = prec.omega[j]
    zj = prec.z(X, j)
    alt = (t * (res.beta_hat[j] - beta[j]) + om * (zj @ res.psi_vec)) / (psi_norm * np.sqrt(om))
    center = res.beta_hat[j] + om * (res.psi_vec @ zj) / t
    half = normal_quantile(cfg.level) * np.sqrt(om) * psi_norm / abs(t)
    out.update(sqrt_v=psi_norm / t, z=piv.z_xi_prime, gap=abs(alt - piv.z_xi_prime),
               covered=bool(abs(center - beta[j]) <= half))
    return out


def run_cell(cfg: SimConfig, lambda_scale: float, tau: float, progress=None) -> CellReport:
    """Run all replications of one ``(lambda, tau)`` cell.

    Per-replication failures (degenerate trace, zero score vector, other
    numerical errors) are counted and leave NaN entries; they never abort
    the cell. Results are gathered in replication order.
    """
    lam = lambda_scale / np.sqrt(cfg.n)

    def task(r):
        try:
            return _one_rep(cfg, lam, tau, r)
        except ZeroPsi:
            return {"failure": "zero_psi"}
        except RobustDebiasError as exc:
            return {"failure": type(exc).__name__}

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            rows = list(pool.map(task, range(cfg.reps)))
    else:
        rows = []
        for r in range(cfg.reps):
            rows.append(task(r))
            if progress is not None:
                progress(r)

    def col(key, default=np.nan):
        return np.array([row.get(key, default) for row in rows], dtype=float)

    failures = {}
    for row in rows:
        if row.get("failure"):
            failures[row["failure"]] = failures.get(row["failure"], 0) + 1
    return CellReport(
        noise=cfg.noise, lambda_scale=float(lambda_scale), lam=float(lam), tau=float(tau),
        n_hat=col("n_hat"), df=col("df"), support=col("support"), sqrt_v=col("sqrt_v"),
        zscores=col("z"), covered=col("covered", False).astype(bool), identity_gap=col("gap"),
        failures=failures,
        nonconverged=sum(bool(row.get("nonconverged")) for row in rows),
        singular=sum(bool(row.get("singular")) for row in rows),
    )


# -- normality diagnostics ------------------------------------------------------

def kolmogorov_sf(x, terms=100):
    """``P(K > x)`` for the Kolmogorov distribution.

    Uses ``2 sum (-1)^{k-1} exp(-2 k^2 x^2)`` for ``x >= 1`` and the
    theta-function form of the CDF below, where the alternating series
    converges slowly.
    """
    terms = max(int(terms), 25)
    if x <= 0:
        return 1.0
    k = np.arange(1, terms + 1)
    if x >= 1.0:
        s = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k**2 * x**2))
        return float(min(max(s, 0.0), 1.0))
    cdf = np.sqrt(2 * np.pi) / x * np.sum(np.exp(-((2 * k - 1) ** 2) * np.pi**2 / (8 * x**2)))
    return float(min(max(1.0 - cdf, 0.0), 1.0))


def ks_normal(samples, min_samples=50):
    """One-sample KS statistic against N(0, 1) and its asymptotic p-value."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = x.size
    if m < min_samples:
        raise TooFewSamples(f"need at least {min_samples} samples, got {m}")
    F = ndtr(x)
    i = np.arange(1, m + 1)
    D = float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))
    return D, kolmogorov_sf(np.sqrt(m) * D)


def qq_pairs(z):
    """(theoretical, empirical) quantile pairs, both ascending."""
    z = np.sort(np.asarray(z, dtype=float))
    m = z.size
    return ndtri((np.arange(1, m + 1) - 0.5) / m), z


def histogram(z, bins=30, lo=-4.0, hi=4.0):
    """Density histogram on a fixed range; values outside are counted separately."""
    z = np.asarray(z, dtype=float)
    counts, edges = np.histogram(z, bins=bins, range=(lo, hi))
    width = (hi - lo) / bins
    return counts, edges, counts / (z.size * width), int(np.sum((z < lo) | (z > hi)))


def box_stats(x):
    """Quartiles and 1.5 IQR whiskers (clamped to the data)."""
    x = np.sort(np.asarray(x, dtype=float))
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    lo, hi = inside.min(), inside.max()
    return {"q1": q1, "median": med, "q3": q3, "whisker_lo": lo, "whisker_hi": hi,
            "n_outliers": int(np.sum((x < lo) | (x > hi)))}


# -- experiment -----------------------------------------------------------------

@dataclass
class ExperimentReport:
    config: SimConfig
    cells: list = field(default_factory=list)

    METRICS = ("n_hat", "df", "support", "sqrt_v")

    def cell(self, lambda_scale, tau):
        for c in self.cells:
            if c.lambda_scale == lambda_scale and c.tau == tau:
                return c
        raise KeyError((lambda_scale, tau))

    def summary_rows(self):
        for c in self.cells:
            row = {"cell": c.label, "noise": c.noise, "lambda_scale": c.lambda_scale,
                   "lambda": c.lam, "tau": c.tau, "reps": c.reps, "ok": int(c.ok.sum())}
            for name in self.METRICS:
                mean, sd, se = c.stat(name)
                row[f"{name}_mean"], row[f"{name}_sd"], row[f"{name}_se"] = mean, sd, se
            if c.ok.sum() >= 50:
                row["ks_stat"], row["ks_pvalue"] = c.ks()
            else:
                row["ks_stat"] = row["ks_pvalue"] = float("nan")
            row["coverage"] = c.coverage
            row["failures"] = sum(c.failures.values())
            row["singular"] = c.singular
            row["nonconverged"] = c.nonconverged
            row["outside_assumptions"] = int(c.outside_assumptions)
            yield row


def run_experiment(cfg: SimConfig, progress=None) -> ExperimentReport:
    report = ExperimentReport(cfg)
    for s, t in cfg.cells():
        report.cells.append(run_cell(cfg, s, t, progress))
    return report


# -- output -----------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if np.isfinite(v) else str(float(v))
    return str(v)


def _csv(rows):
    rows = list(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(rows[0]))
    for row in rows:
        w.writerow([_fmt(v) for v in row.values()])
    return buf.getvalue()


def _svg_frame(title, w=480, h=360):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">{title}</text>',
    ]


def hist_svg(z, title, bins=30, lo=-4.0, hi=4.0):
    _, edges, dens, outside = histogram(z, bins, lo, hi)
    W, H, L, T, B = 480, 360, 50, 35, 40
    pw, ph = W - L - 20, H - T - B
    ymax = max(float(dens.max()), 0.4) * 1.1
    sx = lambda v: L + (v - lo) / (hi - lo) * pw  # noqa: E731
    sy = lambda v: T + ph - v / ymax * ph  # noqa: E731
    out = _svg_frame(title, W, H)
    for k, d in enumerate(dens):
        x0, x1 = sx(edges[k]), sx(edges[k + 1])
        out.append(f'<rect x="{x0:.2f}" y="{sy(d):.2f}" width="{x1 - x0:.2f}" '
                   f'height="{ph - (sy(d) - T):.2f}" fill="#9ecae1" stroke="#3182bd"/>')
    grid = np.linspace(lo, hi, 161)
    pdf = np.exp(-grid**2 / 2) / np.sqrt(2 * np.pi)
    pts = " ".join(f"{sx(g):.2f},{sy(v):.2f}" for g, v in zip(grid, pdf))
    out.append(f'<polyline points="{pts}" fill="none" stroke="red" stroke-width="1.5"/>')
    out.append(f'<line x1="{L}" y1="{T + ph}" x2="{L + pw}" y2="{T + ph}" stroke="black"/>')
    for v in range(int(lo), int(hi) + 1):
        out.append(f'<text x="{sx(v):.2f}" y="{T + ph + 15}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{v}</text>')
    out.append(f'<text x="{W - 20}" y="{T + 12}" text-anchor="end" font-family="sans-serif" '
               f'font-size="10">n={len(z)}, outside range={outside}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def qq_svg(z, title):
    theo, emp = qq_pairs(z)
    W, H, L, T, B = 400, 400, 50, 35, 40
    side = min(W - L - 20, H - T - B)
    span = float(max(4.0, np.abs(theo).max(), min(np.abs(emp).max(), 8.0)))
    sx = lambda v: L + (v + span) / (2 * span) * side  # noqa: E731
    sy = lambda v: T + side - (v + span) / (2 * span) * side  # noqa: E731
    out = _svg_frame(title, W, H)
    out.append(f'<rect x="{L}" y="{T}" width="{side}" height="{side}" fill="none" stroke="black"/>')
    for a, b in zip(theo, np.clip(emp, -span, span)):
        out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="1.5" fill="#3182bd"/>')
    out.append(f'<line x1="{sx(-span):.2f}" y1="{sy(-span):.2f}" x2="{sx(span):.2f}" '
               f'y2="{sy(span):.2f}" stroke="red" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_report(report: ExperimentReport) -> dict:
    """All output files as ``{name: text}``; raises before anything is written."""
    if not report.cells:
        raise ValueError("report has no cells")
    files = {}
    for c in report.cells:
        z = c.zscores[c.ok]
        if z.size == 0:
            raise ValueError(f"cell {c.label} has no z-scores")
    files["summary.csv"] = _csv(report.summary_rows())
    box_rows = []
    for c in report.cells:
        z = c.zscores[c.ok]
        files[f"zscores_{c.label}.json"] = json.dumps({
            "cell": c.label, "noise": c.noise, "lambda": c.lam, "lambda_scale": c.lambda_scale,
            "tau": c.tau, "target_coord": report.config.target_coord,
            "outside_assumptions": c.outside_assumptions, "zscores": [float(v) for v in z],
        }, indent=1) + "\n"
        files[f"hist_{c.label}.svg"] = hist_svg(z, f"z-scores, {c.label}")
        files[f"qq_{c.label}.svg"] = qq_svg(z, f"QQ against N(0,1), {c.label}")
        row = {"cell": c.label, "noise": c.noise, "lambda_scale": c.lambda_scale, "tau": c.tau}
        row.update(box_stats(c.sqrt_v[c.ok]))
        box_rows.append(row)
    files["boxplot_data.csv"] = _csv(box_rows)
    files["config.json"] = json.dumps(report.config.to_dict(), indent=1, sort_keys=True) + "\n"
    return files


def emit_report(report: ExperimentReport, out_dir) -> list:
    """Write ``summary.csv``, per-cell z-scores (JSON), SVG histogram and QQ plots, and
    ``boxplot_data.csv``. Returns the written paths."""
    files = render_report(report)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths.append(path)
    return paths
