"""Command line entry point: ``robust-debias {fit,dof,infer,stein-verify,simulate}``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure. On a
numerical failure a JSON diagnostic is printed to stderr and, when an output
path is known, also written next to it as ``<out>.error.json``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from .dof import compute_trace
from .exceptions import NonFiniteInput, RobustDebiasError
from .inference import PrecisionInfo, infer
from .losses import RobustLoss
from .penalties import make_penalty
from .solver import FitResult, SolverOptions, fit
from .validation import check_design

THREADS_ENV = "ROBUST_DEBIAS_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- IO -------------------------------------------------------------------------------

def _float(text, path, lineno):
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{path}:{lineno}: cannot parse {text!r} as a number") from None


def read_data(path):
    """Read ``y, x1..xp`` from a CSV with a header row; returns ``(X, y)``."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        if "y" not in header:
            raise UsageError(f"{path}:1: header needs a 'y' column")
        xcols = [h for h in header if h != "y"]
        expected = [f"x{k}" for k in range(1, len(xcols) + 1)]
        if sorted(xcols, key=lambda s: (len(s), s)) != expected:
            raise UsageError(f"{path}:1: expected feature columns x1..x{len(xcols)}")
        iy = header.index("y")
        ix = [header.index(c) for c in expected]
        rows = []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise UsageError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append([_float(c, path, lineno) for c in row])
    if not rows:
        raise UsageError(f"{path}: no data rows")
    A = np.asarray(rows)
    return A[:, ix], A[:, iy]


def read_matrix(path):
    """Square numeric CSV; a non-numeric first row is treated as a header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    start = 0
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            start = 1
    out = []
    for k, row in enumerate(rows[start:], start=start + 1):
        out.append([_float(c, path, k) for c in row])
    if not out or any(len(r) != len(out) for r in out):
        raise UsageError(f"{path}: expected a square matrix")
    return np.asarray(out)


def write_json(path, obj):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def load_fit(path, X, y):
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    try:
        res = FitResult.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: not a fit result ({exc})") from None
    if res.beta_hat.size != X.shape[1] or res.residuals.size != X.shape[0]:
        raise UsageError(f"{path}: fit dimensions do not match the data")
    r = y - X @ res.beta_hat
    if np.max(np.abs(r - res.residuals)) > 1e-8 * (1.0 + np.max(np.abs(y))):
        raise UsageError(f"{path}: fit residuals do not match the data")
    return res


def resolve_threads(value):
    raw = value if value is not None else os.environ.get(THREADS_ENV, "1")
    if str(raw) == "auto":
        return os.cpu_count() or 1
    try:
        t = int(raw)
    except ValueError:
        raise UsageError(f"threads must be a positive integer or 'auto', got {raw!r}") from None
    if t < 1:
        raise UsageError("threads must be >= 1")
    return t


def parse_coords(text, p):
    if text is None:
        return None
    try:
        coords = [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise UsageError(f"--coords must be comma-separated integers, got {text!r}") from None
    if not coords or min(coords) < 1 or max(coords) > p:
        raise UsageError(f"--coords must lie in 1..{p}")
    return np.asarray(coords) - 1


# -- subcommands -------------------------------------------------------------------------

def _solver_opts(args):
    return SolverOptions(max_iter=args.max_iter, kkt_tol=args.kkt_tol)


def cmd_fit(args):
    X, y = read_data(args.data)
    X, y = check_design(X, y)
    loss = RobustLoss(args.loss, args.sigma)
    pen = make_penalty(args.penalty, args.lam, args.tau, allow_tau_zero=args.allow_tau_zero)
    res = fit(X, y, loss, pen, _solver_opts(args))
    out = res.to_dict()
    write_json(args.out, out)
    return 0


def cmd_dof(args):
    X, y = read_data(args.data)
    X, y = check_design(X, y)
    res = load_fit(args.fit, X, y)
    rep = compute_trace(res, X, y, args.method, h=args.h, probes=args.probes, seed=args.seed,
                        opts=_solver_opts(args), allow_singular=args.allow_singular)
    write_json(args.out, _jsonable({"trace_value": rep.trace_value, "method": rep.method,
                                    "n_hat": rep.n_hat, "df": rep.df,
                                    "diagnostics": rep.diagnostics}))
    return 0


def cmd_infer(args):
    X, y = read_data(args.data)
    X, y = check_design(X, y)
    p = X.shape[1]
    if args.sigma_file:
        Sigma = read_matrix(args.sigma_file)
        if Sigma.shape != (p, p):
            raise UsageError(f"{args.sigma_file}: expected a {p}x{p} matrix")
    elif args.assume_identity:
        Sigma = np.eye(p)
    else:
        raise UsageError("infer needs --sigma-file or --assume-identity")
    res = load_fit(args.fit, X, y)
    coords = parse_coords(args.coords, p)
    rep = compute_trace(res, X, y, args.method, h=args.h, probes=args.probes, seed=args.seed,
                        opts=_solver_opts(args))
    out = infer(res, X, PrecisionInfo(Sigma), rep.trace_value, coords=coords, level=args.level)
    if args.assume_identity:
        out.flags.append("assumed_identity_covariance")
    if res.penalty.tau == 0:
        out.flags.append("outside_assumptions")
    rows = list(out.rows())
    fields = ["j", "beta_hat", "debiased", "lo", "hi", "omega_jj", "v_hat", "flags"]
    fh = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="", encoding="utf-8")
    try:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_stein(args):
    from . import stein

    n, R = args.n, args.radius
    if args.field == "identity":
        fld = stein.identity_field(n, R)
    elif args.field == "linear":
        A = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(7,))).standard_normal((n, n))
        fld = stein.linear_field(A, R)
    else:
        fld = stein.psi_plugin_field(n=n, p=args.p, radius=R, seed=args.seed)
    rep = stein.CHECKS[args.identity](fld, samples=args.samples, seed=args.seed)
    out = rep.to_dict()
    out["field"] = args.field
    out["n"], out["radius"] = n, R
    write_json(args.out, _jsonable(out))
    if not rep.passed:
        _diagnostic(args, RuntimeError(f"{rep.identity} check failed for the {args.field} field"))
        return 2
    return 0


def cmd_simulate(args):
    from . import sim

    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.reps is not None:
        raw["reps"] = args.reps
    raw["threads"] = resolve_threads(args.threads)
    try:
        cfg = sim.SimConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    report = sim.run_experiment(cfg)
    paths = sim.emit_report(report, args.out_dir)
    if args.verbose:
        for p in paths:
            print(p, file=sys.stderr)
    return 0


# -- parser ---------------------------------------------------------------------------

def _common(p, seed_default=0):
    p.add_argument("--seed", type=int, default=seed_default, help="random seed")
    p.add_argument("--threads", default=None,
                   help=f"worker threads or 'auto' (default: ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def _solver_args(p):
    p.add_argument("--max-iter", type=int, default=50_000)
    p.add_argument("--kkt-tol", type=float, default=1e-8)


def _trace_args(p, default="auto"):
    p.add_argument("--method", choices=["auto", "closed", "fd", "hutch"], default=default)
    p.add_argument("--h", type=float, default=None, help="finite-difference step")
    p.add_argument("--probes", type=int, default=100)


def build_parser():
    parser = _Parser(prog="robust-debias", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the penalized M-estimator")
    p.add_argument("--data", required=True, help="CSV with columns y, x1..xp")
    p.add_argument("--loss", default="huber",
                   choices=["huber", "pseudo_huber", "smoothed_huber", "logistic1"])
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--penalty", default="elastic_net", choices=["elastic_net", "ridge"])
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--allow-tau-zero", action="store_true",
                   help="permit tau = 0 (outside the strongly convex setting)")
    p.add_argument("--out", default="-")
    _solver_args(p)
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("dof", help="trace of the Jacobian of psi in y")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    _trace_args(p, default="closed")
    p.add_argument("--allow-singular", action="store_true")
    p.add_argument("--out", default="-")
    _solver_args(p)
    _common(p)
    p.set_defaults(func=cmd_dof)

    p = sub.add_parser("infer", help="debiased estimates and confidence intervals")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sigma-file", help="CSV with the known p x p covariance")
    g.add_argument("--assume-identity", action="store_true")
    p.add_argument("--coords", help="one-based, comma separated (default: all)")
    p.add_argument("--level", type=float, default=0.95)
    _trace_args(p)
    p.add_argument("--out", default="-")
    _solver_args(p)
    _common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("stein-verify", help="Monte-Carlo check of a sphere Stein identity")
    p.add_argument("--identity", required=True, choices=["first", "poincare", "second", "bounds"])
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--field", default="identity", choices=["identity", "linear", "psi-plugin"])
    p.add_argument("--p", type=int, default=20, help="features of the psi-plugin model")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--out", default="-")
    _common(p)
    p.set_defaults(func=cmd_stein)

    p = sub.add_parser("simulate", help="replication study over a (lambda, tau) grid")
    p.add_argument("--config", required=True, help="JSON mirroring SimConfig")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--reps", type=int, default=None, help="override reps in the config")
    _common(p, seed_default=None)
    p.set_defaults(func=cmd_simulate)
    return parser


def _diagnostic(args, exc):
    info = {"error": type(exc).__name__, "message": str(exc),
            "command": getattr(args, "command", None)}
    text = json.dumps(info, indent=1, sort_keys=True)
    print(text, file=sys.stderr)
    out = getattr(args, "out", None) or getattr(args, "out_dir", None)
    if out and out != "-":
        path = os.path.join(out, "error.json") if os.path.isdir(out) else f"{out}.error.json"
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        except OSError:
            pass


def main(argv=None) -> int:
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if args.command != "simulate":
            resolve_threads(args.threads)  # validated; single fits are single-threaded
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", UserWarning)
            return args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RobustDebiasError as exc:
        _diagnostic(args, exc)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        _diagnostic(args, exc)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
