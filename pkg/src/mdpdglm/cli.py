"""Command-line interface.

Subcommands::

    fit       fit the MDPDE to a CSV data set
    test      fit, then run a Wald-type test of L beta = l0
    table     regenerate the ARE or contiguous-power table as CSV
    ifgrid    influence-function values on a (y, x) grid as long-format CSV
    simulate  run a level/power study from a key=value config file
    power     fixed-alternative power or required sample size

Exit status is 0 on success, 1 on usage or input errors and 2 when the
numerics fail (no convergence, singular matrices).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .asymp import CovariateDistribution, are
from .errors import DomainError, NonConvergence, RankDeficient, Singular
from .estim import fit_mdpde
from .model import Sample, get_model
from .robust import figure_grid, if_grid_scan, panel_grid
from .simharness import SimConfig, run_level_power_study
from .wald import (LinearHypothesis, contiguous_power, power_fixed_alternative,
                   required_sample_size, wald_statistic)

__all__ = ["main", "build_parser", "load_csv", "are_table", "contiguous_power_table",
           "TABLE_ALPHAS", "ARE_CONFIGS", "POWER_CONFIGS"]

log = logging.getLogger("mdpdglm")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

TABLE_ALPHAS = (0.0, 0.05, 0.1, 0.25, 0.4, 0.5, 0.7, 1.0)
# (mu_x, beta0) rows of the efficiency table
ARE_CONFIGS = ((0.0, 1.0), (0.0, 0.5), (1.0, 1.0), (1.0, 0.5), (5.0, 1.0), (5.0, 0.5))
# (d, mu_x, beta0) rows of the contiguous power table
POWER_CONFIGS = ((1.0, 0.0, 1.0), (1.0, 0.0, 0.5), (1.0, 1.0, 1.0), (1.0, 1.0, 0.5),
                 (1.0, 5.0, 1.0), (1.0, 5.0, 0.5),
                 (2.0, 0.0, 1.0), (2.0, 0.0, 0.5), (2.0, 1.0, 1.0), (2.0, 1.0, 0.5))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# -- input ------------------------------------------------------------------

def load_csv(path, y_col="y", x_cols=None, intercept=False):
    """Read a header-first CSV into a :class:`~mdpdglm.model.Sample`.

    ``x_cols`` defaults to every column other than ``y_col``.  Blank or
    non-numeric cells are errors that name their line number.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise UsageError(f"{path}: empty file, a header row is required") from None
    if y_col not in header:
        raise UsageError(f"{path}: no column named {y_col!r}")
    if x_cols is None:
        x_cols = [h for h in header if h != y_col]
    if not x_cols:
        raise UsageError(f"{path}: at least one covariate column is required")
    missing = [c for c in x_cols if c not in header]
    if missing:
        raise UsageError(f"{path}: unknown column(s) {', '.join(missing)}")
    yi = header.index(y_col)
    xi = [header.index(c) for c in x_cols]
    ys, xs = [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise UsageError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(row[j]) for j in [yi, *xi]]
        except ValueError:
            raise UsageError(f"{path}: line {line}: non-numeric or missing value") from None
        if not all(math.isfinite(v) for v in values):
            raise UsageError(f"{path}: line {line}: non-finite value")
        ys.append(values[0])
        xs.append(values[1:])
    if not ys:
        raise UsageError(f"{path}: no data rows")
    X = np.array(xs)
    names = list(x_cols)
    if intercept:
        X = np.hstack([np.ones((X.shape[0], 1)), X])
        names = ["(intercept)", *names]
    return Sample(np.array(ys), X), names


def _floats(text, what):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r}") from None


def _hypothesis(L_text, l0_text, k):
    rows = [_floats(r, "L row") for r in L_text.split(";") if r.strip()]
    if not rows or any(len(r) != k for r in rows):
        raise UsageError(f"every row of L needs {k} entries")
    l0 = _floats(l0_text, "l0") if l0_text is not None else [0.0] * len(rows)
    try:
        return LinearHypothesis(rows, l0)
    except DomainError as exc:
        raise UsageError(str(exc)) from None


# -- output -----------------------------------------------------------------

def _emit(records, fmt, out):
    """Write a list of dicts as CSV (one header) or ``key=value`` blocks."""
    if fmt == "csv":
        writer = csv.DictWriter(out, fieldnames=list(records[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(records)
    else:
        for i, rec in enumerate(records):
            if i:
                out.write("\n")
            for key, value in rec.items():
                out.write(f"{key}={value}\n")


def _num(x):
    return f"{x:.10g}"


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    try:
        return open(path, "w", encoding="utf-8", newline=""), True
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


# -- tables -----------------------------------------------------------------

def are_table(alphas=TABLE_ALPHAS, configs=ARE_CONFIGS):
    """Rows ``(mu_x, beta0, ARE at each alpha)``."""
    model = get_model("poisson")
    rows = []
    for mu, b in configs:
        cov = CovariateDistribution.univariate_normal(mu)
        rows.append((mu, b, [are(model, cov, [b], a) for a in alphas]))
    return rows


def contiguous_power_table(alphas=TABLE_ALPHAS, configs=POWER_CONFIGS, level=0.05):
    """Rows ``(d, mu_x, beta0, power at each alpha)`` for ``H0: beta = beta0``."""
    model = get_model("poisson")
    rows = []
    for d, mu, b in configs:
        cov = CovariateDistribution.univariate_normal(mu)
        hyp = LinearHypothesis([[1.0]], [b])
        rows.append((d, mu, b, [contiguous_power(model, cov, [b], hyp, d, level, a) for a in alphas]))
    return rows


def _label(x):
    return f"{x:g}"


# -- commands ---------------------------------------------------------------

def _fit(args):
    model = get_model(args.family)
    x_cols = args.x.split(",") if args.x else None
    sample, names = load_csv(args.csv, args.y, x_cols, args.intercept)
    fit = fit_mdpde(model, sample, args.alpha)
    if not model.dispersion_known:
        names = [*names, "phi"]
    return fit, names, sample


def cmd_fit(args):
    fit, names, _ = _fit(args)
    se = fit.std_errors
    if args.format == "csv":
        recs = [{"parameter": nm, "estimate": _num(v), "std_error": _num(s)}
                for nm, v, s in zip(names, fit.eta_hat, se)]
    else:
        rec = {"family": args.family, "alpha": _num(fit.alpha), "n": fit.n}
        for nm, v, s in zip(names, fit.eta_hat, se):
            rec[f"estimate[{nm}]"] = _num(v)
            rec[f"std_error[{nm}]"] = _num(s)
        rec.update(converged=str(fit.converged).lower(), iterations=fit.iterations,
                   gradient_norm=f"{fit.gradient_norm:.3e}")
        recs = [rec]
    _emit(recs, args.format, sys.stdout)
    return EXIT_OK


def cmd_test(args):
    fit, names, sample = _fit(args)
    hyp = _hypothesis(args.L, args.l0, sample.k)
    res = wald_statistic(fit, hyp, levels=(args.level,))
    rec = {"alpha": _num(fit.alpha), "statistic": _num(res.statistic), "df": res.df,
           "p_value": _num(res.p_value), "level": _num(args.level),
           "decision": "reject" if res.reject_at[args.level] else "do not reject"}
    _emit([rec], args.format, sys.stdout)
    return EXIT_OK


def cmd_table(args):
    if args.which == "ARE":
        head = ["mu_x", "beta0"]
        rows = [(mu, b, v) for mu, b, v in are_table()]
        body = [[_label(mu), _label(b), *(f"{x:.3f}" for x in v)] for mu, b, v in rows]
    else:
        head = ["d", "mu_x", "beta0"]
        body = [[_label(d), _label(mu), _label(b), *(f"{x:.3f}" for x in v)]
                for d, mu, b, v in contiguous_power_table(level=args.level)]
    head += [_label(a) for a in TABLE_ALPHAS]
    out, close = _open_out(args.output)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(head)
        writer.writerows(body)
    finally:
        if close:
            out.close()
    return EXIT_OK


def cmd_ifgrid(args):
    model = get_model(args.family)
    if not model.dispersion_known:
        raise UsageError("ifgrid supports the poisson family")
    cov = CovariateDistribution.univariate_normal(args.mu_x, args.sd_x)
    y, x = panel_grid(args.mu_x, args.sd_x, args.beta, x_step=args.x_step)
    if args.y_max is not None or args.x_min is not None or args.x_max is not None:
        x_min = x[0] if args.x_min is None else args.x_min
        x_max = x[-1] if args.x_max is None else args.x_max
        y, x = figure_grid(y[-1] if args.y_max is None else args.y_max, x_min, x_max, args.x_step)
    hyp = LinearHypothesis([[1.0]], [args.beta])
    grid = if_grid_scan(model, cov, [args.beta], args.alpha, args.which, y, x,
                        hypothesis=hyp, d=args.d, level=args.level)
    out, close = _open_out(args.output)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["y_t", "x_t", "value"])
        for yy, xx, v in grid.long_format():
            writer.writerow([_label(yy), _label(xx), f"{v:.10g}"])
    finally:
        if close:
            out.close()
    if not args.quiet:
        print(f"sup_abs={grid.sup_abs:.10g}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc.strerror}") from None
    config = SimConfig.from_text(text)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    report = run_level_power_study(config, workers=args.workers)
    recs = [{k: (_num(v) if isinstance(v, float) else v) for k, v in row.as_row().items()}
            for row in report.rows]
    out, close = _open_out(args.output)
    try:
        _emit(recs, "csv" if args.output not in (None, "-") else args.format, out)
    finally:
        if close:
            out.close()
    return EXIT_OK


def cmd_power(args):
    model = get_model(args.family)
    cov = CovariateDistribution.univariate_normal(args.mu_x, args.sd_x)
    hyp = LinearHypothesis([[1.0]], [args.beta0])
    star = [args.beta_star]
    if (args.n is None) == (args.target is None):
        raise UsageError("give exactly one of --n and --target")
    if args.n is not None:
        val = power_fixed_alternative(model, cov, star, hyp, args.n, args.level, args.alpha, args.slots)
        rec = {"n": args.n, "power": _num(val)}
    else:
        val = required_sample_size(model, cov, star, hyp, args.target, args.level, args.alpha, args.slots)
        rec = {"target_power": _num(args.target), "n": val}
    rec = {"alpha": _num(args.alpha), "level": _num(args.level), "beta0": _num(args.beta0),
           "beta_star": _num(args.beta_star), **rec}
    _emit([rec], args.format, sys.stdout)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _nonneg(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _level(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--alpha", type=_nonneg, default=argparse.SUPPRESS,
                        help="DPD tuning parameter (default 0, the MLE)")
    common.add_argument("--level", type=_level, default=argparse.SUPPRESS,
                        help="test level (default 0.05)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the simulation seed")
    common.add_argument("--family", choices=["poisson", "normal"], default=argparse.SUPPRESS)
    common.add_argument("--format", choices=["kv", "csv"], default=argparse.SUPPRESS,
                        help="structured output on stdout (default kv)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="mdpdglm", parents=[common],
                     description="Robust GLM fitting and Wald-type tests by density power divergence.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(p):
        p.add_argument("csv", help="input CSV with a header row")
        p.add_argument("--y", default="y", help="response column (default y)")
        p.add_argument("--x", help="comma-separated covariate columns (default: all others)")
        p.add_argument("--intercept", action="store_true", help="prepend a constant column")

    p = sub.add_parser("fit", parents=[common], help="fit the MDPDE")
    data_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", parents=[common], help="Wald-type test of L beta = l0")
    data_args(p)
    p.add_argument("--L", required=True, help="rows separated by ';', entries by ','")
    p.add_argument("--l0", help="comma-separated right-hand side (default zeros)")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("table", parents=[common], help="regenerate a table as CSV")
    p.add_argument("which", choices=["ARE", "ContiguousPower"])
    p.add_argument("-o", "--output", help="output path (default stdout)")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("ifgrid", parents=[common], help="influence function grid as CSV")
    p.add_argument("which", choices=["estimator", "if2", "power"])
    p.add_argument("--beta", type=float, default=1.0, help="true (null) slope")
    p.add_argument("--mu-x", type=float, default=0.0)
    p.add_argument("--sd-x", type=float, default=1.0)
    p.add_argument("--d", type=float, default=1.0, help="contiguous direction for 'power'")
    p.add_argument("--y-max", type=int, help="largest y_t (default: panel grid)")
    p.add_argument("--x-min", type=float, help="default: mu_x - 3 sd_x")
    p.add_argument("--x-max", type=float, help="default: mu_x + 3 sd_x")
    p.add_argument("--x-step", type=float, default=0.05)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_ifgrid)

    p = sub.add_parser("simulate", parents=[common], help="level/power study from a config file")
    p.add_argument("config", help="key=value config file")
    p.add_argument("-o", "--output")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power", parents=[common], help="fixed-alternative power or sample size")
    p.add_argument("--beta0", type=float, required=True, help="null value of the slope")
    p.add_argument("--beta-star", type=float, required=True, help="alternative slope")
    p.add_argument("--mu-x", type=float, default=0.0)
    p.add_argument("--sd-x", type=float, default=1.0)
    p.add_argument("--n", type=_positive_int)
    p.add_argument("--target", type=_level, help="target power; prints the sample size")
    p.add_argument("--slots", choices=["both", "first"], default="both")
    p.set_defaults(func=cmd_power)
    return parser


_DEFAULTS = {"alpha": 0.0, "level": 0.05, "seed": None, "family": "poisson", "format": "kv",
             "quiet": False}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in _DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, RankDeficient, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NonConvergence, Singular) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
