"""Command line front end.

Every subcommand reads and writes flat text files. Each output starts with
'#' lines echoing the run configuration and the library version, floats are
written with 17 significant digits, and all randomness flows from ``--seed``,
so identical invocations produce identical bytes.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .dataio import (
    IngestError,
    RunConfig,
    barycentric_grid,
    expansion_to_text,
    fmt,
    format_rows,
    header_lines,
    ingest,
)
from .density import UniformNull, default_bandwidth, get_kernel, gof_test, spread_kde
from .expfam import fit_mle, fit_model, log_density, sample, theta_from_text, theta_to_text
from .geometry import DomainError, inflate, spread_sample
from .montecarlo import RngStream
from .representer import SingularGramError, interpolate, min_independent_degree, ridge

log = logging.getLogger("comprkhs")


class CliError(Exception):
    """Invalid parameters or inputs; reported without a traceback."""


def _write(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _renorm_mode(args):
    if getattr(args, "renormalize_counts", False):
        return "counts"
    return "on" if getattr(args, "renormalize", False) else "off"


def _load(args, response=False):
    return ingest(
        args.input,
        renormalize=getattr(args, "renormalize", False),
        renormalize_counts=getattr(args, "renormalize_counts", False),
        response=response,
    )


def _config(args, **kw):
    base = dict(
        command=args.command,
        input=getattr(args, "input", None),
        output=args.output,
        seed=getattr(args, "seed", None),
        renormalize=_renorm_mode(args),
    )
    base.update(kw)
    return RunConfig(**base)


def _positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def _non_negative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def _read_theta(path, n_mc, seed):
    try:
        with open(path, encoding="utf-8") as fh:
            model = theta_from_text(fh.read())
    except OSError as exc:
        raise CliError(f"cannot read theta file {path}: {exc}") from exc
    if not np.isfinite(model.log_partition):
        model = fit_model(model.theta, n_mc, seed)
    return model


# --- subcommands -------------------------------------------------------------


def cmd_validate(args):
    ds = _load(args)
    cfg = _config(
        args,
        d=ds.dim,
        extra=(("n", ds.n), ("rows_adjusted", ds.n_adjusted), ("max_adjustment", ds.max_adjustment)),
    )
    lines = header_lines(cfg, __version__)
    if ds.labels:
        lines.append(",".join(ds.labels))
    lines += format_rows(ds.rows)
    _write(args.output, lines)


def cmd_spread(args):
    ds = _load(args)
    pts, wts, owner = spread_sample(ds.rows)
    cfg = _config(args, d=ds.dim, extra=(("n", ds.n), ("n_points", len(pts))))
    lines = header_lines(cfg, __version__)
    lines.append(",".join([f"z{i + 1}" for i in range(ds.dim + 1)] + ["multiplicity", "row"]))
    for p, w, o in zip(pts, wts, owner):
        lines.append(",".join([fmt(v) for v in p] + [str(int(w)), str(int(ds.line_numbers[o]))]))
    _write(args.output, lines)


def _query_points(args, d):
    if args.grid is not None:
        if d != 2:
            raise CliError("--grid needs three-part compositions; use --at for other dimensions")
        return barycentric_grid(args.grid)
    if args.at is not None:
        return ingest(args.at).rows
    raise CliError("give --grid R or --at FILE")


def cmd_kde(args):
    ds = _load(args)
    h = args.h if args.h is not None else default_bandwidth(ds.n, ds.dim)
    kde = spread_kde(ds.rows, get_kernel(args.kernel), h)
    Q = _query_points(args, ds.dim)
    if Q.shape[1] != ds.dim + 1:
        raise CliError("query points and data have different numbers of parts")
    dens = kde.pullback(inflate(Q))
    cfg = _config(
        args, d=ds.dim, h=h, kernel=args.kernel,
        extra=(("n", ds.n), ("grid", args.grid), ("at", args.at)),
    )
    lines = header_lines(cfg, __version__)
    lines.append(",".join([f"x{i + 1}" for i in range(ds.dim + 1)] + ["density"]))
    lines += format_rows(np.hstack([Q, dens[:, None]]))
    _write(args.output, lines)


def cmd_gof(args):
    ds = _load(args)
    if args.null == "uniform":
        null = UniformNull(ds.dim)
    else:
        null = _read_theta(args.null, args.n_mc, args.seed)
    res = gof_test(
        ds.rows, null, get_kernel(args.kernel), args.h, n_sim=args.n_sim, seed=args.seed,
        n_nodes=args.n_nodes, workers=args.workers,
    )
    cfg = _config(
        args, d=ds.dim, h=res.bandwidth, n_sim=args.n_sim, n_mc=args.n_mc, kernel=args.kernel,
        extra=(("null", args.null), ("n", ds.n), ("n_nodes", args.n_nodes)),
    )
    lines = header_lines(cfg, __version__)
    lines += [f"{k}={fmt(v) if isinstance(v, float) else v}" for k, v in res.as_dict().items()]
    _write(args.output, lines)


def _fit_output(args, ds, rep, extra, mu=None):
    cfg = _config(args, d=ds.dim, m=rep.degree_used, mu=mu, extra=extra)
    head = header_lines(cfg, __version__)
    _write(args.output, expansion_to_text(rep.expansion, head).splitlines())
    if args.report:
        lines = list(head)
        lines += [
            f"degree_used={rep.degree_used}",
            f"gram_min_eigenvalue={fmt(rep.gram_min_eigenvalue)}",
            f"max_abs_residual={fmt(rep.max_residual)}",
            f"rkhs_norm_squared={fmt(rep.expansion.norm_squared())}",
            "row,residual",
        ]
        lines += [f"{int(ln)},{fmt(r)}" for ln, r in zip(ds.line_numbers, rep.residuals)]
        _write(args.report, lines)


def cmd_interp(args):
    ds = _load(args, response=True)
    if args.m is not None:
        rep = interpolate(ds.rows, ds.response, args.m, report=True)
    else:
        # the smallest independent degree can still be too ill-conditioned to solve
        m = min_independent_degree(ds.rows, args.m_max)
        while True:
            try:
                rep = interpolate(ds.rows, ds.response, m, report=True)
                break
            except SingularGramError:
                if m >= args.m_max:
                    raise
                m += 1
    _fit_output(args, ds, rep, (("n", ds.n), ("report", args.report)))


def cmd_ridge(args):
    ds = _load(args, response=True)
    rep = ridge(ds.rows, ds.response, args.m, args.mu, report=True)
    _fit_output(args, ds, rep, (("n", ds.n), ("report", args.report)), mu=args.mu)


def _eval_lines(args, model, Q, extra):
    ld = log_density(model, Q)
    cfg = _config(args, d=model.dim, m=model.degree, n_mc=model.mc_samples, extra=extra)
    lines = header_lines(cfg, __version__)
    lines.append(f"# log_partition={fmt(model.log_partition)}")
    lines.append(f"# mc_se={fmt(model.mc_se)}")
    lines.append(",".join([f"x{i + 1}" for i in range(model.dim + 1)] + ["log_density", "density"]))
    lines += format_rows(np.hstack([Q, ld[:, None], np.exp(ld)[:, None]]))
    return lines


def cmd_expfam_eval(args):
    model = _read_theta(args.theta, args.n_mc, args.seed)
    if args.grid is not None:
        if model.dim != 2:
            raise CliError("--grid needs a three-part model")
        Q = barycentric_grid(args.grid)
    elif args.input is not None:
        Q = _load(args).rows
    else:
        raise CliError("give --input FILE or --grid R")
    if Q.shape[1] != model.dim + 1:
        raise CliError("points and model have different numbers of parts")
    _write(args.output, _eval_lines(args, model, Q, (("theta", args.theta), ("grid", args.grid))))


def cmd_expfam_sample(args):
    model = _read_theta(args.theta, args.n_mc, args.seed)
    X = sample(model, args.n, RngStream(args.seed))
    cfg = _config(args, d=model.dim, m=model.degree, extra=(("theta", args.theta), ("n", args.n)))
    lines = header_lines(cfg, __version__)
    lines.append(",".join(f"x{i + 1}" for i in range(model.dim + 1)))
    lines += format_rows(X) if len(X) else []
    _write(args.output, lines)


def cmd_expfam_fit(args):
    ds = _load(args)
    model = fit_mle(ds.rows, args.m, n_mc=args.n_mc, seed=args.seed, max_iter=args.max_iter, tol=args.tol)
    cfg = _config(
        args, d=ds.dim, m=args.m, n_mc=args.n_mc,
        extra=(("n", ds.n), ("max_iter", args.max_iter), ("tol", fmt(args.tol)),
               ("iterations", model.info.iterations), ("converged", model.info.converged)),
    )
    _write(args.output, header_lines(cfg, __version__) + theta_to_text(model).splitlines())


def cmd_grid(args):
    Q = barycentric_grid(args.resolution)
    extra = [("resolution", args.resolution), ("theta", args.theta)]
    if args.theta is not None and args.input is not None:
        raise CliError("give at most one of --theta and --input")
    if args.theta is not None:
        model = _read_theta(args.theta, args.n_mc, args.seed)
        if model.dim != 2:
            raise CliError("grid output is for three-part compositions")
        lines = _eval_lines(args, model, Q, tuple(extra))
        _write(args.output, lines)
        return
    cols = ["x1", "x2", "x3"]
    body = Q
    h = None
    if args.input is not None:
        ds = _load(args)
        if ds.dim != 2:
            raise CliError("grid output is for three-part compositions")
        h = args.h if args.h is not None else default_bandwidth(ds.n, ds.dim)
        kde = spread_kde(ds.rows, get_kernel(args.kernel), h)
        body = np.hstack([Q, kde.pullback(inflate(Q))[:, None]])
        cols.append("density")
        extra.append(("n", ds.n))
    cfg = _config(args, d=2, h=h, kernel=args.kernel if args.input else None, extra=tuple(extra))
    lines = header_lines(cfg, __version__)
    lines.append(",".join(cols))
    lines += format_rows(body)
    _write(args.output, lines)


# --- parser -------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="comprkhs", description="Kernel methods for compositional data.")
    p.add_argument("--version", action="version", version=f"comprkhs {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, data=True, required_input=True):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        if data:
            sp.add_argument("-i", "--input", required=required_input, help="CSV of compositions")
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--renormalize", action="store_true", help="rescale rows whose sum is within 1e-2 of one")
            g.add_argument("--renormalize-counts", action="store_true", help="rescale any row with a positive sum")
        sp.add_argument("-o", "--output", required=True, help="output file")
        return sp

    add("validate", cmd_validate, "check and echo a composition file")
    add("spread", cmd_spread, "write the sign-flip spread of every composition")

    sp = add("kde", cmd_kde, "spread-out kernel density estimate")
    sp.add_argument("--h", type=_positive(float), help="bandwidth (default n^(-1/(d+4)))")
    sp.add_argument("--kernel", default="exponential", choices=["exponential", "linear", "box"])
    sp.add_argument("--grid", type=_positive(int), help="evaluate on the barycentric lattice with R subdivisions")
    sp.add_argument("--at", help="CSV of compositions at which to evaluate")

    sp = add("gof", cmd_gof, "goodness-of-fit test by the ISE of the spread-out estimate")
    sp.add_argument("--null", default="uniform", help="'uniform' or a theta file")
    sp.add_argument("--h", type=_positive(float))
    sp.add_argument("--kernel", default="exponential", choices=["exponential", "linear", "box"])
    sp.add_argument("--n-sim", type=int, default=199)
    sp.add_argument("--n-nodes", type=_positive(int), default=4096)
    sp.add_argument("--n-mc", type=_positive(int), default=1_000_000)
    sp.add_argument("--seed", type=_non_negative_int, default=0)
    sp.add_argument("--workers", type=_positive(int), default=1)

    sp = add("interp", cmd_interp, "minimal-norm interpolation (last column is the response)")
    sp.add_argument("--m", type=_non_negative_int, help="kernel degree (default: smallest independent)")
    sp.add_argument("--m-max", type=_positive(int), default=32)
    sp.add_argument("--report", help="write the fit report here")

    sp = add("ridge", cmd_ridge, "kernel ridge regression (last column is the response)")
    sp.add_argument("--m", type=_non_negative_int, required=True)
    sp.add_argument("--mu", type=_positive(float), required=True)
    sp.add_argument("--report")

    sp = add("expfam-eval", cmd_expfam_eval, "evaluate an exponential-family density", required_input=False)
    sp.add_argument("--theta", required=True)
    sp.add_argument("--grid", type=_positive(int))
    sp.add_argument("--n-mc", type=_positive(int), default=1_000_000)
    sp.add_argument("--seed", type=_non_negative_int, default=0)

    sp = add("expfam-sample", cmd_expfam_sample, "draw compositions from a model", data=False)
    sp.add_argument("--theta", required=True)
    sp.add_argument("--n", type=_non_negative_int, required=True)
    sp.add_argument("--n-mc", type=_positive(int), default=1_000_000)
    sp.add_argument("--seed", type=_non_negative_int, default=0)

    sp = add("expfam-fit", cmd_expfam_fit, "maximum likelihood fit")
    sp.add_argument("--m", type=_non_negative_int, required=True)
    sp.add_argument("--n-mc", type=_positive(int), default=200_000)
    sp.add_argument("--seed", type=_non_negative_int, default=0)
    sp.add_argument("--max-iter", type=_positive(int), default=100)
    sp.add_argument("--tol", type=_positive(float), default=1e-8)

    sp = add("grid", cmd_grid, "barycentric lattice for ternary plots", required_input=False)
    sp.add_argument("--resolution", type=_positive(int), required=True)
    sp.add_argument("--theta", help="attach an exponential-family density")
    sp.add_argument("--h", type=_positive(float))
    sp.add_argument("--kernel", default="exponential", choices=["exponential", "linear", "box"])
    sp.add_argument("--n-mc", type=_positive(int), default=1_000_000)
    sp.add_argument("--seed", type=_non_negative_int, default=0)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, IngestError, DomainError, ValueError, ArithmeticError, np.linalg.LinAlgError,
            RuntimeError) as exc:
        print(f"comprkhs {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
