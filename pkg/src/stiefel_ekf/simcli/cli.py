"""``simcli``: run convergence experiments, estimate maxvar, redraw plots.

Exit codes: 0 success, 1 configuration error, 2 runtime or numerical
error, 3 I/O error. ``$SIMCLI_OUT`` sets the default output directory.
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..exceptions import StiefelError
from .config import MAXVAR_SOURCES, MEASUREMENT_MODELS, ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="simcli", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--measurement-model", choices=MEASUREMENT_MODELS)
    r.add_argument("--maxvar-source", choices=MAXVAR_SOURCES)
    r.add_argument("--out")

    m = sub.add_parser("maxvar", help="Monte Carlo estimate of the maximal scalar variance")
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--k", type=int, required=True)
    m.add_argument("--samples", type=int, default=100_000)
    m.add_argument("--seed", type=int, default=20250101)
    m.add_argument("--jobs", type=int, default=1)

    g = sub.add_parser("plot", help="redraw panels from a summary CSV")
    g.add_argument("--summary", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--title")
    return p


def _cmd_run(args):
    from .experiment import run_experiment

    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    cfg = load_config(args.config).replace(
        seed=args.seed, measurement_model=args.measurement_model,
        maxvar_source=args.maxvar_source)
    res = run_experiment(cfg, out_dir=args.out, jobs=args.jobs)
    print(f"wrote {res.summary_path}")
    for path in res.plot_paths:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_maxvar(args):
    from ..stats import max_scalar_variance_mc

    if not 1 <= args.k <= args.n:
        raise ConfigError("need 1 <= k <= n")
    if args.samples < 1000:
        raise ConfigError("--samples must be >= 1000")
    try:
        est = max_scalar_variance_mc(args.n, args.k, args.samples, rng=args.seed,
                                     n_jobs=args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"estimate {est.estimate!r}")
    print(f"std_error {est.std_error!r}")
    print(f"failure_fraction {est.failure_fraction!r}")
    return EXIT_OK


def _cmd_plot(args):
    from .plots import emit_plots

    for path in emit_plots(args.summary, args.out, title=args.title):
        print(f"wrote {path}")
    return EXIT_OK


def main(argv=None):
    from .plots import EmptySummaryError

    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"simcli: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "maxvar": _cmd_maxvar, "plot": _cmd_plot}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"simcli: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptySummaryError as exc:
        print(f"simcli: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"simcli: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StiefelError, ArithmeticError, ValueError) as exc:
        print(f"simcli: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
