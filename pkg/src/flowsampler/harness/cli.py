"""Command-line entry point: ``flowsampler run|sweep|reference|plot``."""

from __future__ import annotations

import argparse
import glob
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from .. import diagnostics, targets
from ..errors import ConfigError, FormatError, NumericalError
from .config import load_config, load_raw, parse_lambdas, sweep_configs
from .experiment import ExperimentError, output_path, run_experiment
from .plot import emit_plot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _run_one(cfg):
    run_experiment(cfg)
    return str(output_path(cfg))


def cmd_run(args):
    cfg = load_config(args.config)
    print(_run_one(cfg))


def cmd_sweep(args):
    raw = load_raw(args.config)
    lambdas = parse_lambdas(args.lambdas) if args.lambdas else None
    cfgs = sweep_configs(raw, lambdas, source=str(args.config))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            paths = list(pool.map(_run_one, cfgs))
    else:
        paths = [_run_one(c) for c in cfgs]
    for p in paths:
        print(p)


def cmd_reference(args):
    spec = {"kind": args.target, "lambda": args.lam}
    try:
        target = targets.from_spec(spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"cannot build target {spec}: {exc}") from exc
    if target.kind not in ("gaussian", "logconcave", "rosenbrock"):
        raise ConfigError(f"no reference statistics for {args.target}")
    icfg = diagnostics.IntegrationConfig(n_points=args.n_points)
    stats = diagnostics.cached_reference(target, args.probe_seed, icfg)
    json.dump({"target": spec, "probe_seed": args.probe_seed, **stats.to_json()},
              sys.stdout, indent=1)
    sys.stdout.write("\n")


def cmd_plot(args):
    paths = sorted(glob.glob(args.input))
    if not paths:
        raise FormatError(f"no files match {args.input!r}")
    print(emit_plot(paths, args.output, "log_y" if args.log_y else "linear"))


def build_parser():
    parser = argparse.ArgumentParser(prog="flowsampler",
                                     description="Gradient-flow sampling experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a config for several overrides / lambda values")
    p.add_argument("--config", required=True)
    p.add_argument("--lambda", dest="lambdas", default=None,
                   help="comma-separated lambda values, e.g. 0.01,0.1,1")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reference", help="print reference statistics as JSON")
    p.add_argument("--target", required=True, choices=("gaussian", "logconcave", "rosenbrock"))
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--n-points", type=int, default=10_000_000)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("plot", help="plot trajectory CSVs to an SVG")
    p.add_argument("--input", required=True, help="glob of trajectory CSV files")
    p.add_argument("--output", required=True)
    p.add_argument("--log-y", action="store_true")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if exc.numerical else EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
