"""Command-line entry point: ``python -m gris <subcommand>``.

Subcommands::

    run --config FILE [--jobs N]        replicate runs, per-run CSV + summary.json
    report --dir DIR                    bias^2 / variance / MSE tables, SE box statistics
    ground-truth --target NAME --out F  analytic moments or defensive IS (logreg)
    contour --target NAME --out F ...   log-density grid
    tune --config FILE --grid a,b,c     pick delta by across-run variance
    print-config                        default configuration as TOML

``GRIS_DATA_DIR`` points at the German credit file, ``GRIS_SEED``
overrides ``run.base_seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import harness
from .targets import LaplaceError

log = logging.getLogger("gris")


def _target_table(args) -> dict:
    tcfg = {"name": args.target}
    for item in args.param or []:
        key, _, value = item.partition("=")
        if not key or not value:
            raise harness.ConfigError(f"--param expects key=value, got {item!r}")
        tcfg[key] = json.loads(value)
    if getattr(args, "data", None):
        tcfg["data_path"] = args.data
    return tcfg


def cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    out = harness.run_experiment(cfg, jobs=args.jobs, output_dir=args.out)
    print(f"wrote {cfg.run.n_runs} runs to {out}")
    return 0


def cmd_report(args) -> int:
    paths = harness.report(args.dir)
    for p in paths.values():
        print(p)
    return 0


def cmd_ground_truth(args) -> int:
    tcfg = _target_table(args)
    truth = harness.compute_ground_truth(tcfg, n_samples=args.n_samples, seed=args.seed,
                                         ess_floor=args.ess_floor)
    doc = harness.ground_truth_to_json(truth)
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2)
    if truth.info.get("low_ess"):
        print(f"effective sample size {truth.info['ess']:.1f} is below the floor "
              f"{args.ess_floor:g}; ground truth not certified", file=sys.stderr)
        return 3
    print(f"wrote {truth.source} ground truth to {args.out}")
    return 0


def cmd_contour(args) -> int:
    target = harness.build_target(_target_table(args))
    dims = tuple(args.dims) if args.dims else None
    rows, meta = harness.contour_grid(target, (args.xmin, args.xmax), (args.ymin, args.ymax),
                                      args.nx, args.ny, dims)
    harness.write_contour(args.out, rows, meta)
    print(f"wrote {len(rows)} grid points to {args.out} ({meta['kind']})")
    return 0


def cmd_tune(args) -> int:
    cfg = harness.load_config(args.config)
    grid = [float(v) for v in args.grid.split(",") if v.strip()]
    if not grid:
        raise harness.ConfigError("--grid needs at least one value")
    best, table = harness.tune_delta(cfg, grid, jobs=args.jobs)
    print("delta,pooled_variance")
    for delta, var in table:
        print(f"{delta:.17g},{var:.17g}")
    print(f"best delta: {best:g}")
    return 0


def cmd_print_config(args) -> int:
    if args.algorithm:
        cfg = harness.parse_config({"target": harness.DEFAULT_CONFIG["target"],
                                    "algorithm": {"name": args.algorithm},
                                    "run": harness.DEFAULT_CONFIG["run"]})
        sys.stdout.write(harness.dump_config(cfg))
    else:
        sys.stdout.write(harness.dump_config(harness.parse_config(harness.DEFAULT_CONFIG)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gris", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a configured experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", default=None, help="override run.output_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate a results directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_report)

    def target_args(p):
        p.add_argument("--target", required=True, choices=harness.TARGETS)
        p.add_argument("--param", action="append", metavar="KEY=JSON",
                       help="target constructor parameter, e.g. --param s=100")
        p.add_argument("--data", default=None, help="German credit file (logreg)")

    p = sub.add_parser("ground-truth", help="write ground-truth moments as JSON")
    target_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ess-floor", type=float, default=1000.0)
    p.set_defaults(func=cmd_ground_truth)

    p = sub.add_parser("contour", help="write a log-density grid as CSV")
    target_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--nx", type=int, default=100)
    p.add_argument("--ny", type=int, default=100)
    p.add_argument("--xmin", type=float, required=True)
    p.add_argument("--xmax", type=float, required=True)
    p.add_argument("--ymin", type=float, required=True)
    p.add_argument("--ymax", type=float, required=True)
    p.add_argument("--dims", type=int, nargs=2, default=None)
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("tune", help="grid-search delta")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="comma-separated delta values")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("print-config", help="print the default configuration")
    p.add_argument("--algorithm", choices=harness.ALGORITHMS, default=None)
    p.set_defaults(func=cmd_print_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except (ValueError, OSError, LaplaceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
