"""Command line front end for the experiment harness.

    mollifem run consistency --dim 2 --mesh quad --out table.csv
    mollifem run h-convergence --dim 3 --solution cubic3d --ml-range 1..3
    mollifem run eps-convergence --strict
    mollifem run comparison
    mollifem run scaling --parts 1,2,4,8

The report CSV is printed to stdout and, with --out, also written to a
file.  Exit status is 0 on success, 1 on a configuration or runtime
error, and 2 when --strict is set and some row failed to settle.
"""

import argparse
import sys

from .harness import ExperimentConfig, render_csv, run_experiment

EXPERIMENTS = ("consistency", "h-convergence", "eps-convergence",
               "comparison", "scaling")


def _parse_range(text):
    # "2..5" -> (2, 5); a bare integer means a single-step range
    lo, sep, hi = text.partition("..")
    try:
        if not sep:
            v = int(lo)
            return (v, v)
        return (int(lo), int(hi))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected an integer range like 2..5, got {text!r}")


def _parse_parts(text):
    try:
        vals = tuple(int(tok) for tok in text.split(","))
    except ValueError:
        vals = ()
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(
            f"expected a positive count or comma list like 1,2,4, got {text!r}")
    return vals


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mollifem",
        description="Nonlocal diffusion experiment harness.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment family")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--dim", type=int, choices=(2, 3), default=2)
    run.add_argument("--mesh", choices=("quad", "tri", "mixed", "hex"),
                     default=None, help="element kind (default per experiment)")
    run.add_argument("--solution", default=None,
                     help="manufactured solution name (default per experiment)")
    run.add_argument("--fe-degree", type=int, choices=(1, 2), default=None)
    run.add_argument("--delta", type=float, default=0.2,
                     help="interaction horizon (default 0.2)")
    run.add_argument("--eps0", type=float, default=None,
                     help="mollifier half-width at the coarsest sweep step")
    run.add_argument("--h0", type=float, default=None,
                     help="mesh size at the coarsest sweep step")
    run.add_argument("--ml-range", type=_parse_range, default=None,
                     metavar="A..B", help="mesh level sweep bounds")
    run.add_argument("--lmin", type=int, default=1,
                     help="uniform pre-split depth of the pair quadrature")
    run.add_argument("--lmax", type=int, default=None,
                     help="adaptive depth of the pair quadrature")
    run.add_argument("--lmax-range", type=_parse_range, default=None,
                     metavar="A..B", help="depth sweep bounds (consistency)")
    run.add_argument("--method", choices=("adaptive", "barycenter"),
                     default="adaptive")
    run.add_argument("--parts", type=_parse_parts, default=None,
                     metavar="N[,N...]", help="partition counts (scaling)")
    run.add_argument("--norm-region", choices=("omega", "omega-gamma"),
                     default="omega",
                     help="region of the reported L2 error")
    run.add_argument("--out", default=None, help="write the report CSV here")
    run.add_argument("--strict", action="store_true",
                     help="fail if any report row did not settle")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    config = ExperimentConfig(
        args.experiment,
        dim=args.dim,
        mesh_kind=args.mesh,
        solution=args.solution,
        fe_degree=args.fe_degree,
        delta=args.delta,
        eps0=args.eps0,
        h0=args.h0,
        ml_range=args.ml_range,
        L_min=args.lmin,
        L_max=args.lmax,
        lmax_range=args.lmax_range,
        method=args.method,
        parts=args.parts,
        norm_region=args.norm_region.replace("omega-gamma", "omega_and_gamma"),
        out=args.out,
        strict=args.strict,
    )
    try:
        rows = run_experiment(config)
    except (ValueError, RuntimeError, MemoryError, KeyError) as exc:
        print(f"mollifem: error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(render_csv(rows))
    if args.strict and any(r.extras.get("settled") == "no" for r in rows):
        print("mollifem: error: unsettled rows in the report", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
