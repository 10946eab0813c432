"""``picproj`` command line: run a benchmark and write its CSV report."""

from __future__ import annotations

import argparse
import sys

from .bench import emit_report, run_pulse, run_slotted_disk
from .errors import InvalidArgument, PicError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="picproj", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pulse", help="translate a sine pulse across the periodic unit square")
    p.add_argument("--k", type=int, default=1, help="polynomial order (1-3)")
    p.add_argument("--n", type=int, default=11, help="quads per side; 2 n^2 cells")
    p.add_argument("--dt", type=float, default=None, help="time step (default 1.1 / n)")
    p.add_argument("--steps", type=int, default=None, help="number of steps (default 1 / dt)")
    p.add_argument("--projection", choices=("l2", "pde"), default="l2")
    p.add_argument("--beta", type=float, default=1e-6)
    p.add_argument("--zeta", type=float, default=0.0)
    p.add_argument("--seeding", choices=("lattice", "random"), default="lattice")
    p.add_argument("--ppc", type=float, default=16.5, help="particles per cell")
    p.add_argument("--init", choices=("mesh", "exact"), default="mesh",
                   help="particle values from the interpolated field or the exact pulse")
    _common(p)

    d = sub.add_parser("slotted-disk", help="rotate a slotted disk in a circular domain")
    d.add_argument("--case", type=int, choices=(1, 2, 3), default=1,
                   help="1 bounded least squares, 2 conservative, 3 conservative with zeta=30")
    d.add_argument("--h", type=float, default=None, help="target mesh size")
    d.add_argument("--ppc", type=int, default=25, help="particles per cell")
    d.add_argument("--rotations", type=float, default=2.0)
    _common(d)
    return parser


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (cell loops are vectorised; recorded only)")
    p.add_argument("--deterministic", action="store_true",
                   help="write zeros in the timing columns so reruns are byte-identical")
    p.add_argument("--out", default="report.csv")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if args.command == "pulse":
            report = run_pulse(k=args.k, n=args.n, dt=args.dt, steps=args.steps,
                               projection=args.projection, seeding=args.seeding, beta=args.beta,
                               zeta=args.zeta, ppc=args.ppc, seed=args.seed, init=args.init,
                               threads=args.threads, timings=not args.deterministic)
        else:
            report = run_slotted_disk(case=args.case, h=args.h, ppc=args.ppc,
                                      rotations=args.rotations, seed=args.seed,
                                      threads=args.threads, timings=not args.deterministic)
    except InvalidArgument as exc:
        print(f"picproj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PicError as exc:
        print(f"picproj: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    try:
        emit_report(report, args.out)
    except OSError as exc:
        print(f"picproj: cannot write report: {exc}", file=sys.stderr)
        return EXIT_USAGE
    final = report.final
    print(f"{args.command}: {len(report.rows) - 1} steps, final l2_error={final['l2_error']:.6g} "
          f"mass_error={final['mass_error']:.3g}, report written to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
