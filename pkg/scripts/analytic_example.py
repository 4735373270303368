"""Spectral values, criticality and limit traces for the three-parameter analytic kernel.

Prints one row per c and, with --trace-dir, writes the limit trace of
R^n M^n(0, [0, 1]) for each c as CSV.
"""

import argparse
from pathlib import Path

from kernelpf import AnalyticKernel, Interval, classify
from kernelpf.asymptotics import perron_limit
from kernelpf.errors import NotApplicableError


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--b", type=float, default=2.0)
    p.add_argument("--c", type=float, nargs="+", default=[0.1, 0.2, 0.3, 1 / 3, 0.36])
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--nmax", type=int, default=300)
    p.add_argument("--trace-dir", type=Path)
    args = p.parse_args()

    r = (1 + args.b) / args.a
    print(f"{'c':>8} {'R':>12} {'R exact':>12} {'criticality':>13} {'limit':>12} {'trace(nmax)':>12}")
    for c in args.c:
        K = AnalyticKernel(args.a, args.b, c, T=args.T, n=args.n)
        rep = classify(K)
        try:
            lim = perron_limit(K, 0.0, Interval(0, 1), n_max=args.nmax, report=rep)
            predicted, final = lim.predicted, lim.final
            if args.trace_dir:
                lim.write_trace_csv(args.trace_dir / f"trace_c{c:.4f}.csv")
        except NotApplicableError:
            predicted = final = float("nan")
        print(f"{c:8.4f} {rep.R:12.8f} {r / (1 + c * r):12.8f} {rep.criticality:>13} {predicted:12.7f} {final:12.7f}")


if __name__ == "__main__":
    main()
