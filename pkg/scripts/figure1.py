"""Figure-1 design Monte Carlo: naive, optimal-IV and double-selection summaries.

Usage: python scripts/figure1.py [--reps 5000] [--seed 0] [--jobs N] [--out results/figure1.csv]
"""

import argparse
import sys
import time

from hdlogit.cli import main


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", default="results/figure1.csv")
    args = p.parse_args(argv)
    cmd = ["simulate", "--design", "sparse_decline", "--n", "200", "--p", "250",
           "--alpha0", "0.2", "--r2d", "0.75", "--r2y", "0.75", "--rho", "0.5",
           "--reps", str(args.reps), "--seed", str(args.seed), "--out", args.out]
    if args.jobs:
        cmd += ["--jobs", str(args.jobs)]
    t0 = time.perf_counter()
    code = main(cmd)
    print(f"figure1: {args.reps} reps in {time.perf_counter() - t0:.0f}s -> {args.out}",
          file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(run())
