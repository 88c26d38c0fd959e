"""Rejection-frequency grid over alpha0 in {0, .25, .5} and R^2_d, R^2_y in {0, .1, ..., .9}.

300 cells. Progress is checkpointed after every cell, so an interrupted
run continues where it stopped when invoked again.

Usage: python scripts/grid.py [--reps 1000] [--design sparse_decline] [--jobs N]
"""

import argparse
import os
import sys

from hdlogit.cli import main


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--design", default="sparse_decline")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)
    out = args.out or f"results/grid_{args.design}.csv"
    cmd = ["grid", "--design", args.design, "--alpha0-list", "0,0.25,0.5",
           "--r2-grid", "0:0.9:0.1", "--reps", str(args.reps), "--seed", str(args.seed),
           "--out", out]
    if os.path.exists(out + ".partial"):
        cmd.append("--resume")
    if args.jobs:
        cmd += ["--jobs", str(args.jobs)]
    return main(cmd)


if __name__ == "__main__":
    sys.exit(run())
