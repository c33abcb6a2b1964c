"""Sensitivity to the bias and spread of the data on a grid."""

import argparse
import sys

from localthresh.harness import sweep, to_csv
from localthresh.simulator import SimConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1024)
    ap.add_argument("--biases", default="0.05,0.1,0.2,0.4")
    ap.add_argument("--stds", default="0.25,0.5,1,2,4")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", type=argparse.FileType("w"), default=sys.stdout)
    args = ap.parse_args()
    base = SimConfig(topology="grid", n=args.n)
    rows = []
    for key, text in (("bias", args.biases), ("std", args.stds)):
        data, summary = sweep(base, key, [float(v) for v in text.split(",")], repeats=args.seeds)
        rows += data + summary
    args.out.write(to_csv(rows))


if __name__ == "__main__":
    main()
