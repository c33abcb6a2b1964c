"""Convergence under message loss for each topology (static data)."""

import argparse
import sys

from localthresh.harness import sweep, to_csv
from localthresh.simulator import SimConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1024)
    ap.add_argument("--rates", default="0,0.01,0.02,0.05,0.1")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", type=argparse.FileType("w"), default=sys.stdout)
    args = ap.parse_args()
    rates = [float(v) for v in args.rates.split(",")]
    rows = []
    for topo in ("ba", "chord", "grid"):
        data, summary = sweep(SimConfig(topology=topo, n=args.n), "drop_rate", rates, repeats=args.seeds)
        rows += data + summary
    args.out.write(to_csv(rows))


if __name__ == "__main__":
    main()
