"""Messages per link and convergence time as the grid grows."""

import argparse
import sys

from localthresh.harness import sweep, to_csv
from localthresh.simulator import SimConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="1024,4096,16384")
    ap.add_argument("--topology", default="grid", choices=("ba", "chord", "grid"))
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", type=argparse.FileType("w"), default=sys.stdout)
    args = ap.parse_args()
    sizes = [int(v) for v in args.sizes.split(",")]
    data, summary = sweep(SimConfig(topology=args.topology), "n", sizes, repeats=args.seeds)
    args.out.write(to_csv(data + summary))


if __name__ == "__main__":
    main()
