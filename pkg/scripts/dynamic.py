"""Steady-state error and messaging under input noise, optionally with churn.

Long runs: the defaults (100,000 cycles, 5 seeds per point) take tens of
minutes on one core.
"""

import argparse
import sys

from localthresh.harness import sweep, to_csv
from localthresh.simulator import SimConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--topology", default="ba", choices=("ba", "chord", "grid"))
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--noise", default="100,1000,10000", help="noise rates in ppmc")
    ap.add_argument("--churn", default=None, help="churn rates in ppmc; sweeps churn at --noise-fixed")
    ap.add_argument("--noise-fixed", type=float, default=1000)
    ap.add_argument("--cycles", type=int, default=100_000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", type=argparse.FileType("w"), default=sys.stdout)
    args = ap.parse_args()
    base = SimConfig(topology=args.topology, n=args.n, bias=0.2, std=2.0, max_cycles=args.cycles)
    if args.churn:
        base = base.with_(noise_ppmc=args.noise_fixed)
        data, summary = sweep(base, "churn_ppmc", [float(v) for v in args.churn.split(",")], repeats=args.seeds)
    else:
        data, summary = sweep(base, "noise_ppmc", [float(v) for v in args.noise.split(",")], repeats=args.seeds)
    args.out.write(to_csv(data + summary))


if __name__ == "__main__":
    main()
