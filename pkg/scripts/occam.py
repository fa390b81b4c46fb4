"""Occam property: M1.0.0 vs M2.0.0 evidence on single-exponential data."""

import argparse

from bayesdecay.experiments import OccamConfig, occam


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rel-noise", type=float, default=OccamConfig.rel_noise)
    ap.add_argument("--t2", type=float, default=OccamConfig.t2)
    args = ap.parse_args()

    res = occam(OccamConfig(n_runs=args.runs, seed=args.seed, rel_noise=args.rel_noise, t2=args.t2))
    for i, d in enumerate(res.differences):
        print(f"seed {args.seed + i:3d}  log evidence M1 - M2 = {d:8.3f}")
    print(f"M1.0.0 preferred in {res.rate:.1%} of runs ({res.seconds:.1f} s)")


if __name__ == "__main__":
    main()
