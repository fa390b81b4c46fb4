"""Noise meta-parameter: sigma and sigma_s of a misspecified fit as n_l grows."""

import argparse

import numpy as np

from bayesdecay.experiments import NoiseConfig, noise_meta


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, default=1, help="repeat over this many consecutive seeds")
    ap.add_argument("--rel-noise", type=float, default=NoiseConfig.rel_noise)
    ap.add_argument("--n-l", type=int, nargs="+", default=list(NoiseConfig.n_l_values))
    args = ap.parse_args()

    results = []
    for s in range(args.seed, args.seed + args.seeds):
        res = noise_meta(NoiseConfig(n_l_values=tuple(args.n_l), rel_noise=args.rel_noise, seed=s))
        results.append(res)
        cells = "  ".join(f"n_l={n}: {a:.5f}/{b:.5f}" for n, a, b in zip(res.n_l, res.sigma, res.sigma_s))
        print(f"seed {s:3d}  {cells}  spread {res.sigma_spread:.3f}  growth {res.sigma_s_growth:.3f}"
              f"  {'pass' if res.passed else 'FAIL'}")
    if args.seeds > 1:
        print(f"passed {np.mean([r.passed for r in results]):.1%} of {args.seeds} seeds")


if __name__ == "__main__":
    main()
