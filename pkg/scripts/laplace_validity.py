"""Laplace vs quadrature on a single exponential and on a near-degenerate pair."""

import argparse

from bayesdecay.experiments import LaplaceConfig, laplace_validity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, default=1, help="repeat over this many consecutive seeds")
    ap.add_argument("--snr", type=float, default=LaplaceConfig.snr)
    args = ap.parse_args()

    print(f"{'seed':>4} {'case':<7} {'laplace':>10} {'quad':>10} {'change':>8} {'predicted':>9} {'ok':>5} {'fallback':>8}")
    for s in range(args.seed, args.seed + args.seeds):
        res = laplace_validity(LaplaceConfig(snr=args.snr, seed=s))
        for name, c in (("single", res.single), ("pair", res.pair)):
            print(f"{s:4d} {name:<7} {c.laplace:10.4f} {c.quadrature:10.4f} {c.change:8.4f} "
                  f"{c.max_discrepancy:9.4f} {str(c.quadratic_ok):>5} {str(c.fallback_used):>8}")
        print(f"     ratio change/predicted {res.ratio:.3f}; single {'pass' if res.single_passed else 'FAIL'},"
              f" pair {'pass' if res.pair_passed else 'FAIL'}")


if __name__ == "__main__":
    main()
