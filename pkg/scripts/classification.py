"""Two-tissue classification benchmark."""

import argparse

from bayesdecay.experiments import ClassificationConfig, classification


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t2", type=float, nargs="+", default=list(ClassificationConfig.t2))
    ap.add_argument("--rel-noise", type=float, default=ClassificationConfig.rel_noise)
    ap.add_argument("--train", type=int, default=ClassificationConfig.n_train)
    ap.add_argument("--test", type=int, default=ClassificationConfig.n_test)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = ClassificationConfig(tuple(args.t2), args.rel_noise, args.train, args.test, args.seed)
    res = classification(cfg)
    for tid, model in res.models.items():
        correct = sum(t == w for t, w in zip(res.truth, res.winners) if t == tid)
        total = sum(t == tid for t in res.truth)
        print(f"{tid:<12} model {model:<8} correct {correct}/{total}")
    print(f"accuracy {res.accuracy:.1%}; max |sum(probs) - 1| = {res.prob_sum_error:.2e} ({res.seconds:.1f} s)")


if __name__ == "__main__":
    main()
