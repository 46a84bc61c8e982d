"""Rec-TD with exact expected semi-gradients on a tiny instance, next to the sampled version."""

import argparse

from recnac.harness import ExperimentConfig, PolicySpec, PomdpSpec, TdSpec, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--widths", default="16,64")
    ap.add_argument("--T", type=int, default=4)
    ap.add_argument("--K", type=int, default=500)
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--output", default="runs/mean_path_td")
    args = ap.parse_args()
    widths = [int(w) for w in args.widths.split(",")]
    for kind in ("mean-path", "rec-td"):
        config = ExperimentConfig(kind=kind, pomdp=PomdpSpec(2, 2, 2, seed=0),
                                  policy=PolicySpec("uniform"),
                                  rec_td=TdSpec(eta=0.1, gamma=0.9, K=args.K),
                                  trials=args.trials, widths=widths, seq_lengths=[args.T])
        bundle = run_experiment(config, f"{args.output}/{kind}")
        for m in widths:
            print(f"{kind:<10s} m={m:<4d} MSTD k=0 {bundle.bands[('mstd', m, args.T)][0][0]:.4f} "
                  f"final {bundle.final_mean('mstd', m, args.T):.4f}")
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
