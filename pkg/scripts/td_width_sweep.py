"""Rec-TD on the 8x8x4 instance across widths under an epsilon-greedy policy.

p_exp=0.8 is the weak-memory setting, p_exp=0.25 the strong-memory one.
Writes per-width MSTD and deviation bands plus metadata to the output directory.
"""

import argparse

from recnac.harness import ExperimentConfig, PolicySpec, PomdpSpec, TdSpec, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p-exp", type=float, default=0.8)
    ap.add_argument("--widths", default="32,64,128,256")
    ap.add_argument("--T", type=int, default=8)
    ap.add_argument("--K", type=int, default=2000)
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--output", default=None)
    args = ap.parse_args()
    widths = [int(w) for w in args.widths.split(",")]
    config = ExperimentConfig(kind="rec-td", pomdp=PomdpSpec(8, 8, 4, seed=1),
                              policy=PolicySpec("epsilon-greedy", args.p_exp),
                              rec_td=TdSpec(eta=0.05, gamma=0.9, K=args.K), trials=args.trials,
                              widths=widths, seq_lengths=[args.T])
    out = args.output or f"runs/td_width_sweep_p{args.p_exp}"
    bundle = run_experiment(config, out)
    print(f"{'m':>5s} {'MSTD k=0':>10s} {'MSTD final':>11s} {'dev_u':>8s} {'dev_w':>8s}")
    for m in widths:
        print(f"{m:5d} {bundle.bands[('mstd', m, args.T)][0][0]:10.4f} "
              f"{bundle.final_mean('mstd', m, args.T):11.4f} "
              f"{bundle.final_mean('dev_u', m, args.T):8.4f} "
              f"{bundle.final_mean('dev_w', m, args.T):8.4f}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
