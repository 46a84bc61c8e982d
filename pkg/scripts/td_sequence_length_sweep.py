"""Rec-TD at a fixed width across sequence lengths; longer sequences give larger MSTD."""

import argparse

from recnac.harness import ExperimentConfig, PolicySpec, PomdpSpec, TdSpec, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p-exp", type=float, default=0.25)
    ap.add_argument("--m", type=int, default=256)
    ap.add_argument("--seq-lengths", default="4,8,12")
    ap.add_argument("--K", type=int, default=2000)
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--output", default="runs/td_sequence_length_sweep")
    args = ap.parse_args()
    lengths = [int(t) for t in args.seq_lengths.split(",")]
    config = ExperimentConfig(kind="rec-td", pomdp=PomdpSpec(8, 8, 4, seed=1),
                              policy=PolicySpec("epsilon-greedy", args.p_exp),
                              rec_td=TdSpec(eta=0.05, gamma=0.9, K=args.K), trials=args.trials,
                              widths=[args.m], seq_lengths=lengths)
    bundle = run_experiment(config, args.output)
    for T in lengths:
        mean, lo, hi = bundle.bands[("mstd", args.m, T)]
        print(f"T={T:3d} final MSTD {mean[-1]:.4f} band [{lo[-1]:.4f}, {hi[-1]:.4f}]")
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
