"""Command-line entry point: ``recnac <subcommand>`` or ``python -m recnac``."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .harness import (ConfigError, ExperimentConfig, aggregate_ci, config_from_dict, load_config,
                      read_config_mapping, run_experiment, uniform_value, verify,
                      write_band_csv)
from .pomdp import random_pomdp

OUTPUT_ENV = "RECNAC_OUTPUT_DIR"
EXIT_OK, EXIT_CHECK_FAILED, EXIT_BAD_CONFIG = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON config file or a previous run's metadata.json")
    p.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV}/<kind> or runs/<kind>)")
    p.add_argument("--trials", type=int)
    p.add_argument("--base-seed", type=int)
    p.add_argument("--widths", type=_int_list, help="e.g. 32,64,128,256")
    p.add_argument("--seq-lengths", type=_int_list, help="e.g. 4,8,12")
    p.add_argument("--workers", type=int)
    p.add_argument("--ci", choices=["normal", "bootstrap"])
    p.add_argument("--pomdp-file")
    p.add_argument("--pomdp-seed", type=int)
    p.add_argument("--features", choices=["concat-one-hot", "gaussian-joint"])
    p.add_argument("--policy", choices=["epsilon-greedy", "uniform"])
    p.add_argument("--p-exp", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--rho-w", type=float)
    p.add_argument("--rho-u", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--n-outer", type=int)


def _build_config(kind: str, args) -> ExperimentConfig:
    data = {}
    if args.config:
        data = read_config_mapping(args.config)
    data["kind"] = kind
    top = {"trials": args.trials, "base_seed": args.base_seed, "widths": args.widths,
           "seq_lengths": args.seq_lengths, "workers": args.workers, "ci": args.ci,
           "output": args.output}
    nested = {
        ("pomdp", "path"): args.pomdp_file, ("pomdp", "seed"): args.pomdp_seed,
        ("features", "mode"): args.features, ("policy", "kind"): args.policy,
        ("policy", "p_exp"): args.p_exp, ("rec_td", "eta"): args.eta,
        ("rec_td", "K"): args.K, ("rec_td", "rho_w"): args.rho_w,
        ("rec_td", "rho_u"): args.rho_u, ("rec_td", "alpha"): args.alpha,
        ("rec_nac", "n_outer"): args.n_outer,
    }
    if args.gamma is not None:
        nested[("rec_nac" if kind == "rec-nac" else "rec_td", "gamma")] = args.gamma
    for key, value in top.items():
        if value is not None:
            data[key] = value
    for (section, key), value in nested.items():
        if value is not None:
            if data.get(section) is None:
                data[section] = {}
            data[section][key] = value
    if kind == "mean-path" and "policy" not in data:
        data["policy"] = {"kind": "uniform"}
    return config_from_dict(data)


def _out_dir(config: ExperimentConfig) -> Path:
    if config.output:
        return Path(config.output)
    return Path(os.environ.get(OUTPUT_ENV, "runs")) / config.kind


def cmd_experiment(kind: str, args) -> int:
    config = _build_config(kind, args)
    out = _out_dir(config)
    bundle = run_experiment(config, out)
    for (metric, m, T), (mean, lo, hi) in sorted(bundle.bands.items()):
        print(f"{metric:<12s} m={m:<5d} T={T:<3d} final mean={mean[-1]:.6g} band=[{lo[-1]:.6g}, {hi[-1]:.6g}]")
    if kind == "rec-nac" and bundle.extras:
        base, tail = uniform_value(config)
        print(f"uniform policy value {base:.6g} (tail bound {tail:.2e})")
        for (m, T), rows in sorted(bundle.extras.items()):
            print(f"final values m={m} T={T}: " + ", ".join(f"{v:.6g}" for v, _ in rows))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_gen_pomdp(args) -> int:
    if min(args.states, args.obs, args.actions) < 1:
        raise ConfigError("state, observation and action counts must be >= 1")
    pomdp = random_pomdp(args.states, args.obs, args.actions, args.seed)
    out = Path(args.output or Path(os.environ.get(OUTPUT_ENV, "runs")) / f"pomdp_{args.seed}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    pomdp.save(out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig(kind="verify")
    if args.fault:
        config.verify.fault = args.fault
    for item in args.tol or []:
        name, _, value = item.partition("=")
        try:
            config.verify.tolerances[name] = float(value)
        except ValueError as exc:
            raise ConfigError(f"bad tolerance override {item!r}") from exc
    report = verify(config)
    print(report)
    print("all checks passed" if report.ok else "some checks FAILED")
    return EXIT_OK if report.ok else EXIT_CHECK_FAILED


def _read_column(path: str, column: str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or column not in rows[0]:
        raise ConfigError(f"{path}: no column {column!r}")
    return np.array([float(r[column]) for r in rows])


def cmd_aggregate(args) -> int:
    curves = [_read_column(p, args.column) for p in args.inputs]
    if len({len(c) for c in curves}) != 1:
        raise ConfigError("all input curves must have the same length")
    mean, lo, hi = aggregate_ci(np.array(curves), args.level, args.method)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_band_csv(out, mean, lo, hi)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recnac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-pomdp", help="write a random POMDP instance as JSON")
    g.add_argument("--states", type=int, default=8)
    g.add_argument("--obs", type=int, default=8)
    g.add_argument("--actions", type=int, default=4)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--output")

    for name, text in (("run-rec-td", "multi-trial Rec-TD under a fixed policy"),
                       ("run-rec-nac", "multi-trial recurrent natural actor-critic"),
                       ("run-mean-path", "Rec-TD with exact expected semi-gradients")):
        _add_experiment_flags(sub.add_parser(name, help=text))

    v = sub.add_parser("verify", help="run the invariant suite; exit 1 on any failure")
    v.add_argument("--config")
    v.add_argument("--fault", choices=["gradient"], help="inject a known fault")
    v.add_argument("--tol", action="append", metavar="NAME=VALUE", help="tolerance override")

    a = sub.add_parser("aggregate", help="mean and confidence band over per-trial CSVs")
    a.add_argument("inputs", nargs="+")
    a.add_argument("--column", required=True)
    a.add_argument("--output", required=True)
    a.add_argument("--level", type=float, default=0.90)
    a.add_argument("--method", choices=["normal", "bootstrap"], default="normal")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-pomdp":
            return cmd_gen_pomdp(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "aggregate":
            return cmd_aggregate(args)
        return cmd_experiment(args.command.removeprefix("run-"), args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
