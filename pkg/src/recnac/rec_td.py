"""Recurrent TD learning with max-norm projection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .indrnn import (ForwardTape, NetParams, ProjectionRadii, forward, project_max_norm,
                     smoothness_constants)
from .oracle import MAX_BRANCHES, enumerate_paths
from .pomdp import FeatureMap, Policy, Pomdp, Trajectory, sample_trajectory


@dataclass(frozen=True)
class RecTdConfig:
    eta: float = 0.05
    gamma: float = 0.9
    T: int = 8
    K: int = 1000
    radii: ProjectionRadii = field(default_factory=lambda: ProjectionRadii(1.0, 1.0))
    seed: int = 0
    n_eval: int = 1
    check_bounds: bool = True

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.T < 1 or self.K < 1:
            raise ValueError("T and K must be >= 1")


@dataclass
class RecTdRun:
    theta_final: NetParams
    theta_avg: NetParams
    mstd_curve: np.ndarray
    dev_u_curve: np.ndarray
    dev_w_curve: np.ndarray
    td_loss: np.ndarray  # per-iterate surrogate before running-averaging

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mstd", "dev_u", "dev_w"])
            for k in range(len(self.mstd_curve)):
                w.writerow([k, repr(float(self.mstd_curve[k])), repr(float(self.dev_u_curve[k])),
                            repr(float(self.dev_w_curve[k]))])


def td_error(r_t, F_t, F_next, gamma):
    return r_t + gamma * F_next - F_t


def td_errors(outputs: np.ndarray, rewards: np.ndarray, gamma: float, T: int) -> np.ndarray:
    """delta_t for t < T along a tape with at least T+1 outputs."""
    return rewards[..., :T] + gamma * outputs[..., 1:T + 1] - outputs[..., :T]


def semi_gradient(tape: ForwardTape, rewards, gamma: float, T: int) -> np.ndarray:
    """sum_{t<T} gamma^t delta_t grad F_t."""
    if len(tape) < T + 1:
        raise ValueError(f"tape covers {len(tape)} steps, need T+1 = {T + 1}")
    delta = td_errors(tape.outputs, np.asarray(rewards, dtype=float), gamma, T)
    weights = gamma ** np.arange(T) * delta
    return np.einsum("t,tij->ij", weights, tape.grad(slice(0, T)))


def td_loss(outputs: np.ndarray, rewards, gamma: float, T: int) -> float:
    """sum_{t<T} gamma^t delta_t^2 on one path."""
    delta = td_errors(outputs, np.asarray(rewards, dtype=float), gamma, T)
    return float(np.sum(gamma ** np.arange(T) * delta ** 2))


def _inputs(feature_map: FeatureMap, traj: Trajectory) -> np.ndarray:
    return feature_map.embed[traj.observations, traj.actions]


def mstd_estimate(pomdp: Pomdp, policy: Policy, feature_map: FeatureMap, params: NetParams,
                  gamma: float, T: int, n_eval: int, seed) -> float:
    """Mean of sum_{t<T} gamma^t delta_t^2 over ``n_eval`` fresh trajectories."""
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_eval):
        traj = sample_trajectory(pomdp, policy, T, rng)
        total += td_loss(forward(params, _inputs(feature_map, traj)).outputs, traj.rewards, gamma, T)
    return total / n_eval


def deviations(params: NetParams) -> tuple[float, float]:
    """(mean_i ||u_i - u_i(0)||, mean_i |w_i - w_i(0)|)."""
    dev = params.deviation()
    return float(np.mean(np.linalg.norm(dev[:, 1:], axis=1))), float(np.mean(np.abs(dev[:, 0])))


def semi_gradient_bound(net: NetParams, config: RecTdConfig, r_inf: float) -> float:
    consts = smoothness_constants(net.activation, net.alpha, config.radii, net.m, config.T + 1, net.d)
    L = consts.L[config.T + 1]
    delta_max = r_inf + 2 * L * config.radii.norm
    return delta_max * L / (1 - config.gamma)


def _run(net: NetParams, config: RecTdConfig, direction, evaluate, callback=None) -> RecTdRun:
    K = config.K
    mstd = np.empty(K)
    raw = np.empty(K)
    dev_u = np.empty(K)
    dev_w = np.empty(K)
    theta_sum = np.zeros_like(net.theta)
    params = net
    for k in range(K):
        theta_sum += params.theta
        raw[k] = evaluate(params)
        mstd[k] = raw[: k + 1].mean()
        g = direction(params)
        params = project_max_norm(params.with_theta(params.theta + config.eta * g), config.radii)
        dev_u[k], dev_w[k] = deviations(params)
        if callback is not None:
            callback(k + 1, params)
    avg = net.with_theta(theta_sum / K)
    return RecTdRun(params, avg, mstd, dev_u, dev_w, raw)


def run_rec_td(pomdp: Pomdp, policy: Policy, feature_map: FeatureMap, net: NetParams,
               config: RecTdConfig, callback=None) -> RecTdRun:
    """Projected semi-gradient TD on one fresh trajectory per iteration.

    ``mstd_curve[k]`` is the running mean over s <= k of the surrogate loss of
    iterate s, each evaluated on held-out trajectories. ``callback(k, params)``
    sees every projected iterate.
    """
    train_ss, eval_ss = np.random.SeedSequence(config.seed).spawn(2)
    train_rng, eval_rng = np.random.default_rng(train_ss), np.random.default_rng(eval_ss)
    bound = semi_gradient_bound(net, config, pomdp.r_inf) if config.check_bounds else np.inf

    def direction(params):
        traj = sample_trajectory(pomdp, policy, config.T, train_rng)
        tape = forward(params, _inputs(feature_map, traj), with_grad=True)
        g = semi_gradient(tape, traj.rewards, config.gamma, config.T)
        if np.linalg.norm(g) > bound:
            raise RuntimeError(f"semi-gradient norm {np.linalg.norm(g):.4g} exceeds bound {bound:.4g}")
        return g

    def evaluate(params):
        return mstd_estimate(pomdp, policy, feature_map, params, config.gamma, config.T,
                             config.n_eval, eval_rng)

    return _run(net, config, direction, evaluate, callback)


class MeanPath:
    """Exact expectations over all length-(T+1) histories of a tiny POMDP."""

    def __init__(self, pomdp: Pomdp, policy: Policy, feature_map: FeatureMap, T: int,
                 gamma: float, max_branches: int = MAX_BRANCHES):
        self.table = enumerate_paths(pomdp, policy, T + 1, max_branches)
        self.inputs = feature_map.embed[self.table.observations, self.table.actions]
        self.T = T
        self.gamma = gamma

    def semi_gradient(self, params: NetParams) -> np.ndarray:
        T, g = self.T, self.gamma
        tape = forward(params, self.inputs, with_grad=True)
        F = tape.outputs
        delta = self.table.r_mean[:, :T] + g * F[:, 1:T + 1] - F[:, :T]
        w = self.table.prob[:, None] * g ** np.arange(T) * delta
        return np.einsum("nt,ntij->ij", w, tape.grad(slice(0, T)))

    def mstd(self, params: NetParams) -> float:
        T, g = self.T, self.gamma
        F = forward(params, self.inputs).outputs
        c = g * F[:, 1:T + 1] - F[:, :T]
        e = self.table.r_sq[:, :T] + 2 * self.table.r_mean[:, :T] * c + c ** 2
        return float(self.table.prob @ (e @ g ** np.arange(T)))


def mean_path_rec_td(pomdp: Pomdp, policy: Policy, feature_map: FeatureMap, net: NetParams,
                     config: RecTdConfig, max_branches: int = MAX_BRANCHES) -> RecTdRun:
    """Rec-TD driven by the exact expected semi-gradient; ``mstd_curve[k]`` is the exact surrogate at iterate k."""
    mp = MeanPath(pomdp, policy, feature_map, config.T, config.gamma, max_branches)
    run = _run(net, config, mp.semi_gradient, mp.mstd)
    run.mstd_curve = run.td_loss.copy()
    return run
