"""Natural policy gradient actor and the full recurrent actor-critic loop."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .indrnn import (NetParams, ProjectionRadii, init_symmetric, p_poly, project_deviation,
                     smoothness_constants)
from .oracle import MAX_BRANCHES, OracleConfig, ValueOracle
from .policy import SoftmaxRnnPolicy, path_advantages
from .pomdp import FeatureMap, Pomdp, Trajectory, sample_trajectory
from .rec_td import RecTdConfig, run_rec_td


@dataclass(frozen=True)
class NacConfig:
    n_outer: int = 30
    k_td: int = 200
    k_sgd: int = 200
    T: int = 6
    gamma: float = 0.5
    eta_td: float = 0.05
    eta_npg: float | None = None  # 1/sqrt(n_outer)
    eta_sgd: float | None = None  # 0.1/sqrt(k_sgd)
    actor_radii: ProjectionRadii = field(default_factory=lambda: ProjectionRadii(2.0, 2.0))
    critic_radii: ProjectionRadii = field(default_factory=lambda: ProjectionRadii(2.0, 2.0))
    m_actor: int = 16
    m_critic: int = 32
    alpha_actor: float = 0.5
    alpha_critic: float = 0.5
    seed: int = 0
    batch: int = 1
    value_eval: str = "mc"  # "mc" | "oracle" | "none"
    n_value_rollouts: int = 200

    def __post_init__(self):
        if self.m_actor % 2 or self.m_critic % 2:
            raise ValueError("widths must be even")
        for name in ("eta_td", "eta_npg", "eta_sgd"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.value_eval not in ("mc", "oracle", "none"):
            raise ValueError("value_eval must be 'mc', 'oracle' or 'none'")

    @property
    def npg_step(self) -> float:
        return self.eta_npg if self.eta_npg is not None else 1.0 / math.sqrt(max(self.n_outer, 1))

    @property
    def sgd_step(self) -> float:
        return self.eta_sgd if self.eta_sgd is not None else 0.1 / math.sqrt(self.k_sgd)


@dataclass
class NacRecord:
    n: int
    value_est: float
    critic_mstd: float
    cfa_loss: float
    omega_norm: float
    phi_dev: float


@dataclass
class NacTrace:
    records: list[NacRecord] = field(default_factory=list)
    actor: NetParams | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path: str | Path) -> None:
        cols = ["n", "value_est", "critic_mstd", "cfa_loss", "omega_norm", "phi_dev"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([r.n] + [repr(float(getattr(r, c))) for c in cols[1:]])


def cfa_loss(scores: np.ndarray, advantages: np.ndarray, omega: np.ndarray, gamma: float) -> float:
    """sum_t gamma^t (score_t . omega - A_t)^2 with scores (T, m, d+1) and realized advantages (T,)."""
    resid = np.einsum("tij,ij->t", scores, omega) - advantages
    return float(np.sum(gamma ** np.arange(len(resid)) * resid ** 2))


def cfa_grad(scores: np.ndarray, advantages: np.ndarray, omega: np.ndarray, gamma: float) -> np.ndarray:
    resid = np.einsum("tij,ij->t", scores, omega) - advantages
    return 2.0 * np.einsum("t,tij->ij", gamma ** np.arange(len(resid)) * resid, scores)


def path_terms(actor: SoftmaxRnnPolicy, critic: NetParams, traj: Trajectory, T: int):
    """Scores and critic advantages at the realized (Z_t, A_t), t < T."""
    obs, acts = traj.observations[:T], traj.actions[:T]
    probs, scores = actor.path_scores(obs, acts)
    adv = path_advantages(probs, critic, actor.feature_map, obs, acts)
    return scores, adv[np.arange(T), acts]


def cfa_loss_sample(actor: SoftmaxRnnPolicy, advantages_per_step, trajectory: Trajectory,
                    omega: np.ndarray, gamma: float, T: int) -> float:
    """Path loss on one trajectory; ``advantages_per_step[t]`` is the advantage of the realized action."""
    adv = np.asarray(advantages_per_step, dtype=float)
    if adv.shape != (T,):
        raise ValueError(f"expected {T} advantages, got shape {adv.shape}")
    if omega.shape != actor.net.theta.shape:
        raise ValueError("omega must have the actor parameter shape")
    _, scores = actor.path_scores(trajectory.observations[:T], trajectory.actions[:T])
    return cfa_loss(scores, adv, omega, gamma)


def projected_sgd(grad_fn, shape, K: int, eta: float, radii: ProjectionRadii) -> np.ndarray:
    """Projected (stochastic) gradient descent from 0; returns the average of iterates 0..K-1."""
    omega = np.zeros(shape)
    total = np.zeros(shape)
    for _ in range(K):
        total += omega
        omega = project_deviation(omega - eta * grad_fn(omega), radii)
    return total / max(K, 1)


def cfa_sgd(actor: SoftmaxRnnPolicy, critic_avg: NetParams, pomdp: Pomdp, config: NacConfig,
            outer_step_seed) -> tuple[np.ndarray, float]:
    """NPG direction by projected SGD on the path-based compatible approximation loss.

    Each step draws ``config.batch`` fresh trajectories under the actor.
    Returns ``(omega_n, loss)`` where ``loss`` is the mean path loss of
    ``omega_n`` over every trajectory drawn.
    """
    rng = np.random.default_rng(outer_step_seed)
    seen = []

    def grad_fn(omega):
        g = np.zeros_like(omega)
        for _ in range(config.batch):
            traj = sample_trajectory(pomdp, actor, config.T - 1, rng)
            scores, adv = path_terms(actor, critic_avg, traj, config.T)
            seen.append((scores, adv))
            g += cfa_grad(scores, adv, omega, config.gamma)
        return g / config.batch

    omega = projected_sgd(grad_fn, actor.net.theta.shape, config.k_sgd, config.sgd_step,
                          config.actor_radii)
    loss = float(np.mean([cfa_loss(s, a, omega, config.gamma) for s, a in seen])) if seen else 0.0
    return omega, loss


def npg_update(actor_params: NetParams, omega_n: np.ndarray, eta_npg: float) -> NetParams:
    """Phi + eta * omega, without projection."""
    return actor_params.with_theta(actor_params.theta + eta_npg * omega_n)


def mc_value(pomdp: Pomdp, policy, gamma: float, n_rollouts: int, rng, tol: float = 1e-3) -> float:
    """Monte Carlo V(mu) with horizon chosen so the discarded tail is below ``tol``."""
    horizon = math.ceil(math.log(tol * (1 - gamma) / max(pomdp.r_inf, 1e-300)) / math.log(gamma))
    disc = gamma ** np.arange(horizon)
    vals = [float(disc @ sample_trajectory(pomdp, policy, horizon - 1, rng).rewards)
            for _ in range(n_rollouts)]
    return float(np.mean(vals))


def oracle_value(pomdp: Pomdp, policy, gamma: float, max_branches: int = MAX_BRANCHES) -> tuple[float, float]:
    """Exact truncated V(mu) at the deepest horizon the branch guard allows; returns (value, tail_tol)."""
    Y, A = pomdp.n_obs, pomdp.n_actions
    H, nodes = 0, 0
    while H < 200:
        nxt = nodes + Y ** (H + 1) * A ** H
        if nxt > max_branches:
            break
        nodes, H = nxt, H + 1
    cfg = OracleConfig(max(H, 1), gamma, pomdp.r_inf, max_branches=max_branches)
    return ValueOracle(pomdp, policy, cfg).initial_value(), cfg.tail_tol


def run_rec_nac(pomdp: Pomdp, feature_map: FeatureMap, config: NacConfig) -> NacTrace:
    ss = np.random.SeedSequence(config.seed)
    actor_ss, loop_ss = ss.spawn(2)
    actor = init_symmetric(config.m_actor, feature_map.d, config.alpha_actor,
                           int(actor_ss.generate_state(1)[0]))
    trace = NacTrace(actor=actor)
    for n, step_ss in enumerate(loop_ss.spawn(config.n_outer)):
        critic_ss, td_ss, sgd_ss, value_ss = step_ss.spawn(4)
        policy = SoftmaxRnnPolicy(actor, feature_map)
        critic = init_symmetric(config.m_critic, feature_map.d, config.alpha_critic,
                                int(critic_ss.generate_state(1)[0]))
        td_cfg = RecTdConfig(eta=config.eta_td, gamma=config.gamma, T=config.T, K=config.k_td,
                             radii=config.critic_radii, seed=int(td_ss.generate_state(1)[0]))
        td_run = run_rec_td(pomdp, policy, feature_map, critic, td_cfg)
        omega, loss = cfa_sgd(policy, td_run.theta_avg, pomdp, config, sgd_ss)
        if config.value_eval == "mc":
            value = mc_value(pomdp, policy, config.gamma, config.n_value_rollouts,
                             np.random.default_rng(value_ss))
        elif config.value_eval == "oracle":
            value = oracle_value(pomdp, policy, config.gamma)[0]
        else:
            value = float("nan")
        actor = npg_update(actor, omega, config.npg_step)
        trace.records.append(NacRecord(n, value, float(td_run.mstd_curve[-1]), loss,
                                       float(np.linalg.norm(omega)),
                                       float(np.linalg.norm(actor.deviation()))))
    trace.actor = actor
    return trace


def npg_diagnostics(config: NacConfig, n_actions: int, r_inf: float = 1.0,
                    activation=None) -> dict:
    """Non-statistical ingredients of the actor-critic error bound and the memory regime."""
    net = init_symmetric(2, 1, config.alpha_actor, 0)
    act = activation or net.activation
    consts = smoothness_constants(act, config.alpha_actor, config.actor_radii, config.m_actor,
                                  config.T)
    x = consts.alpha_m * act.rho1
    g = config.gamma
    regime = "short-term" if x < 1 else ("long-term" if x > 1 else "critical")
    return {
        "optimization_term": math.log(n_actions) / ((1 - g) * math.sqrt(max(config.n_outer, 1))),
        "linearization_term": config.actor_radii.norm ** 2 * p_poly(config.T, x)
        / ((1 - g) * config.m_actor ** 0.25),
        "truncation_term": g ** config.T * r_inf / (1 - g) ** 2,
        "p_T": p_poly(config.T, x),
        "alpha_m_rho1": x,
        "regime": regime,
    }


def config_to_dict(config: NacConfig) -> dict:
    return asdict(config)
