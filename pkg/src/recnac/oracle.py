"""Exact ground truth on tiny POMDPs by belief filtering and history enumeration.

Given S_t = s and Z_t = z_t the future depends on the history only through
the policy, so every conditional value factors as ``b_t . W(z_t)`` where
``W(z_t)[s]`` is the truncated expected return from state ``s`` and ``b_t``
the filtered belief. ``W`` is memoized on the policy's memory key, which makes
finite-memory policies cheap and leaves history-dependent ones exponential
(guarded by ``max_branches``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .pomdp import History, Policy, Pomdp

MAX_BRANCHES = 10**6


class ZeroLikelihoodError(ValueError):
    """The history has probability zero under the model (and policy)."""


class ResourceLimitError(RuntimeError):
    """Enumeration would exceed the branch guard."""


@dataclass(frozen=True)
class OracleConfig:
    horizon: int
    gamma: float
    r_inf: float = 1.0
    max_branches: int = MAX_BRANCHES
    tail_tol: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "tail_tol",
                           self.gamma ** self.horizon * self.r_inf / (1.0 - self.gamma))

    @classmethod
    def from_tolerance(cls, tol: float, gamma: float, r_inf: float = 1.0, **kw) -> "OracleConfig":
        """Smallest horizon whose truncation error is certified below ``tol``."""
        H = math.ceil(math.log(tol * (1.0 - gamma) / r_inf) / math.log(gamma))
        return cls(max(H, 1), gamma, r_inf, **kw)


@dataclass(frozen=True)
class Belief:
    probs: np.ndarray


def initial_belief(pomdp: Pomdp, y0: int) -> Belief:
    joint = pomdp.init_state_dist * pomdp.observation[:, y0]
    z = joint.sum()
    if z <= 0:
        raise ZeroLikelihoodError(f"initial observation {y0} has probability zero")
    return Belief(joint / z)


def belief_update(pomdp: Pomdp, belief: Belief, action: int, next_obs: int) -> Belief:
    """Bayes filter: b'(s') proportional to sum_s b(s) P(s'|s,a) phi(y'|s')."""
    pred = belief.probs @ pomdp.transition[:, action, :]
    joint = pred * pomdp.observation[:, next_obs]
    z = joint.sum()
    if z <= 0:
        raise ZeroLikelihoodError(f"observation {next_obs} after action {action} is infeasible")
    return Belief(joint / z)


def filter_belief(pomdp: Pomdp, history: History) -> Belief:
    """Belief over S_t given the history (the time-t action carries no information on S_t)."""
    b = initial_belief(pomdp, history.observations[0])
    for k in range(1, len(history.observations)):
        b = belief_update(pomdp, b, history.actions[k - 1], history.observations[k])
    return b


def joint_state_history(pomdp: Pomdp, policy: Policy, history: History) -> np.ndarray:
    """P(S_t = s, Z-bar_t = z-bar_t) by summing over every state path, policy factors included."""
    obs, acts = history.observations, history.actions
    t = len(obs) - 1
    S = pomdp.n_states
    pol = 1.0
    for k in range(len(acts)):
        sub = History(obs[: k + 1], acts[:k], None)
        pol *= policy.probs(k, sub)[acts[k]]
    out = np.zeros(S)
    for path in itertools.product(range(S), repeat=t + 1):
        p = pomdp.init_state_dist[path[0]] * pomdp.observation[path[0], obs[0]]
        for k in range(1, t + 1):
            p *= pomdp.transition[path[k - 1], acts[k - 1], path[k]] * pomdp.observation[path[k], obs[k]]
        out[path[-1]] += p
    return out * pol


def _open_t(history: History) -> int:
    return len(history.observations) - 1


class ValueOracle:
    """Truncated exact values for one (POMDP, policy) pair, with shared memo."""

    def __init__(self, pomdp: Pomdp, policy: Policy, config: OracleConfig):
        self.pomdp = pomdp
        self.policy = policy
        self.config = config
        self.nodes = 0
        self._memo: dict = {}

    def _tick(self):
        self.nodes += 1
        if self.nodes > self.config.max_branches:
            raise ResourceLimitError(
                f"enumeration exceeded {self.config.max_branches} branches; "
                "reduce the horizon or use a finite-memory policy")

    def continuation(self, z: History, depth: int) -> np.ndarray:
        """W(z, depth)[s]: expected discounted reward over ``depth`` steps from S_t = s."""
        if depth <= 0:
            return np.zeros(self.pomdp.n_states)
        t = _open_t(z)
        key = (self.policy.memory_key(t, z), depth)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        self._tick()
        p = self.policy.probs(t, z)
        out = np.zeros(self.pomdp.n_states)
        for a in range(len(p)):
            if p[a] > 0:
                out += p[a] * self.action_continuation(z, a, depth)
        self._memo[key] = out
        return out

    def action_continuation(self, z: History, a: int, depth: int) -> np.ndarray:
        """G(z, a, depth)[s] = r(s,a) + gamma * E[W(z a y', depth-1)(S') | s, a]."""
        pm = self.pomdp
        out = pm.reward[:, a].copy()
        if depth > 1:
            closed = History(z.observations, z.actions + (a,), None)
            nxt = np.zeros(pm.n_states)  # nxt[s'] = sum_y' phi(y'|s') W(z a y')[s']
            for y in range(pm.n_obs):
                col = pm.observation[:, y]
                if np.any(col > 0):
                    nxt += col * self.continuation(closed.extend(y), depth - 1)
            out += self.config.gamma * (pm.transition[:, a, :] @ nxt)
        return out

    def _feasible_belief(self, history: History) -> np.ndarray:
        b = filter_belief(self.pomdp, history).probs
        obs, acts = history.observations, history.actions
        for k in range(len(acts)):
            if self.policy.probs(k, History(obs[: k + 1], acts[:k], None))[acts[k]] <= 0:
                raise ZeroLikelihoodError(f"action {acts[k]} at step {k} has probability zero")
        return b

    def q(self, history: History, depth: int | None = None) -> float:
        if not history.closed:
            raise ValueError("Q needs an action-closed history")
        depth = self.config.horizon if depth is None else depth
        b = self._feasible_belief(history)
        z = history.open()
        return float(b @ self.action_continuation(z, history.actions[-1], depth))

    def v(self, history: History, depth: int | None = None) -> float:
        if history.closed:
            raise ValueError("V needs an open history")
        depth = self.config.horizon if depth is None else depth
        b = self._feasible_belief(history)
        return float(b @ self.continuation(history, depth))

    def advantage(self, history: History, depth: int | None = None) -> float:
        return self.q(history, depth) - self.v(history.open(), depth)

    def initial_value(self, depth: int | None = None) -> float:
        """V^pi(mu): the time-0 value averaged over the law of Y_0."""
        depth = self.config.horizon if depth is None else depth
        pm = self.pomdp
        total = 0.0
        for y in range(pm.n_obs):
            joint = pm.init_state_dist * pm.observation[:, y]
            if joint.sum() > 0:
                total += float(joint @ self.continuation(History((y,), (), None), depth))
        return total


def _strip(history: History) -> History:
    return History(history.observations, history.actions, None)


def exact_q(pomdp: Pomdp, policy: Policy, history_closed: History, config: OracleConfig) -> float:
    return ValueOracle(pomdp, policy, config).q(_strip(history_closed))


def exact_value(pomdp: Pomdp, policy: Policy, history_open: History, config: OracleConfig) -> float:
    return ValueOracle(pomdp, policy, config).v(_strip(history_open))


def exact_advantage(pomdp: Pomdp, policy: Policy, history_closed: History,
                    config: OracleConfig) -> float:
    return ValueOracle(pomdp, policy, config).advantage(_strip(history_closed))


def initial_value(pomdp: Pomdp, policy: Policy, config: OracleConfig) -> float:
    return ValueOracle(pomdp, policy, config).initial_value()


def enumerate_histories(pomdp: Pomdp, depth: int, closed: bool = True):
    """All histories up to time ``depth`` that have positive model probability.

    Yields closed histories z-bar_t (or open z_t when ``closed`` is False) for
    t = 0..depth, ignoring the policy.
    """
    init = pomdp.init_obs_dist()
    frontier = [History((y,), (), None) for y in range(pomdp.n_obs) if init[y] > 0]
    for t in range(depth + 1):
        nxt = []
        for z in frontier:
            if not closed:
                yield z
            b = filter_belief(pomdp, z).probs
            for a in range(pomdp.n_actions):
                zc = History(z.observations, z.actions + (a,), None)
                if closed:
                    yield zc
                if t < depth:
                    pred = (b @ pomdp.transition[:, a, :]) @ pomdp.observation
                    nxt.extend(zc.extend(y) for y in range(pomdp.n_obs) if pred[y] > 0)
        frontier = nxt


def bellman_residual(oracle: ValueOracle, history: History) -> float:
    """|Q_t(z-bar) - E[r_t + gamma Q_{t+1}(Z-bar_{t+1}) | z-bar]| with the expectation enumerated."""
    pm, gamma = oracle.pomdp, oracle.config.gamma
    a = history.actions[-1]
    b = filter_belief(pm, history).probs
    rhs = float(b @ pm.reward[:, a])
    obs_prob = (b @ pm.transition[:, a, :]) @ pm.observation
    for y in range(pm.n_obs):
        if obs_prob[y] <= 0:
            continue
        z_next = history.extend(y)
        p = oracle.policy.probs(_open_t(z_next), z_next)
        for a2 in range(len(p)):
            if p[a2] > 0:
                rhs += gamma * obs_prob[y] * p[a2] * oracle.q(z_next.close(a2))
    return abs(oracle.q(history) - rhs)


def check_bellman(pomdp: Pomdp, policy: Policy, config: OracleConfig, depth: int = 3) -> float:
    """Largest Bellman residual over all feasible closed histories up to ``depth``."""
    oracle = ValueOracle(pomdp, policy, config)
    worst = 0.0
    for z in enumerate_histories(pomdp, depth):
        try:
            worst = max(worst, bellman_residual(oracle, z))
        except ZeroLikelihoodError:
            continue
    return worst


def check_belief_independence(pomdp: Pomdp, policy_a: Policy, policy_b: Policy,
                              depth: int = 3) -> float:
    """Max gap between the posteriors over S_t computed by joint enumeration under two policies."""
    worst = 0.0
    for z in enumerate_histories(pomdp, depth):
        ja = joint_state_history(pomdp, policy_a, z)
        jb = joint_state_history(pomdp, policy_b, z)
        if ja.sum() <= 0 or jb.sum() <= 0:
            continue
        worst = max(worst, float(np.max(np.abs(ja / ja.sum() - jb / jb.sum()))))
    return worst


def check_performance_difference(pomdp: Pomdp, policy_a: Policy, policy_b: Policy,
                                 config: OracleConfig) -> float:
    """Residual of V^b(mu) - V^a(mu) = E^b sum_t gamma^t A^a_t(Z_t, A_t).

    Both sides are enumerated with a common absolute horizon H: the advantage
    at time t looks H - t steps ahead. Histories are lumped by the pair of
    policy memory keys, carrying the unnormalized joint law of the state.
    """
    H, gamma = config.horizon, config.gamma
    oa = ValueOracle(pomdp, policy_a, config)
    ob = ValueOracle(pomdp, policy_b, config)
    lhs = ob.initial_value(H) - oa.initial_value(H)

    groups: dict = {}
    for y in range(pomdp.n_obs):
        joint = pomdp.init_state_dist * pomdp.observation[:, y]
        if joint.sum() > 0:
            _merge(groups, policy_a, policy_b, History((y,), (), None), joint, 0)
    rhs = 0.0
    n_groups = 0
    for t in range(H):
        nxt: dict = {}
        for z, joint in groups.values():
            n_groups += 1
            if n_groups > config.max_branches:
                raise ResourceLimitError("performance-difference enumeration exceeded the guard")
            pb = policy_b.probs(t, z)
            v_a = oa.continuation(z, H - t)
            for a in range(len(pb)):
                if pb[a] <= 0:
                    continue
                g = oa.action_continuation(z, a, H - t) - v_a
                rhs += gamma ** t * pb[a] * float(joint @ g)
                if t + 1 < H:
                    pred = (pb[a] * joint) @ pomdp.transition[:, a, :]
                    zc = History(z.observations, z.actions + (a,), None)
                    for y in range(pomdp.n_obs):
                        j2 = pred * pomdp.observation[:, y]
                        if j2.sum() > 0:
                            _merge(nxt, policy_a, policy_b, zc.extend(y), j2, t + 1)
        groups = nxt
    return abs(lhs - rhs)


def _merge(groups: dict, pa: Policy, pb: Policy, z: History, joint: np.ndarray, t: int) -> None:
    key = (pb.memory_key(t, z), pa.memory_key(t, z))
    if key in groups:
        rep, acc = groups[key]
        groups[key] = (rep, acc + joint)
    else:
        groups[key] = (z, joint)


def path_enumeration_q(pomdp: Pomdp, policy: Policy, history: History, horizon: int,
                       gamma: float) -> float:
    """Brute-force Q: enumerate every state path and every future (y, a) outcome.

    Independent of belief filtering; exponential in everything, for tiny cases only.
    """
    if not history.closed:
        raise ValueError("path_enumeration_q needs an action-closed history")
    obs, acts = history.observations, history.actions
    t = len(obs) - 1
    S = pomdp.n_states
    num = den = 0.0
    for past in itertools.product(range(S), repeat=t + 1):
        w = pomdp.init_state_dist[past[0]] * pomdp.observation[past[0], obs[0]]
        for k in range(1, t + 1):
            w *= pomdp.transition[past[k - 1], acts[k - 1], past[k]] * pomdp.observation[past[k], obs[k]]
        if w == 0:
            continue
        den += w
        num += w * _future_return(pomdp, policy, history, past[-1], horizon, gamma)
    if den == 0:
        raise ZeroLikelihoodError("history has probability zero")
    return num / den


def _future_return(pomdp, policy, history, s, horizon, gamma):
    a = history.actions[-1]
    val = pomdp.reward[s, a]
    if horizon <= 1:
        return val
    t = len(history.observations) - 1
    for s2 in range(pomdp.n_states):
        ps = pomdp.transition[s, a, s2]
        if ps == 0:
            continue
        for y in range(pomdp.n_obs):
            py = pomdp.observation[s2, y]
            if py == 0:
                continue
            z = History(history.observations + (y,), history.actions, None)
            p = policy.probs(t + 1, z)
            for a2 in range(len(p)):
                if p[a2] > 0:
                    val += gamma * ps * py * p[a2] * _future_return(
                        pomdp, policy, z.close(a2), s2, horizon - 1, gamma)
    return val


@dataclass
class PathTable:
    """Every action-closed length-n history with its probability under a policy.

    ``r_mean[:, t]`` and ``r_sq[:, t]`` are E[r_t | Z-bar_{t+1}] and
    E[r_t^2 | Z-bar_{t+1}] (conditioning on Z-bar_t at the final step).
    """

    observations: np.ndarray
    actions: np.ndarray
    prob: np.ndarray
    r_mean: np.ndarray
    r_sq: np.ndarray


def enumerate_paths(pomdp: Pomdp, policy: Policy, n_steps: int,
                    max_branches: int = MAX_BRANCHES) -> PathTable:
    """Enumerate Z-bar_{n-1} under ``policy`` carrying the joint state law along each path."""
    if (pomdp.n_obs * pomdp.n_actions) ** n_steps > max_branches:
        raise ResourceLimitError("path enumeration exceeds the branch guard")
    R = pomdp.reward
    rows = []  # (obs, acts, joint over S_t, r_mean list, r_sq list)
    for y in range(pomdp.n_obs):
        j = pomdp.init_state_dist * pomdp.observation[:, y]
        if j.sum() > 0:
            rows.append(((y,), (), j, [], []))
    leaves = []
    for t in range(n_steps):
        nxt = []
        for obs, acts, j, rm, rs in rows:
            p = policy.probs(t, History(obs, acts, None))
            for a in range(len(p)):
                if p[a] <= 0:
                    continue
                ja = j * p[a]
                if t == n_steps - 1:
                    pz = ja.sum()
                    b = ja / pz
                    leaves.append((obs, acts + (a,), pz, rm + [b @ R[:, a]], rs + [b @ R[:, a] ** 2]))
                    continue
                # joint over (S_t, S_{t+1}) then condition on y'
                for y in range(pomdp.n_obs):
                    pair = ja[:, None] * pomdp.transition[:, a, :] * pomdp.observation[None, :, y]
                    mass = pair.sum()
                    if mass <= 0:
                        continue
                    prev_s = pair.sum(axis=1) / mass
                    nxt.append((obs + (y,), acts + (a,), pair.sum(axis=0),
                                rm + [prev_s @ R[:, a]], rs + [prev_s @ R[:, a] ** 2]))
        rows = nxt
    obs = np.array([leaf[0] for leaf in leaves], dtype=np.int64)
    acts = np.array([leaf[1] for leaf in leaves], dtype=np.int64)
    return PathTable(obs, acts, np.array([leaf[2] for leaf in leaves]),
                     np.array([leaf[3] for leaf in leaves]), np.array([leaf[4] for leaf in leaves]))
