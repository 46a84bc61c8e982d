"""Finite POMDPs, histories, trajectory sampling and input featurization."""

from __future__ import annotations

import abc
import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable

import numpy as np

ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Pomdp:
    """Finite POMDP with kernels stored as dense arrays.

    ``transition[s, a, s']``, ``observation[s, y]``, ``reward[s, a]``.
    """

    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    init_state_dist: np.ndarray
    r_inf: float
    seed: int | None = None

    def __post_init__(self):
        for name in ("transition", "observation", "reward", "init_state_dist"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        S, A = self.reward.shape
        if self.transition.shape != (S, A, S):
            raise ValueError(f"transition has shape {self.transition.shape}, expected {(S, A, S)}")
        if self.observation.ndim != 2 or self.observation.shape[0] != S:
            raise ValueError("observation must be |S| x |Y|")
        if self.init_state_dist.shape != (S,):
            raise ValueError("init_state_dist must have length |S|")
        for name, arr in (("transition", self.transition), ("observation", self.observation)):
            if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > ROW_TOL):
                raise ValueError(f"{name} rows must be probability vectors")
        if np.any(self.init_state_dist < 0) or abs(self.init_state_dist.sum() - 1.0) > ROW_TOL:
            raise ValueError("init_state_dist must be a probability vector")
        if np.any(np.abs(self.reward) > self.r_inf):
            raise ValueError("|reward| exceeds r_inf")

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def n_obs(self) -> int:
        return self.observation.shape[1]

    def init_obs_dist(self) -> np.ndarray:
        """Marginal law of Y_0."""
        return self.init_state_dist @ self.observation

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_obs": self.n_obs,
            "n_actions": self.n_actions,
            "seed": self.seed,
            "r_inf": self.r_inf,
            "transition": self.transition.tolist(),
            "observation": self.observation.tolist(),
            "reward": self.reward.tolist(),
            "init_state_dist": self.init_state_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Pomdp":
        return cls(
            transition=np.asarray(data["transition"], dtype=float),
            observation=np.asarray(data["observation"], dtype=float),
            reward=np.asarray(data["reward"], dtype=float),
            init_state_dist=np.asarray(data["init_state_dist"], dtype=float),
            r_inf=float(data["r_inf"]),
            seed=data.get("seed"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Pomdp":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def same_as(self, other: "Pomdp") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("transition", "observation", "reward", "init_state_dist")
        ) and self.r_inf == other.r_inf


def _unit_interval_open_left(rng: np.random.Generator, shape) -> np.ndarray:
    # Uniform(0, 1]: rng.random is [0, 1)
    return 1.0 - rng.random(shape)


def random_pomdp(n_states: int, n_obs: int, n_actions: int, seed: int) -> Pomdp:
    """Random instance: normalized Uniform(0,1] kernel rows, Uniform[0,1] rewards."""
    if min(n_states, n_obs, n_actions) < 1:
        raise ValueError("all counts must be >= 1")
    rng = np.random.default_rng(seed)
    P = _unit_interval_open_left(rng, (n_states, n_actions, n_states))
    P /= P.sum(axis=-1, keepdims=True)
    O = _unit_interval_open_left(rng, (n_states, n_obs))
    O /= O.sum(axis=-1, keepdims=True)
    R = rng.random((n_states, n_actions))
    mu = np.full(n_states, 1.0 / n_states)
    return Pomdp(P, O, R, mu, r_inf=1.0, seed=seed)


@dataclass(frozen=True)
class History:
    """Observation/action record, open (Z_t) or action-closed (Z-bar_t).

    ``rewards`` is ``None`` when the rewards are unknown, which is the case
    for histories built by enumeration rather than by simulation.
    """

    observations: tuple[int, ...]
    actions: tuple[int, ...] = ()
    rewards: tuple[float, ...] | None = ()

    def __post_init__(self):
        n_obs, n_act = len(self.observations), len(self.actions)
        if n_obs < 1 or n_act not in (n_obs - 1, n_obs):
            raise ValueError(f"inconsistent history: {n_obs} observations, {n_act} actions")
        if self.rewards is not None and len(self.rewards) != n_act:
            raise ValueError("rewards must have one entry per completed step")

    @property
    def closed(self) -> bool:
        return len(self.actions) == len(self.observations)

    @property
    def t(self) -> int:
        return len(self.observations) - 1

    def close(self, action: int, reward: float | None = None) -> "History":
        if self.closed:
            raise ValueError("history is already closed")
        rewards = None if self.rewards is None or reward is None else self.rewards + (reward,)
        return History(self.observations, self.actions + (action,), rewards)

    def extend(self, next_obs: int) -> "History":
        if not self.closed:
            raise ValueError("history must be closed before observing")
        return History(self.observations + (next_obs,), self.actions, self.rewards)

    def open(self) -> "History":
        """The open history Z_t underlying a closed Z-bar_t."""
        if not self.closed:
            return self
        rewards = None if self.rewards is None else self.rewards[:-1]
        return History(self.observations, self.actions[:-1], rewards)

    def key(self) -> tuple:
        return (self.observations, self.actions)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self):
        return len(self.states)

    def history(self, t: int, closed: bool = True) -> History:
        obs = tuple(int(y) for y in self.observations[: t + 1])
        n_act = t + 1 if closed else t
        acts = tuple(int(a) for a in self.actions[:n_act])
        rews = tuple(float(r) for r in self.rewards[:n_act])
        return History(obs, acts, rews)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s", "y", "a", "r"])
            for t in range(len(self)):
                w.writerow([t, int(self.states[t]), int(self.observations[t]),
                            int(self.actions[t]), repr(float(self.rewards[t]))])


class Policy(abc.ABC):
    """Admissible non-stationary policy over open histories."""

    n_actions: int

    @abc.abstractmethod
    def probs(self, t: int, history: History) -> np.ndarray:
        """Action distribution pi_t(. | z_t)."""

    def act(self, t: int, history: History, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        p = self.probs(t, history)
        return int(rng.choice(len(p), p=p)), p

    def memory_key(self, t: int, history: History) -> Hashable:
        """Hashable summary such that equal keys imply equal behavior on every continuation.

        The default is the full history; finite-memory policies override it so
        that exact enumeration can share work between histories.
        """
        return history.key()


class UniformPolicy(Policy):
    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def probs(self, t, history):
        return np.full(self.n_actions, 1.0 / self.n_actions)

    def memory_key(self, t, history):
        return ()


class ObservationPolicy(Policy):
    """Stationary memoryless policy: ``table[y]`` is the action distribution."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)
        self.n_actions = self.table.shape[1]

    def probs(self, t, history):
        return self.table[history.observations[-1]].copy()

    def memory_key(self, t, history):
        return history.observations[-1]


class EpsilonGreedyPolicy(Policy):
    """Explores uniformly with probability min((2+t)/10, p_exp), else repeats the best past action.

    The best past action is the one taken at the earliest step attaining the
    maximal reward so far. At t=0 there is no past, so the action is uniform.
    """

    def __init__(self, n_actions: int, p_exp: float):
        if not 0.0 < p_exp < 1.0:
            raise ValueError("p_exp must lie in (0, 1)")
        self.n_actions = n_actions
        self.p_exp = p_exp

    def explore_prob(self, t: int) -> float:
        return min((2 + t) / 10, self.p_exp)

    def best_index(self, history: History) -> int:
        if history.rewards is None:
            raise ValueError("epsilon-greedy policy needs the reward trace")
        return int(np.argmax(history.rewards))  # argmax returns the first maximizer

    def probs(self, t, history):
        if t == 0:
            return np.full(self.n_actions, 1.0 / self.n_actions)
        eps = self.explore_prob(t)
        p = np.full(self.n_actions, eps / self.n_actions)
        p[history.actions[self.best_index(history)]] += 1.0 - eps
        return p

    def act(self, t, history, rng):
        p = self.probs(t, history)
        if t == 0 or rng.random() < self.explore_prob(t):
            return int(rng.integers(self.n_actions)), p
        return int(history.actions[self.best_index(history)]), p

    def memory_key(self, t, history):
        raise TypeError("epsilon-greedy depends on rewards and cannot be enumerated")


def epsilon_greedy_policy(n_actions: int, p_exp: float) -> EpsilonGreedyPolicy:
    return EpsilonGreedyPolicy(n_actions, p_exp)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Precomputed embedding ``embed[y, a]`` of observation-action pairs."""

    mode: str
    embed: np.ndarray
    normalized: bool = True
    seed: int | None = None

    @property
    def d(self) -> int:
        return self.embed.shape[-1]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "normalized": self.normalized, "seed": self.seed,
                "embed": self.embed.tolist()}


def make_feature_map(pomdp: Pomdp, mode: str = "gaussian-joint", d: int | None = None,
                     seed: int = 0) -> FeatureMap:
    Y, A = pomdp.n_obs, pomdp.n_actions
    if mode == "concat-one-hot":
        embed = np.zeros((Y, A, Y + A))
        for y in range(Y):
            for a in range(A):
                embed[y, a, y] = embed[y, a, Y + a] = 1.0
        embed /= np.sqrt(2.0)
    elif mode == "gaussian-joint":
        if d is None or d < 1:
            raise ValueError("gaussian-joint needs d >= 1")
        embed = np.random.default_rng(seed).standard_normal((Y, A, d))
        embed /= np.linalg.norm(embed, axis=-1).max()
    else:
        raise ValueError(f"unknown feature mode {mode!r}")
    embed.setflags(write=False)
    return FeatureMap(mode, embed, True, seed)


def embed_history(feature_map: FeatureMap, history: History) -> np.ndarray:
    """Inputs x_0..x_t of a closed history, shape (t+1, d)."""
    if not history.closed:
        raise ValueError("embed_history needs an action-closed history")
    return feature_map.embed[list(history.observations), list(history.actions)]


def sample_trajectory(pomdp: Pomdp, policy: Policy, T: int,
                      seed: int | np.random.Generator) -> Trajectory:
    """Roll out T+1 steps from S_0 ~ init_state_dist."""
    if T < 0:
        raise ValueError("T must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = T + 1
    S = np.empty(n, dtype=np.int64)
    Yv = np.empty(n, dtype=np.int64)
    Av = np.empty(n, dtype=np.int64)
    R = np.empty(n)
    s = rng.choice(pomdp.n_states, p=pomdp.init_state_dist)
    obs: list[int] = []
    acts: list[int] = []
    rews: list[float] = []
    for t in range(n):
        y = int(rng.choice(pomdp.n_obs, p=pomdp.observation[s]))
        obs.append(y)
        a, _ = policy.act(t, History(tuple(obs), tuple(acts), tuple(rews)), rng)
        r = float(pomdp.reward[s, a])
        S[t], Yv[t], Av[t], R[t] = s, y, a, r
        acts.append(a)
        rews.append(r)
        if t + 1 < n:
            s = rng.choice(pomdp.n_states, p=pomdp.transition[s, a])
    return Trajectory(S, Yv, Av, R)
