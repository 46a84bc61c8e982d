"""Softmax policies driven by an IndRNN actor."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .indrnn import NetParams, branch_along, branch_from_state
from .pomdp import FeatureMap, History, Policy


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


class SoftmaxRnnPolicy(Policy):
    """pi_t(a | z_t) proportional to exp F_t((z_t, a); Phi).

    The hidden state of the realized prefix (x_0..x_{t-1}) does not depend on
    the candidate action, so it is computed once and cached per prefix; only
    the final recursion step is repeated for each action.
    """

    max_cache = 200_000

    def __init__(self, net: NetParams, feature_map: FeatureMap):
        if net.d != feature_map.d:
            raise ValueError("actor input dimension must match the feature map")
        self.net = net
        self.feature_map = feature_map
        self.n_actions = feature_map.embed.shape[1]
        self._cache: dict = {}
        self._grad_cache: dict = {}

    # prefix state for x_0..x_{t-1}
    def _prefix(self, history: History, with_grad: bool):
        t = history.t
        if t == 0:
            return None
        cache = self._grad_cache if with_grad else self._cache
        key = (history.observations[:t], history.actions[:t])
        hit = cache.get(key)
        if hit is not None:
            return hit
        if len(cache) > self.max_cache:
            cache.clear()
        parent = History(history.observations[:t], history.actions[: t - 1], None)
        prev = self._prefix(parent, with_grad)
        x = self.feature_map.embed[history.observations[t - 1], history.actions[t - 1]]
        state = _advance(self.net, prev, x, with_grad)
        cache[key] = state
        return state

    def _candidates(self, history: History) -> np.ndarray:
        return self.feature_map.embed[history.observations[-1]]  # (A, d)

    def logits(self, history: History, with_grad: bool = False):
        _, F, grad = branch_from_state(self.net, self._prefix(history, with_grad),
                                       self._candidates(history), with_grad)
        return F, grad

    def probs(self, t, history):
        F, _ = self.logits(history)
        return softmax(F)

    def log_prob_grad(self, history: History, action: int) -> np.ndarray:
        F, grad = self.logits(history, with_grad=True)
        p = softmax(F)
        return grad[action] - np.einsum("a,aij->ij", p, grad)

    def linearized_logits(self, history: History) -> np.ndarray:
        init = replace(self.net, w=self.net.w0, u=self.net.u0)
        snap = SoftmaxRnnPolicy(init, self.feature_map)
        _, grad = snap.logits(history, with_grad=True)
        return np.einsum("aij,ij->a", grad, self.net.deviation())

    def log_linearized_probs(self, history: History) -> np.ndarray:
        return softmax(self.linearized_logits(history))

    def path_scores(self, observations, actions):
        """Probabilities and score vectors at every step of a realized path.

        Returns ``probs`` of shape (n, A) and ``scores`` of shape (n, m, d+1)
        where ``scores[t]`` is grad log pi_t(A_t | Z_t).
        """
        obs = np.asarray(observations)
        acts = np.asarray(actions)
        emb = self.feature_map.embed
        F, grad = branch_along(self.net, emb[obs, acts], emb[obs], with_grad=True)
        p = softmax(F)
        n = len(obs)
        scores = grad[np.arange(n), acts] - np.einsum("na,naij->nij", p, grad)
        return p, scores


def _advance(net: NetParams, prev, x, with_grad: bool):
    """Advance (H, dH/dw, dH/du) by one input."""
    if prev is None:
        h = np.zeros(net.m)
        dw = np.zeros(net.m)
        du = np.zeros((net.m, net.d))
    else:
        h, dw, du = prev
    h_new, dact = net.activation.f_and_df(net.w * h + net.u @ x)
    if not with_grad:
        return h_new, None, None
    dw_new = dact * (h + net.w * dw)
    du_new = dact[:, None] * (x[None, :] + net.w[:, None] * du)
    return h_new, dw_new, du_new


def action_probs(policy: SoftmaxRnnPolicy, history: History) -> np.ndarray:
    return policy.probs(history.t, history)


def log_prob_grad(policy: SoftmaxRnnPolicy, history: History, action: int) -> np.ndarray:
    return policy.log_prob_grad(history, action)


def log_linearized_probs(policy: SoftmaxRnnPolicy, history: History) -> np.ndarray:
    return policy.log_linearized_probs(history)


@dataclass(frozen=True)
class AdvantageEstimate:
    q_values: np.ndarray
    v_value: float
    advantages: np.ndarray


def advantage_from_critic(actor: SoftmaxRnnPolicy, critic: NetParams,
                          history: History) -> AdvantageEstimate:
    """Critic-based Q-hat per action, its policy average, and their difference."""
    critic_policy = SoftmaxRnnPolicy(critic, actor.feature_map)
    q, _ = critic_policy.logits(history)
    p = actor.probs(history.t, history)
    v = float(p @ q)
    return AdvantageEstimate(q, v, q - v)


def path_advantages(actor_probs: np.ndarray, critic: NetParams, feature_map: FeatureMap,
                    observations, actions) -> np.ndarray:
    """Critic advantages for every (step, action) along a realized path, shape (n, A)."""
    obs = np.asarray(observations)
    acts = np.asarray(actions)
    emb = feature_map.embed
    q, _ = branch_along(critic, emb[obs, acts], emb[obs])
    v = np.sum(actor_probs * q, axis=1, keepdims=True)
    return q - v
