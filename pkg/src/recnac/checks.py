"""Residual computations behind the verification suite.

Every function returns a nonnegative residual (or a ratio to a bound) so the
caller can compare it against a tolerance.
"""

from __future__ import annotations

import numpy as np

from .indrnn import (ProjectionRadii, build_transported_params, forward, init_symmetric,
                     linearized_forward, ntrf, ntrf_features, project_deviation,
                     smoothness_constants)
from .oracle import (OracleConfig, check_belief_independence, check_bellman,
                     check_performance_difference)
from .policy import SoftmaxRnnPolicy, kl
from .pomdp import History, ObservationPolicy, UniformPolicy, make_feature_map, random_pomdp
from .rec_td import semi_gradient

FD_EPS = 1e-6
ZDENOM = 1.6448536269514722  # standard normal 95% quantile


def random_unit_inputs(rng, shape) -> np.ndarray:
    """Gaussian directions with radii uniform in [0, 1], so every row has norm <= 1."""
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x, axis=-1, keepdims=True)
    return x * rng.uniform(0, 1, shape[:-1] + (1,))


def random_point_in_ball(rng, m: int, d: int, radii: ProjectionRadii) -> np.ndarray:
    """A deviation inside the max-norm ball with each unit at a random fraction of its radius."""
    sm = np.sqrt(m)
    dev = np.empty((m, d + 1))
    dev[:, 0] = rng.uniform(-1, 1, m) * radii.rho_w / sm
    u = rng.standard_normal((m, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    dev[:, 1:] = u * rng.uniform(0, 1, (m, 1)) * radii.rho_u / sm
    return dev


def _random_net(rng, m, d, alpha=0.5, spread=0.3):
    net = init_symmetric(m, d, alpha, int(rng.integers(2**32)))
    return net.with_theta(net.theta + spread * rng.standard_normal(net.theta.shape) / np.sqrt(m))


def central_difference(fn, theta: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    out = np.empty_like(theta)
    for idx in np.ndindex(theta.shape):
        e = np.zeros_like(theta)
        e[idx] = eps
        out[idx] = (fn(theta + e) - fn(theta - e)) / (2 * eps)
    return out


def gradient_fd_error(rng, n_configs: int = 50, fault: bool = False, max_m: int = 16,
                      max_d: int = 8, max_T: int = 8) -> float:
    """Max relative error of forward-mode grad F_t against central differences."""
    worst = 0.0
    for _ in range(n_configs):
        m = 2 * int(rng.integers(1, max_m // 2 + 1))
        d = int(rng.integers(1, max_d + 1))
        n = int(rng.integers(1, max_T + 1))
        net = _random_net(rng, m, d)
        x = random_unit_inputs(rng, (n, d))
        t = int(rng.integers(n))
        g = forward(net, x, with_grad=True).grad(t)
        if fault:
            g = g.copy()
            g[0, 0] += 1e-2
        fd = central_difference(lambda th: forward(net.with_theta(th), x).outputs[t], net.theta)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    return worst


def ntrf_error(rng, n_configs: int = 20, max_T: int = 8) -> float:
    """Max |grad_i F_t(theta0) - c_i psi_t / sqrt(m)| over units, steps and configs."""
    worst = 0.0
    for _ in range(n_configs):
        m = 2 * int(rng.integers(1, 17))
        d = int(rng.integers(1, 9))
        n = int(rng.integers(1, max_T + 1))
        net = init_symmetric(m, d, float(rng.uniform(0.1, 1.0)), int(rng.integers(2**32)))
        x = random_unit_inputs(rng, (n, d))
        tape = forward(net, x, with_grad=True)
        for t in range(n):
            psi = ntrf_features(net, x, t)
            worst = max(worst, np.max(np.abs(tape.grad(t) - net.c[:, None] * psi / np.sqrt(m))))
    return worst


def null_output_error(rng, n_configs: int = 100) -> float:
    """Max |F_t| at the symmetric initialization over random inputs and widths."""
    worst = 0.0
    for _ in range(n_configs):
        m = 2 * int(rng.integers(1, 513))
        d = int(rng.integers(1, 9))
        net = init_symmetric(m, d, float(rng.uniform(0, 1)), int(rng.integers(2**32)))
        x = random_unit_inputs(rng, (int(rng.integers(1, 9)), d))
        worst = max(worst, np.max(np.abs(forward(net, x).outputs)))
    return worst


def projection_errors(rng, n_pairs: int = 200) -> dict:
    membership = idem = expand = 0.0
    for _ in range(n_pairs):
        m = 2 * int(rng.integers(1, 33))
        d = int(rng.integers(1, 9))
        radii = ProjectionRadii(float(rng.uniform(0.1, 3)), float(rng.uniform(0.1, 3)))
        a = 3 * rng.standard_normal((m, d + 1)) / np.sqrt(m)
        b = 3 * rng.standard_normal((m, d + 1)) / np.sqrt(m)
        pa, pb = project_deviation(a, radii), project_deviation(b, radii)
        sm = np.sqrt(m)
        membership = max(membership,
                         np.max(np.abs(pa[:, 0])) - radii.rho_w / sm,
                         np.max(np.linalg.norm(pa[:, 1:], axis=1)) - radii.rho_u / sm)
        idem = max(idem, np.max(np.abs(project_deviation(pa, radii) - pa)))
        expand = max(expand, np.linalg.norm(pa - pb) - np.linalg.norm(a - b))
    return {"projection_membership": max(membership, 0.0), "projection_idempotent": idem,
            "projection_nonexpansive": max(expand, 0.0)}


def tiny_pomdp(seed: int = 0):
    return random_pomdp(2, 2, 2, seed)


def oracle_errors(config: OracleConfig, seed: int = 0, depth: int = 3) -> dict:
    """Bellman residual, belief policy-independence and performance-difference residual."""
    pomdp = tiny_pomdp(seed)
    uniform = UniformPolicy(2)
    skewed = ObservationPolicy(np.array([[0.9, 0.1], [0.2, 0.8]]))
    return {
        "bellman": max(check_bellman(pomdp, uniform, config, depth),
                       check_bellman(pomdp, skewed, config, depth)),
        "belief_independence": check_belief_independence(pomdp, uniform, skewed, depth),
        "performance_difference": check_performance_difference(pomdp, skewed, uniform, config),
    }


def kl_bound_ratios(rng, widths=(64, 256), n_params: int = 100, max_t: int = 6,
                    radii: ProjectionRadii = ProjectionRadii(1.0, 1.0), alpha: float = 0.5):
    """KL(pi || pi_lin) and KL(pi_lin || pi) divided by the log-linearization bound.

    Returns an array of shape (len(widths) * n_params, 2).
    """
    pomdp = tiny_pomdp()
    fm = make_feature_map(pomdp, "concat-one-hot")
    out = []
    for m in widths:
        base = init_symmetric(m, fm.d, alpha, int(rng.integers(2**32)))
        consts = smoothness_constants(base.activation, alpha, radii, m, max_t + 2, fm.d)
        for _ in range(n_params):
            dev = random_point_in_ball(rng, m, fm.d, radii)
            net = base.with_theta(base.theta0 + dev)
            t = int(rng.integers(0, max_t + 1))
            obs = tuple(int(v) for v in rng.integers(0, 2, t + 1))
            acts = tuple(int(v) for v in rng.integers(0, 2, t))
            h = History(obs, acts, None)
            pol = SoftmaxRnnPolicy(net, fm)
            p, q = pol.probs(t, h), pol.log_linearized_probs(h)
            bound = consts.log_linearization_bound(t, m, float(np.sum(dev ** 2)))
            out.append((kl(p, q) / bound, kl(q, p) / bound))
    return np.array(out)


def kl_bound_excess(rng, widths=(64,), n_params: int = 20) -> float:
    return float(np.max(kl_bound_ratios(rng, widths, n_params)))


def semi_gradient_fd_error(rng, n_configs: int = 10, gamma: float = 0.9) -> float:
    """Semi-gradient against central differences of the frozen-target surrogate."""
    worst = 0.0
    for _ in range(n_configs):
        m = 2 * int(rng.integers(1, 9))
        d = int(rng.integers(1, 6))
        T = int(rng.integers(1, 7))
        net = _random_net(rng, m, d, spread=1.0)
        x = random_unit_inputs(rng, (T + 1, d))
        r = rng.uniform(-1, 1, T + 1)
        tape = forward(net, x, with_grad=True)
        target = r[:T] + gamma * tape.outputs[1:T + 1]
        disc = gamma ** np.arange(T)

        def surrogate(th):
            F = forward(net.with_theta(th), x).outputs[:T]
            return 0.5 * float(disc @ (F - target) ** 2)

        fd = -central_difference(surrogate, net.theta)
        g = semi_gradient(tape, r, gamma, T)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    return worst


def ci_arithmetic_error() -> float:
    """Two curves {0, 2}: mean 1 and half-width z * sqrt(2) / sqrt(2) = z."""
    from .harness import aggregate_ci
    mean, lo, hi = aggregate_ci(np.array([[0.0], [2.0]]))
    return float(max(abs(mean[0] - 1.0), abs(hi[0] - 1.0 - ZDENOM), abs(1.0 - lo[0] - ZDENOM)))


def bounded_transport(w0: np.ndarray, u0: np.ndarray) -> np.ndarray:
    """A fixed bounded transport map v(w, u) with values in [-1, 1]^(d+1)."""
    return np.column_stack([np.sign(w0) * np.cos(u0[:, 0]), np.tanh(u0)])


def infinite_width_target(inputs: np.ndarray, t: int, d: int, alpha: float, transport=bounded_transport,
                          n_draws: int = 200_000, chunk: int = 4000, seed: int = 0) -> np.ndarray:
    """Monte Carlo estimate of f*(x) = E[v(theta0) . psi_t(x; theta0)] over the init law."""
    rng = np.random.default_rng(seed)
    total = np.zeros(inputs.shape[0])
    done = 0
    while done < n_draws:
        k = min(chunk, n_draws - done)
        w0 = alpha * rng.choice([-1.0, 1.0], size=k)
        u0 = rng.standard_normal((k, d))
        psi = ntrf(w0, u0, inputs, t)  # (n_inputs, k, d+1)
        total += np.einsum("nkj,kj->n", psi, transport(w0, u0))
        done += k
    return total / n_draws


def linearization_gap(widths=(64, 256, 1024), n_inputs: int = 500, n_inits: int = 20, d: int = 3,
                      seq_len: int = 3, alpha: float = 0.5, n_draws: int = 200_000,
                      seed: int = 0) -> dict:
    """Mean over inits of the mean-squared gap between f* and F_lin at the transported parameters."""
    rng = np.random.default_rng(seed)
    x = random_unit_inputs(rng, (n_inputs, seq_len, d))
    t = seq_len - 1
    target = infinite_width_target(x, t, d, alpha, n_draws=n_draws, seed=seed + 1)
    out = {}
    for m in widths:
        gaps = []
        for _ in range(n_inits):
            net = init_symmetric(m, d, alpha, int(rng.integers(2**32)))
            moved = build_transported_params(net, bounded_transport)
            gaps.append(np.mean((linearized_forward(moved, x)[:, t] - target) ** 2))
        out[m] = float(np.mean(gaps))
    return out
