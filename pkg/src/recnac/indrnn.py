"""Independently recurrent network with exact forward-mode gradients.

Parameters are kept per unit: ``theta[i] = (w_i, u_i)`` so a parameter-shaped
array has shape ``(m, d + 1)`` with column 0 holding the recurrent weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

INPUT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Activation:
    name: str
    rho0: float  # sup |f|
    rho1: float  # sup |f'|
    rho2: float  # sup |f''|

    def f(self, z):
        if self.name == "tanh":
            return np.tanh(z)
        return 1.0 / (1.0 + np.exp(-z))

    def f_and_df(self, z):
        h = self.f(z)
        if self.name == "tanh":
            return h, 1.0 - h * h
        return h, h * (1.0 - h)


TANH = Activation("tanh", 1.0, 1.0, 4.0 / (3.0 * np.sqrt(3.0)))
SIGMOID = Activation("sigmoid", 1.0, 0.25, 1.0 / (6.0 * np.sqrt(3.0)))
ACTIVATIONS = {"tanh": TANH, "sigmoid": SIGMOID}


@dataclass(frozen=True, eq=False)
class NetParams:
    """IndRNN weights together with their symmetric initialization snapshot."""

    w: np.ndarray
    u: np.ndarray
    c: np.ndarray
    w0: np.ndarray
    u0: np.ndarray
    alpha: float
    activation: Activation = TANH
    seed: int | None = None

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @property
    def d(self) -> int:
        return self.u.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.column_stack([self.w, self.u])

    @property
    def theta0(self) -> np.ndarray:
        return np.column_stack([self.w0, self.u0])

    def with_theta(self, theta: np.ndarray) -> "NetParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.m, self.d + 1):
            raise ValueError(f"theta has shape {theta.shape}, expected {(self.m, self.d + 1)}")
        return replace(self, w=theta[:, 0].copy(), u=theta[:, 1:].copy())

    def deviation(self) -> np.ndarray:
        return self.theta - self.theta0

    def to_dict(self) -> dict:
        return {
            "m": self.m, "d": self.d, "alpha": self.alpha, "seed": self.seed,
            "activation": self.activation.name,
            "w": self.w.tolist(), "u": self.u.tolist(), "c": self.c.tolist(),
            "w0": self.w0.tolist(), "u0": self.u0.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetParams":
        arr = lambda k: np.asarray(data[k], dtype=float)  # noqa: E731
        u, u0 = arr("u").reshape(data["m"], data["d"]), arr("u0").reshape(data["m"], data["d"])
        return cls(arr("w"), u, arr("c"), arr("w0"), u0, float(data["alpha"]),
                   ACTIVATIONS[data.get("activation", "tanh")], data.get("seed"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "NetParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_symmetric(m: int, d: int, alpha: float, seed, activation: Activation | str = TANH) -> NetParams:
    """Paired random init: units i and i + m/2 share weights and carry opposite readout signs."""
    if m < 2 or m % 2:
        raise ValueError("width m must be even and >= 2")
    if d < 1 or alpha < 0:
        raise ValueError("need d >= 1 and alpha >= 0")
    if isinstance(activation, str):
        activation = ACTIVATIONS[activation]
    rng = np.random.default_rng(seed)
    half = m // 2
    c = rng.choice([-1.0, 1.0], size=half)
    w0 = alpha * rng.choice([-1.0, 1.0], size=half)
    u0 = rng.standard_normal((half, d))
    c = np.concatenate([c, -c])
    w0 = np.concatenate([w0, w0])
    u0 = np.concatenate([u0, u0])
    return NetParams(w0.copy(), u0.copy(), c, w0, u0, float(alpha), activation,
                     seed if isinstance(seed, int) else None)


@dataclass
class ForwardTape:
    """Hidden states, outputs and (optionally) per-unit sensitivities along a sequence.

    Leading batch axes of the inputs are preserved: ``hidden`` is
    ``(..., n, m)``, ``outputs`` is ``(..., n)``, ``dh_dw`` is ``(..., n, m)``
    and ``dh_du`` is ``(..., n, m, d)``.
    """

    hidden: np.ndarray
    outputs: np.ndarray
    dh_dw: np.ndarray | None = None
    dh_du: np.ndarray | None = None
    scale: np.ndarray | None = None  # c / sqrt(m)

    def __len__(self):
        return self.outputs.shape[-1]

    @property
    def has_grad(self) -> bool:
        return self.dh_dw is not None

    def grad(self, t: int | slice = slice(None)) -> np.ndarray:
        """Gradient of F_t with respect to theta, shape (..., m, d+1) (or with a time axis for slices)."""
        if not self.has_grad:
            raise ValueError("tape was recorded without gradients")
        g = np.concatenate([self.dh_dw[..., t, :, None], self.dh_du[..., t, :, :]], axis=-1)
        return self.scale[:, None] * g

    def last_state(self):
        """(H_{t-1}, dH/dw, dH/du) at the final recorded step."""
        if self.has_grad:
            return self.hidden[..., -1, :], self.dh_dw[..., -1, :], self.dh_du[..., -1, :, :]
        return self.hidden[..., -1, :], None, None


def _check_inputs(x: np.ndarray) -> None:
    if x.size and np.max(np.linalg.norm(x, axis=-1)) > 1.0 + INPUT_NORM_TOL:
        raise ValueError("inputs must satisfy ||x_t||_2 <= 1")


def _step(params: NetParams, h, dw, du, x, with_grad: bool):
    pre = params.w * h + x @ params.u.T
    h_new, dact = params.activation.f_and_df(pre)
    if not with_grad:
        return h_new, None, None
    dw_new = dact * (h + params.w * dw)
    du_new = dact[..., None] * (x[..., None, :] + params.w[:, None] * du)
    return h_new, dw_new, du_new


def forward(params: NetParams, inputs, with_grad: bool = False) -> ForwardTape:
    """Run the recursion H_t = f(w * H_{t-1} + U x_t) from H_{-1} = 0 over inputs ``(..., n, d)``."""
    x = np.asarray(inputs, dtype=float)
    _check_inputs(x)
    batch = x.shape[:-2]
    n, m = x.shape[-2], params.m
    h = np.zeros(batch + (m,))
    dw = np.zeros(batch + (m,)) if with_grad else None
    du = np.zeros(batch + (m, params.d)) if with_grad else None
    hs = np.empty(batch + (n, m))
    dws = np.empty(batch + (n, m)) if with_grad else None
    dus = np.empty(batch + (n, m, params.d)) if with_grad else None
    for t in range(n):
        h, dw, du = _step(params, h, dw, du, x[..., t, :], with_grad)
        hs[..., t, :] = h
        if with_grad:
            dws[..., t, :] = dw
            dus[..., t, :, :] = du
    scale = params.c / np.sqrt(m)
    return ForwardTape(hs, hs @ scale, dws, dus, scale)


def branch_from_state(params: NetParams, state, candidates, with_grad: bool = False):
    """One recursion step from ``state = (H, dH/dw, dH/du)`` for each candidate input.

    ``candidates`` has shape ``(..., B, d)``; the state's leading axes must
    broadcast against ``(...)``. ``state=None`` means the empty prefix.
    Returns ``(H, F, grad)`` with ``grad`` of shape ``(..., B, m, d+1)`` or ``None``.
    """
    x = np.asarray(candidates, dtype=float)
    _check_inputs(x)
    m = params.m
    if state is None:
        h = np.zeros(m)
        dw = np.zeros(m) if with_grad else None
        du = np.zeros((m, params.d)) if with_grad else None
    else:
        h, dw, du = state
        if with_grad and dw is None:
            raise ValueError("prefix state lacks gradient information")
        h = h[..., None, :]
        if with_grad:
            dw, du = dw[..., None, :], du[..., None, :, :]
    h_new, dw_new, du_new = _step(params, h, dw, du, x, with_grad)
    scale = params.c / np.sqrt(m)
    grad = None
    if with_grad:
        grad = scale[:, None] * np.concatenate([dw_new[..., None], du_new], axis=-1)
    return h_new, h_new @ scale, grad


def forward_branch(params: NetParams, prefix: ForwardTape | None, candidates,
                   with_grad: bool = False):
    """Branch one step past a recorded prefix tape (``None`` or empty for t = 0)."""
    state = None if prefix is None or len(prefix) == 0 else prefix.last_state()
    return branch_from_state(params, state, candidates, with_grad)


def branch_along(params: NetParams, inputs, candidates, with_grad: bool = False):
    """Branch at every step of a realized sequence.

    ``inputs`` is ``(n, d)``; ``candidates`` is ``(n, B, d)`` and row ``t``
    replaces x_t while keeping the realized prefix x_0..x_{t-1}. Returns
    outputs ``(n, B)`` and, with gradients, ``(n, B, m, d+1)``.
    """
    x = np.asarray(inputs, dtype=float)
    n, m, d = x.shape[0], params.m, params.d
    if n > 1:
        tape = forward(params, x[:-1], with_grad)
        h = np.vstack([np.zeros((1, m)), tape.hidden])
        if with_grad:
            dw = np.vstack([np.zeros((1, m)), tape.dh_dw])
            du = np.concatenate([np.zeros((1, m, d)), tape.dh_du])
        else:
            dw = du = None
    else:
        h = np.zeros((n, m))
        dw = np.zeros((n, m)) if with_grad else None
        du = np.zeros((n, m, d)) if with_grad else None
    _, F, grad = branch_from_state(params, (h, dw, du), candidates, with_grad)
    return F, grad


@dataclass(frozen=True)
class ProjectionRadii:
    rho_w: float
    rho_u: float

    def __post_init__(self):
        if self.rho_w <= 0 or self.rho_u <= 0:
            raise ValueError("projection radii must be positive")

    @property
    def norm(self) -> float:
        return float(np.hypot(self.rho_w, self.rho_u))


def project_deviation(dev: np.ndarray, radii: ProjectionRadii) -> np.ndarray:
    """Project per-unit deviations onto {|dw_i| <= rho_w/sqrt(m), ||du_i|| <= rho_u/sqrt(m)}."""
    m = dev.shape[0]
    out = np.array(dev, dtype=float)
    bw, bu = radii.rho_w / np.sqrt(m), radii.rho_u / np.sqrt(m)
    out[:, 0] = np.clip(out[:, 0], -bw, bw)
    norms = np.linalg.norm(out[:, 1:], axis=1)
    shrink = norms > bu
    out[shrink, 1:] *= (bu / norms[shrink])[:, None]
    return out


def project_max_norm(params: NetParams, radii: ProjectionRadii) -> NetParams:
    dev = params.deviation()
    proj = project_deviation(dev, radii)
    if np.array_equal(proj, dev):
        return params
    return params.with_theta(params.theta0 + proj)


def in_ball(params: NetParams, radii: ProjectionRadii, tol: float = 1e-12) -> bool:
    dev = params.deviation()
    sm = np.sqrt(params.m)
    return bool(np.max(np.abs(dev[:, 0])) <= radii.rho_w / sm + tol
                and np.max(np.linalg.norm(dev[:, 1:], axis=1)) <= radii.rho_u / sm + tol)


def linearized_forward(params: NetParams, inputs) -> np.ndarray:
    """First-order expansion around the snapshot: grad F_t(theta0) . (theta - theta0)."""
    at_init = replace(params, w=params.w0, u=params.u0)
    tape = forward(at_init, inputs, with_grad=True)
    g = tape.grad()  # (..., n, m, d+1)
    return np.einsum("...nij,ij->...n", g, params.deviation())


def ntrf(w0: np.ndarray, u0: np.ndarray, inputs, t: int, activation: Activation = TANH) -> np.ndarray:
    """Neural tangent random features psi_t for a batch of unit draws.

    ``w0`` is ``(M,)``, ``u0`` is ``(M, d)`` and ``inputs`` is ``(..., n, d)``
    with ``t < n``. Built from the explicit sum over lags; result has shape
    ``(..., M, d+1)``.
    """
    x = np.asarray(inputs, dtype=float)
    if not 0 <= t < x.shape[-2]:
        raise ValueError("t must index into the sequence")
    batch = x.shape[:-2]
    M = w0.shape[0]
    h_prev = np.zeros(batch + (M,))
    hs, Is = [], []
    for k in range(t + 1):
        pre = w0 * h_prev + x[..., k, :] @ u0.T
        h, dact = activation.f_and_df(pre)
        hs.append(h_prev)  # h_{k-1}
        Is.append(dact)
        h_prev = h
    psi = np.zeros(batch + (M, x.shape[-1] + 1))
    weight = np.ones(batch + (M,))
    for k in range(t + 1):
        weight = weight * Is[t - k] * (w0 if k else 1.0)
        psi[..., 0] += weight * hs[t - k]
        psi[..., 1:] += weight[..., None] * x[..., t - k, None, :]
    return psi


def ntrf_features(params: NetParams, inputs, t: int) -> np.ndarray:
    """psi_t for every unit of ``params`` evaluated at its initialization snapshot."""
    return ntrf(params.w0, params.u0, inputs, t, params.activation)


def build_transported_params(params: NetParams,
                             transport_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> NetParams:
    """theta_bar_i = theta_i(0) + c_i v(theta_i(0)) / sqrt(m)."""
    v = np.asarray(transport_fn(params.w0, params.u0), dtype=float)
    if v.shape != (params.m, params.d + 1):
        raise ValueError("transport_fn must return an (m, d+1) array")
    return params.with_theta(params.theta0 + params.c[:, None] * v / np.sqrt(params.m))


def p_poly(t: int, x: float) -> float:
    return float(sum(abs(x) ** k for k in range(t)))


def q_poly(t: int, x: float) -> float:
    return float(sum((k + 1) * abs(x) ** k for k in range(t)))


@dataclass(frozen=True)
class SmoothnessConstants:
    """Local continuity constants of the hidden states, tabulated for t = 0..T.

    Index ``t`` counts processed inputs, so the bounds for the output at
    zero-based step ``s`` are read at index ``s + 1``. ``beta`` uses the
    explicit constant d * p_t * q_t.
    """

    rho0: float
    rho1: float
    rho2: float
    alpha_m: float
    p: np.ndarray
    q: np.ndarray
    L: np.ndarray
    beta: np.ndarray
    Lam: np.ndarray
    chi: np.ndarray

    def linearization_bound(self, step: int, m: int, dist_sq: float) -> float:
        n = step + 1
        return 2.0 / np.sqrt(m) * (self.rho2 * self.Lam[n] ** 2 + self.rho1 * self.chi[n]) * dist_sq

    def log_linearization_bound(self, step: int, m: int, dist_sq: float) -> float:
        return 3.0 * self.linearization_bound(step, m, dist_sq)


def smoothness_constants(activation: Activation, alpha: float, radii: ProjectionRadii,
                         m: int, T: int, d: int = 1) -> SmoothnessConstants:
    if T < 1:
        raise ValueError("T must be >= 1")
    alpha_m = alpha + radii.rho_w / np.sqrt(m)
    x = alpha_m * activation.rho1
    ts = range(T + 1)
    p = np.array([p_poly(t, x) for t in ts])
    q = np.array([q_poly(t, x) for t in ts])
    L = (activation.rho0 ** 2 + 1) * activation.rho1 ** 2 * p ** 2
    beta = d * p * q
    Lam = np.sqrt(2) * (activation.rho0 + 1 + alpha_m * L)
    chi = np.sqrt(2) * (L + alpha_m * beta)
    return SmoothnessConstants(activation.rho0, activation.rho1, activation.rho2,
                               float(alpha_m), p, q, L, beta, Lam, chi)
