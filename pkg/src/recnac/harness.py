"""Experiment orchestration: configs, seeded multi-trial runs, confidence bands, CSV output."""

from __future__ import annotations

import csv
import json
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from .indrnn import ProjectionRadii, init_symmetric
from .oracle import OracleConfig
from .pomdp import (Pomdp, UniformPolicy, epsilon_greedy_policy, make_feature_map,
                    random_pomdp)
from .rec_npg import NacConfig, oracle_value, run_rec_nac
from .policy import SoftmaxRnnPolicy
from .rec_td import RecTdConfig, mean_path_rec_td, run_rec_td

KINDS = ("rec-td", "rec-nac", "mean-path", "verify")
TD_METRICS = ("mstd", "dev_u", "dev_w")
NAC_METRICS = ("value_est", "critic_mstd", "cfa_loss", "omega_norm", "phi_dev")
CSV_HEADER = ["iteration", "mean", "lo", "hi"]


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


@dataclass
class PomdpSpec:
    n_states: int = 8
    n_obs: int = 8
    n_actions: int = 4
    seed: int = 1
    path: str | None = None

    def build(self) -> Pomdp:
        if self.path:
            return Pomdp.load(self.path)
        return random_pomdp(self.n_states, self.n_obs, self.n_actions, self.seed)


@dataclass
class FeatureSpec:
    mode: str = "concat-one-hot"
    d: int = 8
    seed: int = 1


@dataclass
class PolicySpec:
    kind: str = "epsilon-greedy"  # or "uniform"
    p_exp: float = 0.8

    def build(self, n_actions: int):
        if self.kind == "uniform":
            return UniformPolicy(n_actions)
        return epsilon_greedy_policy(n_actions, self.p_exp)


@dataclass
class TdSpec:
    eta: float = 0.05
    gamma: float = 0.9
    K: int = 2000
    rho_w: float = 2.0
    rho_u: float = 20.0
    alpha: float = 0.5
    activation: str = "tanh"
    n_eval: int = 1


@dataclass
class NacSpec:
    n_outer: int = 30
    k_td: int = 200
    k_sgd: int = 200
    gamma: float = 0.5
    eta_td: float = 0.05
    eta_npg: float | None = None
    eta_sgd: float | None = None
    actor_rho_w: float = 2.0
    actor_rho_u: float = 2.0
    critic_rho_w: float = 2.0
    critic_rho_u: float = 2.0
    m_critic: int = 32
    alpha_actor: float = 0.5
    alpha_critic: float = 0.5
    batch: int = 1
    value_eval: str = "mc"
    n_value_rollouts: int = 200
    oracle_final: bool = False

    def config(self, m_actor: int, T: int, seed: int) -> NacConfig:
        return NacConfig(
            n_outer=self.n_outer, k_td=self.k_td, k_sgd=self.k_sgd, T=T, gamma=self.gamma,
            eta_td=self.eta_td, eta_npg=self.eta_npg, eta_sgd=self.eta_sgd,
            actor_radii=ProjectionRadii(self.actor_rho_w, self.actor_rho_u),
            critic_radii=ProjectionRadii(self.critic_rho_w, self.critic_rho_u),
            m_actor=m_actor, m_critic=self.m_critic, alpha_actor=self.alpha_actor,
            alpha_critic=self.alpha_critic, seed=seed, batch=self.batch,
            value_eval=self.value_eval, n_value_rollouts=self.n_value_rollouts)


@dataclass
class VerifySpec:
    tolerances: dict = field(default_factory=dict)
    fault: str | None = None  # "gradient" perturbs one forward-mode gradient entry
    seed: int = 0


@dataclass
class ExperimentConfig:
    kind: str = "rec-td"
    pomdp: PomdpSpec = field(default_factory=PomdpSpec)
    features: FeatureSpec = field(default_factory=FeatureSpec)
    policy: PolicySpec = field(default_factory=PolicySpec)
    rec_td: TdSpec = field(default_factory=TdSpec)
    rec_nac: NacSpec = field(default_factory=NacSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)
    trials: int = 5
    base_seed: int = 0
    widths: list = field(default_factory=lambda: [32, 64, 128, 256])
    seq_lengths: list = field(default_factory=lambda: [8])
    ci: str = "normal"  # or "bootstrap"
    ci_level: float = 0.90
    workers: int = 1
    output: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be an integer >= 1")
        if not self.widths or any(int(m) != m or m < 2 or m % 2 for m in self.widths):
            raise ConfigError(f"widths must be even integers >= 2, got {self.widths}")
        if not self.seq_lengths or any(int(T) != T or T < 1 for T in self.seq_lengths):
            raise ConfigError(f"seq_lengths must be integers >= 1, got {self.seq_lengths}")
        if self.ci not in ("normal", "bootstrap"):
            raise ConfigError("ci must be 'normal' or 'bootstrap'")
        if not 0 < self.ci_level < 1:
            raise ConfigError("ci_level must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.policy.kind not in ("epsilon-greedy", "uniform"):
            raise ConfigError(f"unknown policy kind {self.policy.kind!r}")
        if self.policy.kind == "epsilon-greedy" and not 0 < self.policy.p_exp < 1:
            raise ConfigError("p_exp must lie in (0, 1)")
        if self.kind == "mean-path" and self.policy.kind == "epsilon-greedy":
            raise ConfigError("mean-path enumeration needs a reward-free policy; use policy.kind=uniform")
        if self.features.mode not in ("concat-one-hot", "gaussian-joint"):
            raise ConfigError(f"unknown feature mode {self.features.mode!r}")
        td = self.rec_td
        if td.eta < 0 or not 0 < td.gamma < 1 or td.K < 1 or td.n_eval < 1:
            raise ConfigError("rec_td needs eta >= 0, gamma in (0, 1), K >= 1, n_eval >= 1")
        if td.rho_w <= 0 or td.rho_u <= 0:
            raise ConfigError("projection radii must be positive")
        try:
            self.rec_nac.config(int(self.widths[0]), int(self.seq_lengths[0]), 0)
        except ValueError as exc:
            raise ConfigError(f"rec_nac: {exc}") from exc
        return self

    def trial_seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.trials)]


def _from_dict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            kwargs[name] = _from_dict(type(default), value or {}, f"{where}.{name}".strip("."))
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a mapping; a run's metadata file is accepted as well."""
    if isinstance(data, dict) and "config" in data and "trial_seeds" in data:
        data = data["config"]
    return _from_dict(ExperimentConfig, data or {}, "").validate()


def read_config_mapping(path: str | Path) -> dict:
    """Raw mapping from a YAML/JSON config or a run's metadata file, unvalidated."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    if "config" in data and "trial_seeds" in data:
        data = data["config"]
    return data


def load_config(path: str | Path) -> ExperimentConfig:
    return config_from_dict(read_config_mapping(path))


def config_to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


# confidence bands

def aggregate_ci(curves, level: float = 0.90, method: str = "normal", n_boot: int = 2000,
                 seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-index mean and band over trials.

    ``normal`` uses mean +- z * sd / sqrt(n) with sample sd; ``bootstrap`` the
    percentile bootstrap of the mean. A single curve gives a zero-width band.
    """
    arr = np.atleast_2d(np.asarray(curves, dtype=float))
    n = arr.shape[0]
    mean = arr.mean(axis=0)
    if n < 2:
        warnings.warn("one curve only: confidence band collapses to the curve", stacklevel=2)
        return mean, mean.copy(), mean.copy()
    if method == "normal":
        z = stats.norm.ppf(0.5 + level / 2)
        half = z * arr.std(axis=0, ddof=1) / np.sqrt(n)
        return mean, mean - half, mean + half
    if method == "bootstrap":
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, size=(n_boot, n))
        boots = arr[idx].mean(axis=1)
        lo, hi = np.quantile(boots, [0.5 - level / 2, 0.5 + level / 2], axis=0)
        return mean, np.minimum(lo, mean), np.maximum(hi, mean)
    raise ValueError(f"unknown CI method {method!r}")


@dataclass
class CurveBundle:
    """Per-(metric, m, T) trial curves and their aggregated bands."""

    curves: dict = field(default_factory=dict)  # (metric, m, T) -> (trials, K)
    bands: dict = field(default_factory=dict)  # (metric, m, T) -> (mean, lo, hi)
    extras: dict = field(default_factory=dict)

    def add(self, metric: str, m: int, T: int, curves, level: float, method: str) -> None:
        arr = np.asarray(curves, dtype=float)
        self.curves[(metric, m, T)] = arr
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.bands[(metric, m, T)] = aggregate_ci(arr, level, method)

    def final_mean(self, metric: str, m: int, T: int) -> float:
        return float(self.bands[(metric, m, T)][0][-1])

    def write(self, out_dir: Path) -> list[str]:
        written = []
        for (metric, m, T), (mean, lo, hi) in sorted(self.bands.items()):
            name = f"{metric}_m{m}_T{T}.csv"
            write_band_csv(out_dir / name, mean, lo, hi)
            written.append(name)
        return written


def write_band_csv(path: Path, mean, lo, hi) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for k in range(len(mean)):
                w.writerow([k, repr(float(mean[k])), repr(float(lo[k])), repr(float(hi[k]))])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


# trials

def _net_seed(trial_seed: int, m: int) -> int:
    """Initialization seed shared by every run with the same trial and width."""
    return int(np.random.SeedSequence([trial_seed, m]).generate_state(1)[0])


def _td_trial(args) -> dict:
    config, m, T, trial_seed = args
    pomdp = config.pomdp.build()
    fm = make_feature_map(pomdp, config.features.mode, config.features.d, config.features.seed)
    policy = config.policy.build(pomdp.n_actions)
    td = config.rec_td
    net = init_symmetric(m, fm.d, td.alpha, _net_seed(trial_seed, m), td.activation)
    run_cfg = RecTdConfig(eta=td.eta, gamma=td.gamma, T=T, K=td.K,
                          radii=ProjectionRadii(td.rho_w, td.rho_u), seed=trial_seed,
                          n_eval=td.n_eval)
    if config.kind == "mean-path":
        run = mean_path_rec_td(pomdp, policy, fm, net, run_cfg)
    else:
        run = run_rec_td(pomdp, policy, fm, net, run_cfg)
    return {"mstd": run.mstd_curve, "dev_u": run.dev_u_curve, "dev_w": run.dev_w_curve}


def _nac_trial(args) -> dict:
    config, m, T, trial_seed = args
    pomdp = config.pomdp.build()
    fm = make_feature_map(pomdp, config.features.mode, config.features.d, config.features.seed)
    trace = run_rec_nac(pomdp, fm, config.rec_nac.config(m, T, trial_seed))
    out = {k: trace.column(k) for k in NAC_METRICS}
    if config.rec_nac.oracle_final:
        value, tail = oracle_value(pomdp, SoftmaxRnnPolicy(trace.actor, fm), config.rec_nac.gamma)
        out["final_value"] = value
        out["tail_tol"] = tail
    return out


def _map(fn, jobs, workers: int):
    if workers == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _versions() -> dict:
    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__, "recnac": __version__}


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> CurveBundle:
    """Run every (width, T, trial) combination, aggregate, and write CSVs plus metadata."""
    config.validate()
    if config.kind == "verify":
        raise ConfigError("use verify() for kind=verify")
    fn, metrics = (_nac_trial, NAC_METRICS) if config.kind == "rec-nac" else (_td_trial, TD_METRICS)
    seeds = config.trial_seeds()
    jobs = [(config, int(m), int(T), s) for m in config.widths for T in config.seq_lengths
            for s in seeds]
    results = _map(fn, jobs, config.workers)
    bundle = CurveBundle()
    by_key: dict = {}
    for (_, m, T, _), res in zip(jobs, results):
        by_key.setdefault((m, T), []).append(res)
    for (m, T), runs in by_key.items():
        for metric in metrics:
            bundle.add(metric, m, T, [r[metric] for r in runs], config.ci_level, config.ci)
        if config.kind == "rec-nac" and config.rec_nac.oracle_final:
            bundle.extras[(m, T)] = [(r["final_value"], r["tail_tol"]) for r in runs]
    if out_dir is not None or config.output:
        write_outputs(config, bundle, Path(out_dir or config.output))
    return bundle


def uniform_value(config: ExperimentConfig) -> tuple[float, float]:
    """Oracle value of the uniform policy on the configured instance, with its tail bound."""
    pomdp = config.pomdp.build()
    return oracle_value(pomdp, UniformPolicy(pomdp.n_actions), config.rec_nac.gamma)


def write_outputs(config: ExperimentConfig, bundle: CurveBundle, out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    files = bundle.write(out_dir)
    if bundle.extras:
        with open(out_dir / "final_values.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "T", "trial", "value", "tail_tol"])
            for (m, T), rows in sorted(bundle.extras.items()):
                for i, (v, tol) in enumerate(rows):
                    w.writerow([m, T, i, repr(float(v)), repr(float(tol))])
        files.append("final_values.csv")
    meta = {
        "config": config_to_dict(config),
        "trial_seeds": config.trial_seeds(),
        "net_seeds": {str(m): [_net_seed(s, int(m)) for s in config.trial_seeds()]
                      for m in config.widths},
        "files": files,
        "versions": _versions(),
    }
    with open(out_dir / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


# verification suite

@dataclass
class CheckResult:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28s} residual={self.residual:.3e} tol={self.tolerance:.1e}"


@dataclass
class VerifyReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        return "\n".join(c.line() for c in self.checks)


DEFAULT_TOLERANCES = {
    "gradient_fd": 1e-5,
    "ntrf": 1e-10,
    "null_output": 1e-13,
    "projection_idempotent": 1e-15,
    "projection_membership": 1e-12,
    "projection_nonexpansive": 1e-12,
    "bellman": None,  # 2 * tail_tol
    "belief_independence": 1e-12,
    "performance_difference": None,  # 2 * tail_tol / (1 - gamma)
    "kl_bound": 1.0,  # max KL / bound
    "semi_gradient_fd": 1e-5,
    "ci_arithmetic": 1e-12,
}


def verify(config: ExperimentConfig | None = None) -> VerifyReport:
    """Desk-scale invariant suite over all modules."""
    from . import checks

    opts = (config or ExperimentConfig(kind="verify")).verify
    unknown = set(opts.tolerances) - set(DEFAULT_TOLERANCES)
    if unknown:
        raise ConfigError(f"unknown tolerance names {sorted(unknown)}")
    if opts.fault not in (None, "gradient"):
        raise ConfigError(f"unknown fault {opts.fault!r}")
    rng = np.random.default_rng(opts.seed)
    report = VerifyReport()
    gamma = 0.5
    oracle_cfg = OracleConfig.from_tolerance(1e-6, gamma)
    implied = {"bellman": 2 * oracle_cfg.tail_tol,
               "performance_difference": 2 * oracle_cfg.tail_tol / (1 - gamma)}

    def tol(name):
        if name in opts.tolerances:
            return float(opts.tolerances[name])
        return implied.get(name, DEFAULT_TOLERANCES[name])

    residuals = {
        "gradient_fd": checks.gradient_fd_error(rng, n_configs=20, fault=opts.fault == "gradient"),
        "ntrf": checks.ntrf_error(rng, n_configs=10),
        "null_output": checks.null_output_error(rng, n_configs=20),
    }
    residuals.update(checks.projection_errors(rng, n_pairs=200))
    residuals.update(checks.oracle_errors(oracle_cfg))
    residuals["kl_bound"] = checks.kl_bound_excess(rng, widths=(64,), n_params=20)
    residuals["semi_gradient_fd"] = checks.semi_gradient_fd_error(rng, n_configs=5)
    residuals["ci_arithmetic"] = checks.ci_arithmetic_error()
    for name, value in residuals.items():
        report.checks.append(CheckResult(name, float(value), tol(name)))
    return report
