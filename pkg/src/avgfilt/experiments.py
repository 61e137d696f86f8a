"""Experiment drivers: scalar filters, diagonal bias/variance decay, Kalman
comparison, batch minimax and the predicted-rates table.

Each ``run_*`` function takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentResult` holding plot-ready rows plus slope fits.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from . import oracle, rates
from .errors import ConfigError
from .filters import geometric_grid, run_trials, threedvar_gain
from .model import (
    NoiseStream,
    ProblemSpec,
    SobolevICParams,
    build_diffusion_spectrum,
    build_sobolev_ic,
    scalar_problem,
)

EXPERIMENTS = ("scalar", "diag-bias", "diag-var", "kalman-compare", "batch-minimax", "rates-table")
MC_EXPERIMENTS = ("scalar", "diag-var")
PRESETS = ("full", "desk")

# decay of the cosine spectrum of (I - d^2/dx^2)^{-1}: sigma_k ~ k^-4, a_k ~ k^-2
DIFFUSION_EPSILON = 1.5
DIFFUSION_P = 2.0

SEED_ENV = "AVGFILT_SEED"


@dataclass
class ExperimentConfig:
    experiment: str
    N: int = 2**12
    n_steps: int = 10**4
    trials: int = 100
    gamma: float = 0.1
    alpha: float = 1.0
    t: tuple = (0.0, 0.5, 1.0, 2.0)
    beta: float = 1.0
    delta: float = 0.01
    seed: int | None = None
    record_per_decade: int = 30
    output_path: str | None = None
    format: str = "csv"
    threads: int = 1
    resamples: int = 10_000
    level: float = 0.95
    # scalar problem
    a: float = 1.0
    sigma: float = 1.0
    u_truth: float = 0.5
    u0: float = 0.0
    C0: float = 1.0
    # batch minimax sample counts
    n_min: int = 10**4
    n_max: int = 10**8
    theta: float = 1.0

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.experiment in MC_EXPERIMENTS and self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.n_steps < 10:
            raise ConfigError("n_steps must be >= 10")
        if any(not (t >= 0) for t in self.t) or not self.t:
            raise ConfigError("t values must be nonnegative")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not self.gamma >= 0:
            raise ConfigError("gamma must be nonnegative")
        if self.experiment in ("scalar", "kalman-compare") and not self.gamma > 0:
            raise ConfigError("the Kalman filter needs gamma > 0")
        if self.beta < 0 or not self.delta > 0:
            raise ConfigError("need beta >= 0 and delta > 0")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.threads < 1 or self.record_per_decade < 1 or self.resamples < 1:
            raise ConfigError("threads, record_per_decade and resamples must be >= 1")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if not 1 <= self.n_min < self.n_max:
            raise ConfigError("need 1 <= n_min < n_max")
        if not 0 < self.theta <= 1:
            raise ConfigError("theta must lie in (0, 1]")
        if self.C0 is not None and not self.C0 > 0:
            raise ConfigError("C0 must be positive")
        return self

    @property
    def resolved_seed(self) -> int:
        if self.seed is not None:
            return int(self.seed)
        env = os.environ.get(SEED_ENV)
        if env:
            try:
                value = int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
            if not 0 <= value < 2**64:
                raise ConfigError(f"{SEED_ENV} must be a 64-bit unsigned integer")
            return value
        return 0


_EXPERIMENT_DEFAULTS = {
    "scalar": dict(t=(0.0,)),
    "kalman-compare": dict(t=(0.0,)),
}
_DESK = {
    "diag-bias": dict(N=2**10, n_steps=10**3),
    "diag-var": dict(N=2**10, n_steps=10**3, trials=50),
}
_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def make_config(experiment: str, preset: str = "full", file_values: dict | None = None, **overrides) -> ExperimentConfig:
    """Defaults, then preset, then config-file values, then explicit overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    values = dict(_EXPERIMENT_DEFAULTS.get(experiment, {}))
    if preset == "desk":
        values.update(_DESK.get(experiment, {}))
    for source in (file_values or {}, overrides):
        for key, val in source.items():
            if key not in _FIELDS or key == "experiment":
                raise ConfigError(f"unknown config field {key!r}")
            if val is not None:
                values[key] = val
    if "t" in values:
        t = values["t"]
        values["t"] = tuple(float(x) for x in (t if isinstance(t, (list, tuple)) else [t]))
    try:
        cfg = ExperimentConfig(experiment=experiment, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


@dataclass
class ResultRow:
    experiment: str
    t: float
    n: int
    series: str
    value: float
    ci_lo: float | None = None
    ci_hi: float | None = None
    predicted_exponent: float | None = None

    def sort_key(self):
        return (self.experiment, self.t, self.series, self.n)


@dataclass
class ExperimentResult:
    experiment: str
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add_series(self, t, series, n, values, lo=None, hi=None, predicted=None):
        for i, nn in enumerate(n):
            self.rows.append(ResultRow(
                self.experiment, float(t), int(nn), series, float(values[i]),
                None if lo is None else float(lo[i]),
                None if hi is None else float(hi[i]),
                None if predicted is None else float(predicted),
            ))

    def series(self, name, t=None):
        """(n, value) arrays of one series, optionally restricted to one t."""
        picked = [r for r in self.rows if r.series == name and (t is None or r.t == t)]
        picked.sort(key=lambda r: r.n)
        return np.array([r.n for r in picked]), np.array([r.value for r in picked])

    def finalize(self):
        self.rows.sort(key=ResultRow.sort_key)
        return self


def _streams(seed, first_trial, trials, dim):
    return [NoiseStream(seed, first_trial + i, dim) for i in range(trials)]


def _coverage(lo, hi, target):
    return float(np.mean((lo <= target) & (target <= hi)))


def _diag_params(cfg, t):
    return rates.DiagonalRateParams(DIFFUSION_EPSILON, DIFFUSION_P, cfg.beta, t)


def run_scalar_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """3DVAR and Kalman, each with and without averaging, on the scalar problem."""
    res = ExperimentResult("scalar")
    t = cfg.t[0]
    seed = cfg.resolved_seed
    spec = scalar_problem(cfg.a, cfg.sigma, cfg.u_truth, cfg.u0, cfg.gamma, cfg.alpha, t)
    # Kalman prior C0 = gamma^2 Sigma / alpha_k
    kspec = spec.replace(alpha=cfg.gamma**2 * cfg.sigma / cfg.C0)
    grid = geometric_grid(cfg.n_steps, cfg.record_per_decade)

    var3 = run_trials(spec, _streams(seed, 0, cfg.trials, 1), cfg.n_steps, "3dvar", grid, threads=cfg.threads)[t]
    kal = run_trials(kspec, _streams(seed, cfg.trials, cfg.trials, 1), cfg.n_steps, "kalman", grid, threads=cfg.threads)[t]

    K = float(threedvar_gain(spec).K[0])
    floor = cfg.gamma**2 * K**2
    curve = oracle.kalman_closed_curve(kspec, cfg.n_steps)
    oracles = {
        "3dvar": oracle.plain_bias_sq_closed(spec, grid) + oracle.plain_var_closed(spec, grid),
        "3dvar_avg": oracle.bias_sq_closed(spec, grid) + oracle.var_closed(spec, grid),
        "kalman": (curve["bias_sq"] + curve["var"])[grid - 1],
        "kalman_avg": (curve["avg_bias_sq"] + curve["avg_var"])[grid - 1],
    }
    predicted = {"3dvar": 0.0, "3dvar_avg": -1.0, "kalman": -1.0, "kalman_avg": -1.0}
    mc = {"3dvar": var3.plain, "3dvar_avg": var3.averaged, "kalman": kal.plain, "kalman_avg": kal.averaged}
    for name, samples in mc.items():
        if cfg.trials >= 2:
            point, lo, hi = rates.bootstrap_curve(samples, cfg.resamples, cfg.level, seed)
        else:
            point, lo, hi = samples[0], None, None
        res.add_series(t, name, grid, point, lo, hi, predicted[name])
        res.add_series(t, name + "_oracle", grid, oracles[name], predicted=predicted[name])
        if lo is not None:
            res.notes.append(f"{name}: CI covers oracle at {100 * _coverage(lo, hi, oracles[name]):.0f}% of recorded n")
    res.add_series(t, "kalman_oracle_bias_sq", grid, curve["bias_sq"][grid - 1])
    res.add_series(t, "kalman_oracle_var", grid, curve["var"][grid - 1])
    res.add_series(t, "kalman_avg_oracle_bias_sq", grid, curve["avg_bias_sq"][grid - 1])
    res.add_series(t, "kalman_avg_oracle_var", grid, curve["avg_var"][grid - 1])
    res.add_series(t, "floor", grid, np.full(grid.size, floor), predicted=0.0)
    if cfg.n_steps >= 100:
        res.fits["3dvar_avg"] = rates.fit_slope(grid, var3.averaged.mean(axis=0), predicted=-1.0)
        res.fits["3dvar_avg_oracle"] = rates.fit_slope(grid, oracles["3dvar_avg"], predicted=-1.0)
    return res.finalize()


def _diffusion_problem(cfg, gamma, with_ic):
    eig = build_diffusion_spectrum(cfg.N)
    zero = np.zeros(cfg.N)
    u0 = build_sobolev_ic(SobolevICParams(cfg.beta, cfg.delta, cfg.N)) if with_ic else zero
    return ProblemSpec(eig, zero, u0, gamma, cfg.alpha, 0.0)


def run_diag_bias(cfg: ExperimentConfig) -> ExperimentResult:
    """Squared bias of averaged 3DVAR: zero-noise simulation next to the closed form."""
    res = ExperimentResult("diag-bias")
    spec = _diffusion_problem(cfg, 0.0, with_ic=True)
    grid = geometric_grid(cfg.n_steps, cfg.record_per_decade)
    sim = run_trials(spec, [NoiseStream(cfg.resolved_seed, 0, cfg.N)], cfg.n_steps, "3dvar", grid, ts=cfg.t)
    for t in cfg.t:
        pred = -rates.effective_bias_rate(_diag_params(cfg, t))
        closed = oracle.bias_sq_closed(spec.replace(t=t), grid)
        res.add_series(t, "bias_sim", grid, sim[t].averaged[0], predicted=pred)
        res.add_series(t, "bias_closed", grid, closed, predicted=pred)
        if cfg.n_steps >= 100:
            res.fits[("bias_closed", t)] = rates.fit_slope(grid, closed, predicted=pred)
            res.fits[("bias_sim", t)] = rates.fit_slope(grid, sim[t].averaged[0], predicted=pred)
    return res.finalize()


def run_diag_var(cfg: ExperimentConfig) -> ExperimentResult:
    """Variance of averaged 3DVAR with u0 = u_truth = 0: Monte Carlo trial-mean next to the closed form."""
    res = ExperimentResult("diag-var")
    spec = _diffusion_problem(cfg, cfg.gamma, with_ic=False)
    seed = cfg.resolved_seed
    grid = geometric_grid(cfg.n_steps, cfg.record_per_decade)
    sim = run_trials(spec, _streams(seed, 0, cfg.trials, cfg.N), cfg.n_steps, "3dvar", grid,
                     ts=cfg.t, threads=cfg.threads)
    for t in cfg.t:
        pred = -rates.effective_var_rate(_diag_params(cfg, t))
        closed = oracle.var_closed(spec.replace(t=t), grid)
        samples = sim[t].averaged
        if cfg.trials >= 2:
            point, lo, hi = rates.bootstrap_curve(samples, cfg.resamples, cfg.level, seed)
            res.notes.append(f"t={t:g}: CI covers oracle at {100 * _coverage(lo, hi, closed):.0f}% of recorded n")
        else:
            point, lo, hi = samples[0], None, None
        res.add_series(t, "var_mc", grid, point, lo, hi, pred)
        res.add_series(t, "var_closed", grid, closed, predicted=pred)
        if cfg.n_steps >= 100 and cfg.gamma > 0:
            res.fits[("var_closed", t)] = rates.fit_slope(grid, closed, predicted=pred)
            res.fits[("var_mc", t)] = rates.fit_slope(grid, point, predicted=pred)
    return res.finalize()


def run_kalman_compare(cfg: ExperimentConfig) -> ExperimentResult:
    """Closed-form Kalman bias and variance with and without averaging, n = 1..n_steps."""
    res = ExperimentResult("kalman-compare")
    t = cfg.t[0]
    spec = scalar_problem(cfg.a, cfg.sigma, cfg.u_truth, cfg.u0, cfg.gamma, cfg.alpha, t)
    curve = oracle.kalman_closed_curve(spec, cfg.n_steps)
    n = curve["n"]
    bias, avg_bias = np.sqrt(curve["bias_sq"]), np.sqrt(curve["avg_bias_sq"])
    var, avg_var = curve["var"], curve["avg_var"]
    bias_ok = avg_bias >= bias - 1e-12 * np.maximum(1.0, bias)
    var_ok = avg_var >= var - 1e-12 * np.maximum(1.0, var)
    res.add_series(t, "bias", n, bias)
    res.add_series(t, "avg_bias", n, avg_bias)
    res.add_series(t, "var", n, var)
    res.add_series(t, "avg_var", n, avg_var)
    res.add_series(t, "bias_ineq", n, bias_ok.astype(float))
    res.add_series(t, "var_ineq", n, var_ok.astype(float))
    res.notes.append(f"bias inequality holds at {int(bias_ok.sum())}/{n.size} n")
    res.notes.append(f"variance inequality holds at {int(var_ok.sum())}/{n.size} n")
    return res.finalize()


def run_batch_minimax(cfg: ExperimentConfig) -> ExperimentResult:
    """Risk of the spectral-cutoff batch estimator at its optimal cutoff, against n."""
    res = ExperimentResult("batch-minimax")
    eig = build_diffusion_spectrum(cfg.N)
    u_truth = build_sobolev_ic(SobolevICParams(cfg.beta, cfg.delta, cfg.N))
    spec = ProblemSpec(eig, u_truth, np.zeros(cfg.N), cfg.gamma, cfg.alpha, 0.0)
    grid = geometric_grid(cfg.n_max, cfg.record_per_decade, cfg.n_min)
    for t in cfg.t:
        expo, log_flag = rates.batch_rate_exponent(_diag_params(cfg, t))
        st = spec.replace(t=t)
        best = [oracle.batch_optimal_risk(st, int(n)) for n in grid]
        risk = np.array([b.mse for b, _ in best])
        cut = np.array([c for _, c in best])
        res.add_series(t, "risk_opt", grid, risk, predicted=-expo)
        res.add_series(t, "alpha_opt", grid, cut)
        if log_flag:
            res.notes.append(f"t={t:g}: boundary case 1+2p = t(1+2eps), rate n^-1 log n")
        if np.all(risk > 0):
            res.fits[("risk_opt", t)] = rates.fit_slope(grid, risk, window=(cfg.n_min, cfg.n_max), predicted=-expo)
        else:
            res.notes.append(f"t={t:g}: optimal risk reaches 0, no slope fitted")
    return res.finalize()


def run_rates_table(cfg: ExperimentConfig) -> ExperimentResult:
    """Predicted exponents for the diffusion spectrum at each t (n column = n_steps)."""
    res = ExperimentResult("rates-table")
    n = cfg.n_steps
    for t in cfg.t:
        p = _diag_params(cfg, t)
        expo, log_flag = rates.batch_rate_exponent(p)
        table = {
            "tau_bar_b": rates.tau_bar_b(p),
            "tau_bar_v": rates.tau_bar_v(p),
            "bias_sq_rate": rates.effective_bias_rate(p),
            "var_rate": rates.effective_var_rate(p),
            "batch_exponent": expo,
            "batch_log_flag": float(log_flag),
            "kalman_minimax_ref": rates.kalman_minimax_exponent(p),
            "threedvar_minimax_ref": rates.threedvar_minimax_exponent(p),
        }
        try:
            table["averaged_minimax_exponent"] = rates.averaged_minimax_exponent(p, cfg.theta)
            if rates.minimax_regime(p) == "tuned":
                table["minimax_alpha"] = rates.minimax_alpha(p, cfg.theta, n)
        except rates.RegimeNotCovered as exc:
            res.notes.append(f"t={t:g}: {exc}")
        for name, value in table.items():
            res.rows.append(ResultRow(res.experiment, float(t), n, name, float(value)))
    return res.finalize()


RUNNERS = {
    "scalar": run_scalar_experiment,
    "diag-bias": run_diag_bias,
    "diag-var": run_diag_var,
    "kalman-compare": run_kalman_compare,
    "batch-minimax": run_batch_minimax,
    "rates-table": run_rates_table,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg.validate())
