"""Twin-experiment driver: offline calibration, cycled assimilation,
inflation sweeps and metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from hoope import _kernels
from hoope.batchopt import ClimatologyPrior, McmcChain, ParameterPrior, fit_gaussian, make_phi, mh_sample
from hoope.climatology import pso_augment, rtc_transform
from hoope.config import ExperimentConfig
from hoope.enkf import AugmentedEnsemble, FilterDivergence, analyze
from hoope.models import ModelConstants
from hoope.surrogate import GPModel, fit
from hoope.synth import (
    OBS_INTERVAL_MTU, ClimIndex, NatureRun, ObservationBatch, UndefinedStatistic,
    climatological_index, estimate_observation_index_variance, generate_nature_run,
    generate_observations, observation_matrix, observations_from_csv,
)

log = logging.getLogger(__name__)

METRIC_FIELDS = ("rmse_state", "r_state", "rmse_param", "r_param")
SWEEP_COLUMNS = ("rho_x", "rho_theta") + METRIC_FIELDS + ("diverged",)


class StageError(RuntimeError):
    """An offline pipeline stage failed; the message names the stage."""


@dataclass
class MetricsReport:
    rmse_state: float
    r_state: float
    rmse_param: float
    r_param: float
    diverged: bool = False
    cycles_run: int = 0

    @classmethod
    def diverged_at(cls, cycles_run: int) -> "MetricsReport":
        nan = float("nan")
        return cls(nan, nan, nan, nan, True, cycles_run)


def _rmse_r(estimate, truth):
    e = np.asarray(estimate, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    rmse = float(np.sqrt(np.mean((e - t) ** 2)))
    de, dt = e - e.mean(), t - t.mean()
    denom = math.sqrt(float(np.dot(de, de)) * float(np.dot(dt, dt)))
    r = float(np.dot(de, dt) / denom) if denom > 0 else float("nan")
    if r == r:
        r = min(1.0, max(-1.0, r))
    return rmse, r


def compute_metrics(x_mean, x_true, f_mean, f_true, times, spinup_mtu: float) -> MetricsReport:
    """RMSE and Pearson R over all (time, grid) pairs after the spin-up."""
    times = np.asarray(times)
    window = times > spinup_mtu
    if not np.any(window):
        raise ValueError("no analysis times after the spin-up")
    rmse_x, r_x = _rmse_r(np.asarray(x_mean)[window], np.asarray(x_true)[window])
    rmse_f, r_f = _rmse_r(np.asarray(f_mean)[window], np.asarray(f_true)[window])
    return MetricsReport(rmse_x, r_x, rmse_f, r_f, False, len(times))


# ---------------------------------------------------------------- inputs

def nature_and_observations(config: ExperimentConfig, c: ModelConstants | None = None):
    c = c or ModelConstants()
    if config.nature_path:
        nature = NatureRun.from_csv(config.nature_path)
    else:
        nature = generate_nature_run(c, config.run_length_mtu, config.nature_spinup_mtu,
                                     config.seed_nature)
    if config.obs_path:
        obs = observations_from_csv(config.obs_path)
    else:
        obs = generate_observations(nature, config.obs_grids, config.obs_noise_std, config.seed_obs)
    return nature, obs


# ---------------------------------------------------------------- offline

@dataclass
class OfflineResult:
    prior: ClimatologyPrior
    chain: McmcChain
    surrogate: GPModel
    gamma_obs: ClimIndex
    r_o: np.ndarray
    param_grid: np.ndarray
    indices: np.ndarray


def simulate_indices(param_grid, config: ExperimentConfig, c: ModelConstants | None = None) -> np.ndarray:
    """Climatological index of a long single-scale run per uniform forcing."""
    c = c or ModelConstants()
    grid = np.asarray(param_grid, dtype=float)
    rng = np.random.default_rng([config.seed_mcmc, 1])
    n_x = c.n_x
    x0 = grid[None, :] + rng.standard_normal((n_x, grid.size))
    f = np.tile(grid, (n_x, 1))
    n_rec = int(round(config.index_window_mtu / OBS_INTERVAL_MTU))
    per = c.steps(OBS_INTERVAL_MTU)
    skip = c.steps(config.offline_run_mtu) - n_rec * per
    rec = _kernels.single_scale_record(x0, f, skip, n_rec, per, c.dt)
    out = np.empty((grid.size, 3))
    grids = list(config.obs_grids)
    for j in range(grid.size):
        try:
            out[j] = climatological_index(rec[:, grids, j]).values
        except UndefinedStatistic:
            # steady state: perfectly persistent
            out[j] = 1.0
    return out


def run_offline(config: ExperimentConfig, obs: Sequence[ObservationBatch] | None = None,
                c: ModelConstants | None = None) -> OfflineResult:
    c = c or ModelConstants()
    try:
        if obs is None:
            _, obs = nature_and_observations(config, c)
        series = observation_matrix(obs)
        gamma_obs = climatological_index(series)
        r_o = estimate_observation_index_variance(series, config.obs_bootstrap,
                                                  config.obs_subset_mtu, config.seed_mcmc)
    except Exception as exc:
        raise StageError(f"observed index: {exc}") from exc
    log.info("observed index %s, R_o %s", gamma_obs.values, r_o)

    grid = np.linspace(config.offline_lower, config.offline_upper, config.offline_members)
    try:
        indices = simulate_indices(grid, config, c)
    except Exception as exc:
        raise StageError(f"ensemble simulation: {exc}") from exc
    try:
        model = fit(grid, indices, "index")
    except Exception as exc:
        raise StageError(f"surrogate fit: {exc}") from exc
    try:
        prior_range = ParameterPrior(config.offline_lower, config.offline_upper)
        chain = mh_sample(make_phi(model, gamma_obs, r_o), prior_range,
                          config.mcmc_proposal_std or None, config.mcmc_total,
                          config.mcmc_burnin, config.seed_mcmc)
    except Exception as exc:
        raise StageError(f"mcmc: {exc}") from exc
    try:
        prior = fit_gaussian(chain, c.n_x)
    except Exception as exc:
        raise StageError(f"gaussian fit: {exc}") from exc
    log.info("climatology prior mean %.4f var %.4f (acceptance %.2f)",
             prior.theta_c[0], prior.c_diag[0], chain.acceptance_rate)
    return OfflineResult(prior, chain, model, gamma_obs, r_o, grid, indices)


def write_offline(result: OfflineResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.prior.save(out / "prior.txt")
    result.chain.to_csv(out / "chain.csv")
    result.surrogate.save(out / "surrogate.txt")
    np.savetxt(out / "offline_indices.csv", np.column_stack([result.param_grid, result.indices]),
               delimiter=",", header="theta,lag2,lag3,lag4", comments="", fmt="%.17g")


# ---------------------------------------------------------------- assimilation

@dataclass
class AssimilationResult:
    metrics: MetricsReport
    times: np.ndarray = field(repr=False)
    x_mean: np.ndarray = field(repr=False)
    f_mean: np.ndarray = field(repr=False)
    f_std: np.ndarray = field(repr=False)
    nature: NatureRun = field(repr=False)

    def write(self, out_dir, variant: str) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_table(out / f"metrics_{variant}.csv", [("", "", self.metrics)])
        n = len(self.times)
        n_x = self.f_mean.shape[1]
        truth = self.nature.f_true[_align(self.nature.times, self.times)] if n else None
        with open(out / f"param_timeseries_{variant}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_mtu", "grid", "truth", "mean", "std"])
            for i in range(n):
                for g in range(n_x):
                    w.writerow([repr(float(self.times[i])), g, repr(float(truth[i, g])),
                                repr(float(self.f_mean[i, g])), repr(float(self.f_std[i, g]))])


def initial_ensemble(config: ExperimentConfig, nature: NatureRun, prior: ClimatologyPrior | None,
                     n_x: int) -> AugmentedEnsemble:
    """States from randomly chosen nature-run snapshots, parameters from the
    climatology prior (uniform over the offline range when absent)."""
    rng = np.random.default_rng(config.seed_init)
    k = config.ensemble_size
    idx = rng.integers(0, len(nature.times), size=k)
    x = nature.x_true[idx].T.copy()
    if prior is not None:
        f = prior.theta_c[:, None] + np.sqrt(prior.c_diag)[:, None] * rng.standard_normal((n_x, k))
    else:
        f = rng.uniform(config.offline_lower, config.offline_upper, size=(n_x, k))
    return AugmentedEnsemble.from_blocks(x, f)


def run_assimilation(config: ExperimentConfig, prior: ClimatologyPrior | None = None,
                     nature: NatureRun | None = None, obs: Sequence[ObservationBatch] | None = None,
                     c: ModelConstants | None = None, initial: AugmentedEnsemble | None = None
                     ) -> AssimilationResult:
    """Cycle forecast -> variant step -> LETKF over the whole observation record."""
    c = c or ModelConstants()
    if nature is None or obs is None:
        nature, obs = nature_and_observations(config, c)
    if prior is None and config.prior_path:
        prior = ClimatologyPrior.load(config.prior_path)
    if config.variant in ("pso", "rtc") and prior is None:
        raise ValueError(f"variant {config.variant} needs a climatology prior")

    ens = initial if initial is not None else initial_ensemble(config, nature, prior, c.n_x)
    ens = ens.copy()
    loc = config.localization()
    inflation = config.inflation()
    n_steps = c.steps(OBS_INTERVAL_MTU)
    n_t = len(obs)
    times = np.array([b.time for b in obs])
    x_mean = np.empty((n_t, ens.n_state))
    f_mean = np.empty((n_t, ens.n_param))
    f_std = np.empty((n_t, ens.n_param))

    for t, batch in enumerate(obs):
        ens.members[:ens.n_state] = _kernels.single_scale_run(ens.x, np.ascontiguousarray(ens.f),
                                                               n_steps, c.dt)
        try:
            if not np.all(np.isfinite(ens.members)):
                raise FilterDivergence("forecast diverged")
            if config.variant == "pso":
                ens = analyze(ens, pso_augment(batch, prior), loc, inflation)
            elif config.variant == "rtc":
                rho = inflation.current(ens.n_state, ens.n_param)[ens.n_state:]
                ens.members[ens.n_state:] = rtc_transform(ens.f, prior, rho).members
                ens = analyze(ens, batch, loc, inflation, inflate_params=False)
            else:
                ens = analyze(ens, batch, loc, inflation)
        except FilterDivergence:
            log.info("%s diverged at cycle %d", config.variant, t + 1)
            return AssimilationResult(MetricsReport.diverged_at(t + 1), times[:t], x_mean[:t],
                                      f_mean[:t], f_std[:t], nature)
        x_mean[t] = ens.x.mean(axis=1)
        f_mean[t] = ens.f.mean(axis=1)
        f_std[t] = ens.f.std(axis=1, ddof=1)

    truth_idx = _align(nature.times, times)
    metrics = compute_metrics(x_mean, nature.x_true[truth_idx], f_mean, nature.f_true[truth_idx],
                              times, config.spinup_mtu)
    return AssimilationResult(metrics, times, x_mean, f_mean, f_std, nature)


def _align(nature_times, obs_times) -> np.ndarray:
    idx = np.searchsorted(nature_times, obs_times - 1e-9)
    if np.any(idx >= len(nature_times)) or not np.allclose(nature_times[idx], obs_times):
        raise ValueError("observation times do not match the nature run")
    return idx


# ---------------------------------------------------------------- sweep

def sweep(config: ExperimentConfig, rho_x_grid: Sequence[float], rho_theta_grid: Sequence[float],
          prior: ClimatologyPrior | None = None, nature=None, obs=None,
          order: Sequence[tuple[int, int]] | None = None) -> list[tuple[float, float, MetricsReport]]:
    """Fixed-inflation runs over a grid; rows come back in grid order
    regardless of the evaluation ``order``."""
    if len(rho_x_grid) == 0 or len(rho_theta_grid) == 0:
        raise ValueError("inflation grids must be non-empty")
    if nature is None or obs is None:
        nature, obs = nature_and_observations(config)
    cells = [(i, j) for i in range(len(rho_x_grid)) for j in range(len(rho_theta_grid))]
    results = {}
    for i, j in (order or cells):
        cfg = config.replace(inflation_mode="fixed", rho_x=float(rho_x_grid[i]),
                             rho_theta=float(rho_theta_grid[j]))
        results[i, j] = run_assimilation(cfg, prior, nature, obs).metrics
        log.info("rho_x=%g rho_theta=%g -> %s", rho_x_grid[i], rho_theta_grid[j], results[i, j])
    return [(float(rho_x_grid[i]), float(rho_theta_grid[j]), results[i, j]) for i, j in cells]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if v == "":
        return ""
    return repr(float(v))


def write_metrics_table(path, rows) -> None:
    """rows: (rho_x, rho_theta, MetricsReport); blank rho for single runs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for rx, rt, m in rows:
            w.writerow([_fmt(rx), _fmt(rt)] + [_fmt(getattr(m, k)) for k in METRIC_FIELDS]
                       + [_fmt(m.diverged)])


def read_metrics_table(path) -> list[tuple[float | str, float | str, MetricsReport]]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            conv = lambda s: float(s) if s != "" else ""
            rows.append((conv(rec["rho_x"]), conv(rec["rho_theta"]),
                         MetricsReport(*(float(rec[k]) for k in METRIC_FIELDS),
                                       diverged=rec["diverged"] == "1")))
    return rows


def rmse_param_rank(m: MetricsReport) -> float:
    """Sort key for parameter RMSE; a diverged run ranks below every finite one."""
    return float("inf") if m.diverged else m.rmse_param


def r_param_rank(m: MetricsReport) -> float:
    return float("-inf") if m.diverged else m.r_param


def spread_ratio(values: Sequence[float], diverged: Sequence[bool]) -> float:
    """(max - min) / median of the finite values; infinite if any run diverged."""
    if any(diverged):
        return float("inf")
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / np.median(v))
