"""Offline batch calibration: Metropolis-Hastings through the GP surrogate
and a Gaussian fit of the resulting time-invariant parameter posterior."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from hoope.surrogate import GPModel
from hoope.synth import ClimIndex


@dataclass(frozen=True)
class ParameterPrior:
    """Uniform prior trimmed to [lower, upper]."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("lower must be below upper")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, theta: float) -> bool:
        return self.lower <= theta <= self.upper


@dataclass
class McmcChain:
    samples: np.ndarray
    n_total: int
    n_burnin: int
    n_accepted: int
    n_in_bounds: int

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_total

    @property
    def in_bounds_acceptance_rate(self) -> float:
        return self.n_accepted / self.n_in_bounds if self.n_in_bounds else 0.0

    def to_csv(self, path) -> None:
        np.savetxt(path, self.samples, header="theta", comments="", fmt="%.17g")


@dataclass
class ClimatologyPrior:
    theta_c: np.ndarray
    c_diag: np.ndarray

    def __post_init__(self):
        self.theta_c = np.atleast_1d(np.asarray(self.theta_c, dtype=float))
        self.c_diag = np.atleast_1d(np.asarray(self.c_diag, dtype=float))
        if self.theta_c.shape != self.c_diag.shape:
            raise ValueError("theta_c and c_diag must have equal length")
        if np.any(self.c_diag <= 0):
            raise ValueError("climatological variances must be positive")

    @property
    def n_params(self) -> int:
        return self.theta_c.size

    def save(self, path) -> None:
        np.savetxt(path, np.column_stack([self.theta_c, self.c_diag]),
                   header="theta_c c_diag", fmt="%.17g")

    @classmethod
    def load(cls, path) -> "ClimatologyPrior":
        data = np.loadtxt(path, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def log_misfit_phi(model: GPModel, theta: float, gamma_obs: ClimIndex | None,
                   r_o) -> float:
    """Negative log-likelihood of ``theta`` through the surrogate.

    Index mode: 0.5 * sum_i (gamma_obs_i - mu_i)^2 / (R_gp_i + R_o_i).
    Misfit mode (the GP models the squared misfit directly):
    0.5 * mu / (R_gp + R_o).
    """
    p = model.predict_many([theta])
    mu, var = p.mean[0], p.variance[0]
    r_o = np.asarray(r_o, dtype=float)
    if np.any(r_o <= 0):
        raise ValueError("observation index variance must be positive")
    if model.mode == "misfit":
        phi = 0.5 * float(mu[0] / (var[0] + r_o.ravel()[0]))
    else:
        phi = 0.5 * float(np.sum((gamma_obs.values - mu) ** 2 / (var + r_o)))
    if not math.isfinite(phi):
        raise ValueError(f"non-finite misfit at theta={theta}")
    return phi


def make_phi(model: GPModel, gamma_obs: ClimIndex | None, r_o) -> Callable[[float], float]:
    return lambda theta: log_misfit_phi(model, theta, gamma_obs, r_o)


def mh_sample(phi: Callable[[float], float], prior: ParameterPrior, proposal_std: float | None = None,
              n_total: int = 500_000, n_burnin: int = 100_000, seed: int = 0,
              initial: float | None = None) -> McmcChain:
    """Random-walk Metropolis-Hastings for a scalar parameter.

    Candidates outside the prior bounds are rejected without evaluating
    ``phi``; otherwise accepted when a uniform draw b <= min(1, exp(phi_j -
    phi_cand)).
    """
    if proposal_std is None:
        proposal_std = 0.05 * (prior.upper - prior.lower)
    if not proposal_std > 0:
        raise ValueError("proposal_std must be positive")
    if not 0 <= n_burnin < n_total:
        raise ValueError("need 0 <= n_burnin < n_total")
    theta = prior.midpoint if initial is None else float(initial)
    if not prior.contains(theta):
        raise ValueError("initial point outside the prior bounds")

    rng = np.random.default_rng(seed)
    steps = (proposal_std * rng.standard_normal(n_total)).tolist()
    uniforms = rng.random(n_total).tolist()
    lo, hi = prior.lower, prior.upper
    out = np.empty(n_total - n_burnin)
    phi_cur = phi(theta)
    accepted = in_bounds = 0
    for j in range(n_total):
        cand = theta + steps[j]
        if lo <= cand <= hi:
            in_bounds += 1
            phi_cand = phi(cand)
            delta = phi_cur - phi_cand
            if delta >= 0.0 or uniforms[j] <= math.exp(delta):
                theta, phi_cur = cand, phi_cand
                accepted += 1
        if j >= n_burnin:
            out[j - n_burnin] = theta
    return McmcChain(out, n_total, n_burnin, accepted, in_bounds)


def fit_gaussian(chain: McmcChain | np.ndarray, n_params: int) -> ClimatologyPrior:
    """Sample mean and variance (ddof=1), broadcast to every parameter."""
    samples = chain.samples if isinstance(chain, McmcChain) else np.asarray(chain, dtype=float)
    if samples.size < 2:
        raise ValueError("chain needs at least two samples")
    var = float(np.var(samples, ddof=1))
    if var <= 0:
        raise ValueError("chain has zero variance")
    return ClimatologyPrior(np.full(n_params, float(np.mean(samples))), np.full(n_params, var))
