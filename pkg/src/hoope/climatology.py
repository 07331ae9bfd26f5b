"""Constraining the filter's parameter ensemble with the climatology prior.

Two production routes:

* :func:`pso_augment` appends the climatological mean as pseudo-observations
  of the parameters with the climatological variance as error variance;
* :func:`rtc_transform` moves the parameter ensemble onto the product of
  its own Gaussian and the climatology Gaussian before the analysis
  ("regression to climatology"), one parameter at a time.

The dense block formulas and the general Gaussian transport map below are
used to verify the per-parameter shortcut.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hoope.batchopt import ClimatologyPrior
from hoope.synth import ObservationBatch


def pso_augment(obs: ObservationBatch, prior: ClimatologyPrior) -> ObservationBatch:
    n = prior.n_params
    pseudo = ObservationBatch(obs.time, np.arange(n), prior.theta_c.copy(),
                              prior.c_diag.copy(), np.ones(n, dtype=bool))
    return obs.extend(pseudo)


@dataclass
class RtcTransformed:
    new_mean: np.ndarray  # (n_param,)
    new_perturbations: np.ndarray  # (n_param, k)

    @property
    def members(self) -> np.ndarray:
        return self.new_mean[:, None] + self.new_perturbations


def effective_inflation(rho_theta, sigma_c2, sigma_b2):
    """Variance multiplier the RTC transform applies to the parameter spread."""
    return rho_theta * sigma_c2 / (sigma_c2 + rho_theta * sigma_b2)


def rtc_transform(theta_ens, prior: ClimatologyPrior, rho_theta) -> RtcTransformed:
    """Per-parameter regression of an inflated ensemble toward climatology.

    ``theta_ens`` is (n_param, k). ``rho_theta`` may be a scalar or one
    factor per parameter.
    """
    theta = np.asarray(theta_ens, dtype=float)
    if theta.shape[0] != prior.n_params:
        raise ValueError("parameter block and prior dimensions differ")
    sc2 = prior.c_diag
    if np.any(sc2 <= 0):
        raise ValueError("climatological variance must be positive")
    rho = np.broadcast_to(np.asarray(rho_theta, dtype=float), sc2.shape)
    mean = theta.mean(axis=1)
    pert = theta - mean[:, None]
    sb2 = pert.var(axis=1, ddof=1)
    denom = sc2 + rho * sb2
    new_mean = (rho * sb2 * prior.theta_c + sc2 * mean) / denom
    scale = np.sqrt(rho * sc2 / denom)
    return RtcTransformed(new_mean, scale[:, None] * pert)


@dataclass
class CombinedMoments:
    x_mean: np.ndarray
    theta_mean: np.ndarray
    Bx: np.ndarray
    Bxt: np.ndarray
    Bt: np.ndarray


def combine_background_climatology_exact(Bx, Bxt, Bt, x_mean, theta_mean, theta_c, C) -> CombinedMoments:
    """Closed-form moments of background x climatology(theta) Gaussian product."""
    Bx, Bxt, Bt, C = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (Bx, Bxt, Bt, C))
    x_mean, theta_mean, theta_c = (np.atleast_1d(np.asarray(a, dtype=float))
                                   for a in (x_mean, theta_mean, theta_c))
    S = C + Bt
    # G = Bxt S^-1 and the symmetric-solve forms below
    G = np.linalg.solve(S.T, Bxt.T).T
    x_new = x_mean + G @ (theta_c - theta_mean)
    theta_new = C @ np.linalg.solve(S, theta_mean) + Bt @ np.linalg.solve(S, theta_c)
    Bx_new = Bx - G @ Bxt.T
    Bxt_new = G @ C
    Bt_new = np.linalg.inv(np.linalg.inv(C) + np.linalg.inv(Bt))
    return CombinedMoments(x_new, theta_new, Bx_new, Bxt_new, 0.5 * (Bt_new + Bt_new.T))


def combine_delta_limit_oracle(Bx, Bxt, Bt, x_mean, theta_mean, theta_c, C,
                               delta: float = 1e8) -> CombinedMoments:
    """Dense product-of-Gaussians with a vague state climatology delta*I.

    Reliable for delta up to about 1e10 times the background scale; beyond
    that the state precision is lost in rounding.
    """
    Bx, Bxt, Bt, C = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (Bx, Bxt, Bt, C))
    n, m = Bx.shape[0], Bt.shape[0]
    B = np.block([[Bx, Bxt], [Bxt.T, Bt]])
    A = np.zeros((n + m, n + m))
    A[:n, :n] = delta * np.eye(n)
    A[n:, n:] = C
    B_inv = np.linalg.inv(B)
    A_inv = np.linalg.inv(A)
    B_new = np.linalg.inv(B_inv + A_inv)
    B_new = 0.5 * (B_new + B_new.T)
    prior_mean = np.r_[np.atleast_1d(x_mean), np.atleast_1d(theta_mean)]
    clim_mean = np.r_[np.zeros(n), np.atleast_1d(theta_c)]
    mean = B_new @ (B_inv @ prior_mean + A_inv @ clim_mean)
    return CombinedMoments(mean[:n], mean[n:], B_new[:n, :n], B_new[:n, n:], B_new[n:, n:])


def _sym_sqrt(M, inverse: bool = False):
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    if np.any(vals <= 0):
        raise ValueError("matrix is not symmetric positive definite")
    p = -0.5 if inverse else 0.5
    return (vecs * vals ** p) @ vecs.T


def ot_map_general(theta_samples, src_mean, src_cov, tgt_mean, tgt_cov):
    """Optimal-transport map between Gaussians applied to sample columns."""
    src_cov = np.atleast_2d(np.asarray(src_cov, dtype=float))
    tgt_cov = np.atleast_2d(np.asarray(tgt_cov, dtype=float))
    s_half = _sym_sqrt(src_cov)
    s_ihalf = _sym_sqrt(src_cov, inverse=True)
    T = s_ihalf @ _sym_sqrt(s_half @ tgt_cov @ s_half) @ s_ihalf
    samples = np.asarray(theta_samples, dtype=float)
    return np.asarray(tgt_mean, dtype=float)[:, None] + T @ (samples - np.asarray(src_mean, dtype=float)[:, None])
