"""LETKF for a state vector augmented with a gridded parameter field.

Every state variable X[k] and parameter F[k] sits at grid point k and gets
its own local analysis. Observation precision is tapered by periodic grid
distance; pseudo-observations of a parameter only ever reach that
parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hoope.synth import ObservationBatch

DIVERGENCE_THRESHOLD = 1e6
_EIG_FLOOR = 1e-12


class FilterDivergence(RuntimeError):
    pass


@dataclass
class AugmentedEnsemble:
    """Members as columns: rows ``[:n_state]`` are X, rows ``n_state:`` are F."""

    members: np.ndarray
    n_state: int

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=float)
        if self.members.ndim != 2 or self.members.shape[1] < 2:
            raise ValueError("need a (n_vars, k) array with k >= 2")

    @classmethod
    def from_blocks(cls, x: np.ndarray, f: np.ndarray) -> "AugmentedEnsemble":
        return cls(np.vstack([x, f]), x.shape[0])

    @property
    def k(self) -> int:
        return self.members.shape[1]

    @property
    def n_param(self) -> int:
        return self.members.shape[0] - self.n_state

    @property
    def x(self) -> np.ndarray:
        return self.members[:self.n_state]

    @property
    def f(self) -> np.ndarray:
        return self.members[self.n_state:]

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=1)

    @property
    def perturbations(self) -> np.ndarray:
        return self.members - self.mean[:, None]

    def grid_of(self) -> np.ndarray:
        """Grid index of every row (parameters share the state grid)."""
        return np.concatenate([np.arange(self.n_state), np.arange(self.n_param)])

    def copy(self) -> "AugmentedEnsemble":
        return AugmentedEnsemble(self.members.copy(), self.n_state)


@dataclass(frozen=True)
class LocalizationConfig:
    """Gaussian taper exp(-(r/sigma)^2 / 2), zero from 2*sqrt(10/3)*sigma.

    ``sigma = inf`` switches localization off (taper 1 everywhere).
    """

    sigma: float = 3.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def cutoff(self) -> float:
        return 2.0 * np.sqrt(10.0 / 3.0) * self.sigma


def taper(r, cfg: LocalizationConfig):
    r = np.asarray(r, dtype=float)
    if np.isinf(cfg.sigma):
        return np.ones_like(r)
    return np.where(r < cfg.cutoff, np.exp(-0.5 * (r / cfg.sigma) ** 2), 0.0)


def periodic_distance(i, j, n: int):
    d = np.abs(np.asarray(i) - np.asarray(j)) % n
    return np.minimum(d, n - d)


@dataclass
class InflationConfig:
    """Multiplicative inflation, fixed or adaptive.

    In adaptive mode ``factors`` holds the current estimate for every
    analyzed variable (state rows then parameter rows); it is created on
    first use and updated in place by :func:`analyze`.
    """

    mode: str = "fixed"
    rho_x: float = 1.0
    rho_theta: float = 1.0
    prior_var: float = 0.04
    initial: float = 1.05
    bounds: tuple[float, float] = (1.0, 10.0)
    factors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError("inflation mode must be 'fixed' or 'adaptive'")
        if self.mode == "fixed" and (self.rho_x < 1 or self.rho_theta < 1):
            raise ValueError("fixed inflation factors must be >= 1")

    def current(self, n_state: int, n_param: int) -> np.ndarray:
        if self.mode == "fixed":
            return np.r_[np.full(n_state, self.rho_x), np.full(n_param, self.rho_theta)]
        if self.factors is None:
            self.factors = np.full(n_state + n_param, float(self.initial))
        return self.factors


@dataclass
class LocalAnalysis:
    w_mean: np.ndarray
    p_tilde_a: np.ndarray
    w_matrix: np.ndarray


def inflate_fixed(ens: AugmentedEnsemble, rho_x: float, rho_theta: float) -> AugmentedEnsemble:
    factors = np.r_[np.full(ens.n_state, rho_x), np.full(ens.n_param, rho_theta)]
    return _inflate(ens, factors)


def _inflate(ens: AugmentedEnsemble, factors) -> AugmentedEnsemble:
    mean = ens.mean
    pert = (ens.members - mean[:, None]) * np.sqrt(factors)[:, None]
    return AugmentedEnsemble(mean[:, None] + pert, ens.n_state)


def _batched_solve(Y, d, rinv):
    """Local LETKF solves for every row of ``rinv`` (n_var, p).

    Returns w_mean (n_var, k), p_tilde_a (n_var, k, k), W (n_var, k, k).
    """
    k = Y.shape[1]
    A = np.einsum("ok,vo,ol->vkl", Y, rinv, Y)
    A += (k - 1) * np.eye(k)
    vals, vecs = np.linalg.eigh(A)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise np.linalg.LinAlgError("LETKF inner matrix is not positive definite")
    vals = np.maximum(vals, _EIG_FLOOR)
    p_tilde = np.einsum("vij,vj,vlj->vil", vecs, 1.0 / vals, vecs)
    W = np.sqrt(k - 1) * np.einsum("vij,vj,vlj->vil", vecs, 1.0 / np.sqrt(vals), vecs)
    w_mean = np.einsum("vkl,ol,vo->vk", p_tilde, Y, rinv * d)
    return w_mean, p_tilde, W


def letkf_local_solve(perturbations_Y, innovation, tapered_R_inv) -> LocalAnalysis:
    """Ensemble-space analysis for one local region.

    ``perturbations_Y`` is (p, k); ``tapered_R_inv`` the diagonal of the
    tapered inverse observation-error covariance. W is the symmetric square
    root of (k-1) * P~a.
    """
    Y = np.asarray(perturbations_Y, dtype=float)
    rinv = np.asarray(tapered_R_inv, dtype=float)
    if np.any(rinv < 0):
        raise ValueError("tapered precisions must be non-negative")
    w, p, W = _batched_solve(Y, np.asarray(innovation, dtype=float), rinv[None, :])
    return LocalAnalysis(w[0], p[0], W[0])


def observation_rows(ens: AugmentedEnsemble, obs: ObservationBatch) -> np.ndarray:
    """Row of the augmented vector each observation measures."""
    rows = np.where(obs.pseudo, ens.n_state + obs.location, obs.location)
    if np.any(obs.location < 0) or np.any(obs.location >= np.where(obs.pseudo, ens.n_param, ens.n_state)):
        raise ValueError("observation location outside the grid")
    return rows


def taper_matrix(ens: AugmentedEnsemble, obs: ObservationBatch, loc: LocalizationConfig) -> np.ndarray:
    """Taper weight of every observation for every analyzed row, (n_var, p)."""
    grid = ens.grid_of()
    n_grid = ens.n_state
    dist = periodic_distance(grid[:, None], obs.location[None, :], n_grid)
    w = taper(dist, loc)
    is_param = np.arange(ens.members.shape[0]) >= ens.n_state
    same = grid[:, None] == obs.location[None, :]
    pseudo_w = (is_param[:, None] & same).astype(float)
    return np.where(obs.pseudo[None, :], pseudo_w, w)


def adaptive_inflation_update(innovation, Y, tapered_R_inv, rho_prior, prior_var,
                              weights=None, bounds=(1.0, 10.0)):
    """Gaussian-approach update of multiplicative inflation estimates.

    Works row-wise: ``tapered_R_inv`` and ``weights`` (taper weights, giving
    the effective observation count) are (n_var, p) or (p,); ``Y`` is the
    uninflated (p, k) observation-space perturbation matrix. Rows without
    effective observations or spread keep their prior.
    """
    d = np.asarray(innovation, dtype=float)
    Y = np.asarray(Y, dtype=float)
    rinv = np.atleast_2d(np.asarray(tapered_R_inv, dtype=float))
    if weights is None:
        weights = (rinv > 0).astype(float)
    p = np.atleast_2d(np.asarray(weights, dtype=float)).sum(axis=1)
    rho_b = np.broadcast_to(np.asarray(rho_prior, dtype=float), p.shape).astype(float)
    k = Y.shape[1]
    spread = np.sum(Y * Y, axis=1) / (k - 1)
    trace = rinv @ spread
    dRd = rinv @ (d * d)
    ok = (p > 0) & (trace > 0)
    out = rho_b.copy()
    if np.any(ok) and prior_var > 0:
        t, pp, rb = trace[ok], p[ok], rho_b[ok]
        rho_o = (dRd[ok] - pp) / t
        var_o = 2.0 / pp * ((rb * t / pp + 1.0) / (t / pp)) ** 2
        out[ok] = (rb * var_o + rho_o * prior_var) / (prior_var + var_o)
    return np.clip(out, *bounds) if np.ndim(rho_prior) else float(np.clip(out, *bounds)[0])


def analyze(ens: AugmentedEnsemble, obs: ObservationBatch | None, loc: LocalizationConfig,
            inflation: InflationConfig, inflate_params: bool = True) -> AugmentedEnsemble:
    """One LETKF analysis of the augmented ensemble.

    Background perturbations are inflated first (parameter rows only when
    ``inflate_params``). In adaptive mode the per-variable estimates in
    ``inflation.factors`` are updated from this cycle's innovations for use
    at the next cycle.
    """
    factors = inflation.current(ens.n_state, ens.n_param).copy()
    if not inflate_params:
        factors[ens.n_state:] = 1.0
    background = _inflate(ens, factors)
    if obs is None or len(obs) == 0:
        return _check(background)

    rows = observation_rows(ens, obs)
    mean = background.mean
    pert = background.members - mean[:, None]
    Y = pert[rows]
    d = obs.value - mean[rows]
    weights = taper_matrix(ens, obs, loc)
    rinv = weights / obs.error_variance[None, :]

    w_mean, _, W = _batched_solve(Y, d, rinv)
    # row v: mean_v + pert_v . (w_mean_v + W_v)
    analysis = mean[:, None] + np.einsum("vk,vkl->vl", pert, w_mean[:, :, None] + W)

    if inflation.mode == "adaptive":
        raw = ens.perturbations[rows]
        inflation.factors = adaptive_inflation_update(
            d, raw, rinv, inflation.factors, inflation.prior_var, weights, inflation.bounds)
    return _check(AugmentedEnsemble(analysis, ens.n_state))


def _check(ens: AugmentedEnsemble) -> AugmentedEnsemble:
    m = ens.members
    if not np.all(np.isfinite(m)) or np.max(np.abs(m)) > DIVERGENCE_THRESHOLD:
        raise FilterDivergence("ensemble diverged")
    return ens
