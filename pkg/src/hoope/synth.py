"""Nature run, synthetic observations and climatological indices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hoope import _kernels
from hoope.models import ModelConstants, TwoScaleState

OBS_INTERVAL_MTU = 0.05
#: Zero-based indices of the observed grid points (k = 1, 2, 5, 6 one-based).
OBSERVED_GRIDS = (0, 1, 4, 5)
#: Autocorrelation lags in observation intervals (0.1, 0.15, 0.2 MTU).
INDEX_LAGS = (2, 3, 4)


class ModelDivergence(RuntimeError):
    pass


class UndefinedStatistic(ValueError):
    """Raised when a correlation is requested of a constant series."""


@dataclass
class NatureRun:
    times: np.ndarray
    x_true: np.ndarray  # (n_times, n_x)
    f_true: np.ndarray  # (n_times, n_x)
    final_state: TwoScaleState | None = None

    def __post_init__(self):
        if len(self.x_true) != len(self.times) or len(self.f_true) != len(self.times):
            raise ValueError("times, x_true and f_true must have the same length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def interval(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else OBS_INTERVAL_MTU

    def to_csv(self, path) -> None:
        n_x = self.x_true.shape[1]
        header = ",".join(["time_mtu"] + [f"x_{i + 1}" for i in range(n_x)]
                          + [f"f_{i + 1}" for i in range(n_x)])
        data = np.column_stack([self.times, self.x_true, self.f_true])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "NatureRun":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n_x = (data.shape[1] - 1) // 2
        return cls(data[:, 0], data[:, 1:1 + n_x], data[:, 1 + n_x:])


@dataclass
class ObservationBatch:
    """Observations valid at one analysis time.

    ``location`` is a grid index for state observations and a parameter
    index for pseudo-parameter observations (``pseudo`` True).
    """

    time: float
    location: np.ndarray
    value: np.ndarray
    error_variance: np.ndarray
    pseudo: np.ndarray = field(default=None)

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=int)
        self.value = np.asarray(self.value, dtype=float)
        self.error_variance = np.asarray(self.error_variance, dtype=float)
        if self.pseudo is None:
            self.pseudo = np.zeros(self.location.shape, dtype=bool)
        self.pseudo = np.asarray(self.pseudo, dtype=bool)
        n = self.location.shape
        if self.value.shape != n or self.error_variance.shape != n or self.pseudo.shape != n:
            raise ValueError("observation fields must have equal length")
        if np.any(self.error_variance <= 0):
            raise ValueError("error variances must be positive")

    def __len__(self) -> int:
        return self.location.size

    def extend(self, other: "ObservationBatch") -> "ObservationBatch":
        return ObservationBatch(
            self.time,
            np.concatenate([self.location, other.location]),
            np.concatenate([self.value, other.value]),
            np.concatenate([self.error_variance, other.error_variance]),
            np.concatenate([self.pseudo, other.pseudo]),
        )

    def subset(self, idx) -> "ObservationBatch":
        return ObservationBatch(self.time, self.location[idx], self.value[idx],
                                self.error_variance[idx], self.pseudo[idx])


@dataclass
class ClimIndex:
    values: np.ndarray
    lags_mtu: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.lags_mtu = np.asarray(self.lags_mtu, dtype=float)
        if self.values.shape != self.lags_mtu.shape:
            raise ValueError("values and lags must have equal length")


def random_initial_state(c: ModelConstants, rng: np.random.Generator) -> TwoScaleState:
    x = c.forcing_S / 2 + rng.standard_normal(c.n_x)
    v = 0.1 * rng.standard_normal(c.n_x * c.n_z)
    return TwoScaleState(x, v)


def generate_nature_run(c: ModelConstants, length_mtu: float, spinup_mtu: float = 10.0,
                        seed: int = 0, interval_mtu: float = OBS_INTERVAL_MTU) -> NatureRun:
    """Integrate the two-scale model and store X and S + U every interval.

    The first snapshot is one interval after the end of the spin-up; times
    are measured from the end of the spin-up.
    """
    if not length_mtu > 0:
        raise ValueError("length_mtu must be positive")
    rng = np.random.default_rng(seed)
    state = random_initial_state(c, rng)
    args = (c.dt, c.n_z, c.forcing_S, c.timescale_xi, c.coupling_hx, c.coupling_hz)
    x, v = _kernels.two_scale_run(state.x, state.v, c.steps(spinup_mtu), *args)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise ModelDivergence("two-scale model diverged during spin-up")
    n_records = int(round(length_mtu / interval_mtu))
    xs, fs, x, v, ok = _kernels.two_scale_record(x, v, n_records, c.steps(interval_mtu), *args)
    if not ok:
        bad = int(np.argmax(~np.all(np.isfinite(xs), axis=1)))
        raise ModelDivergence(f"two-scale model diverged at {(bad + 1) * interval_mtu:.2f} MTU")
    times = interval_mtu * np.arange(1, n_records + 1)
    return NatureRun(times, xs, fs, TwoScaleState(x, v))


def generate_observations(run: NatureRun, observed_grids: Sequence[int] = OBSERVED_GRIDS,
                          noise_std: float = 0.1, seed: int = 0) -> list[ObservationBatch]:
    n_x = run.x_true.shape[1]
    grids = np.asarray(observed_grids, dtype=int)
    if grids.size == 0 or grids.min() < 0 or grids.max() >= n_x:
        raise ValueError(f"observed grids must lie in [0, {n_x})")
    if not noise_std > 0:
        raise ValueError("noise_std must be positive")
    rng = np.random.default_rng(seed)
    noise = noise_std * rng.standard_normal((len(run.times), grids.size))
    values = run.x_true[:, grids] + noise
    var = np.full(grids.size, noise_std ** 2)
    return [ObservationBatch(float(t), grids.copy(), values[i], var.copy())
            for i, t in enumerate(run.times)]


def observations_to_csv(batches: Sequence[ObservationBatch], path) -> None:
    rows = [(b.time, loc, val, var)
            for b in batches
            for loc, val, var in zip(b.location, b.value, b.error_variance)]
    np.savetxt(path, np.array(rows, dtype=float).reshape(-1, 4), delimiter=",",
               header="time_mtu,location,value,error_variance", comments="",
               fmt=["%.17g", "%d", "%.17g", "%.17g"])


def observations_from_csv(path) -> list[ObservationBatch]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    batches = []
    # rows are grouped by time in file order
    starts = np.flatnonzero(np.r_[True, np.diff(data[:, 0]) != 0])
    for s, e in zip(starts, np.r_[starts[1:], len(data)]):
        chunk = data[s:e]
        batches.append(ObservationBatch(float(chunk[0, 0]), chunk[:, 1].astype(int),
                                        chunk[:, 2], chunk[:, 3]))
    return batches


def observation_matrix(batches: Sequence[ObservationBatch]) -> np.ndarray:
    """Stack state observations into an array (n_times, n_locations)."""
    return np.array([b.value[~b.pseudo] for b in batches])


def autocorrelation(series, lag: int) -> float:
    series = np.asarray(series, dtype=float)
    n = series.size
    if lag < 0 or n <= lag + 1:
        raise ValueError("series must be longer than lag + 1")
    a = series[:n - lag]
    b = series[lag:]
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.dot(da, da) * np.dot(db, db))
    if denom == 0.0:
        raise UndefinedStatistic("autocorrelation of a constant series is undefined")
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def climatological_index(x_series, lags: Sequence[int] = INDEX_LAGS,
                         window_mtu: float | None = None,
                         interval_mtu: float = OBS_INTERVAL_MTU) -> ClimIndex:
    """Lagged autocorrelations averaged over the columns of ``x_series``.

    ``x_series`` has shape (n_times,) or (n_times, n_grids). Only the last
    ``window_mtu`` of the record is used when given.
    """
    x = np.asarray(x_series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if window_mtu is not None:
        n = int(round(window_mtu / interval_mtu))
        if n > len(x):
            raise ValueError(f"window of {window_mtu} MTU exceeds the {len(x) * interval_mtu:g} MTU record")
        x = x[len(x) - n:]
    values = [np.mean([autocorrelation(x[:, g], lag) for g in range(x.shape[1])]) for lag in lags]
    return ClimIndex(np.array(values), np.asarray(lags) * interval_mtu)


def estimate_observation_index_variance(obs_series, n_bootstrap: int = 1000,
                                        subset_length_mtu: float = 500.0, seed: int = 0,
                                        lags: Sequence[int] = INDEX_LAGS,
                                        interval_mtu: float = OBS_INTERVAL_MTU) -> np.ndarray:
    """Variance of the climatological index over randomly placed contiguous
    sub-records of the observation series."""
    obs = np.asarray(obs_series, dtype=float)
    n = int(round(subset_length_mtu / interval_mtu))
    if n > len(obs):
        raise ValueError("subset longer than the observation record")
    if n <= max(lags) + 1:
        raise ValueError("subset too short for the requested lags")
    starts = np.random.default_rng(seed).integers(0, len(obs) - n + 1, size=n_bootstrap)
    indices = np.array([climatological_index(obs[s:s + n], lags, None, interval_mtu).values
                        for s in starts])
    return indices.var(axis=0, ddof=1)
