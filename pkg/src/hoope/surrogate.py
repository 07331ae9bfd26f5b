"""Gaussian-process surrogate of a scalar parameter's climatology.

One independent GP per output column, Matérn-5/2 kernel, targets
standardized to zero mean and unit variance before fitting. Hyperparameters
are picked by maximizing the log marginal likelihood on a fixed logarithmic
grid, so fitting is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

MODES = ("index", "misfit")

_JITTER = 1e-8
_MAX_JITTER = 1e-2
#: Candidate noise variances (standardized units) searched alongside the
#: kernel hyperparameters; the smallest is the jitter floor.
NOISE_GRID = (1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1)


class SingularGram(np.linalg.LinAlgError):
    pass


def matern52(r, signal_variance: float, length_scale: float):
    """k(r) = s2 (1 + sqrt5 r/l + 5 r^2 / (3 l^2)) exp(-sqrt5 r/l)."""
    a = np.sqrt(5.0) * np.abs(r) / length_scale
    return signal_variance * (1.0 + a + a * a / 3.0) * np.exp(-a)


@dataclass(frozen=True)
class GPPrediction:
    mean: np.ndarray
    variance: np.ndarray


def _cholesky(K, noise):
    """Cholesky of K + noise*I, escalating the diagonal on failure."""
    jitter = noise
    n = K.shape[0]
    while True:
        try:
            return linalg.cholesky(K + jitter * np.eye(n), lower=True), jitter
        except linalg.LinAlgError:
            jitter = max(jitter, _JITTER) * 10.0
            if jitter > _MAX_JITTER:
                raise SingularGram("Gram matrix not positive definite after jitter escalation")


@dataclass
class GPModel:
    train_inputs: np.ndarray
    train_targets: np.ndarray  # (n, n_outputs)
    mode: str
    length_scale: np.ndarray  # per output, input units
    signal_variance: np.ndarray  # per output, standardized units
    noise: np.ndarray  # per output, standardized units
    target_mean: np.ndarray
    target_scale: np.ndarray
    _chol: list = field(default_factory=list, repr=False)
    _alpha: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.train_inputs = np.asarray(self.train_inputs, dtype=float)
        self.train_targets = np.asarray(self.train_targets, dtype=float).reshape(len(self.train_inputs), -1)
        for name in ("length_scale", "signal_variance", "noise", "target_mean", "target_scale"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.length_scale <= 0) or np.any(self.signal_variance <= 0):
            raise ValueError("hyperparameters must be positive")
        self._factorize()

    @property
    def n_outputs(self) -> int:
        return self.train_targets.shape[1]

    def _factorize(self):
        x = self.train_inputs
        r = x[:, None] - x[None, :]
        y = (self.train_targets - self.target_mean) / self.target_scale
        self._chol, self._alpha = [], []
        for j in range(self.n_outputs):
            K = matern52(r, self.signal_variance[j], self.length_scale[j])
            L, jitter = _cholesky(K, self.noise[j])
            self.noise[j] = jitter
            self._chol.append(L)
            self._alpha.append(linalg.cho_solve((L, True), y[:, j]))

    def predict_many(self, thetas) -> GPPrediction:
        """Predictions at several inputs; arrays of shape (n_thetas, n_outputs)."""
        t = np.atleast_1d(np.asarray(thetas, dtype=float))
        if not np.all(np.isfinite(t)):
            raise ValueError("theta must be finite")
        r = t[:, None] - self.train_inputs[None, :]
        means = np.empty((t.size, self.n_outputs))
        vars_ = np.empty((t.size, self.n_outputs))
        for j in range(self.n_outputs):
            ks = matern52(r, self.signal_variance[j], self.length_scale[j])
            v = linalg.solve_triangular(self._chol[j], ks.T, lower=True)
            means[:, j] = ks @ self._alpha[j]
            vars_[:, j] = np.maximum(self.signal_variance[j] - np.sum(v * v, axis=0), 0.0)
        return GPPrediction(means * self.target_scale + self.target_mean,
                            vars_ * self.target_scale ** 2)

    def save(self, path) -> None:
        lines = [
            "# hoope Gaussian-process surrogate (Matern 5/2)",
            f"mode {self.mode}",
            f"n_outputs {self.n_outputs}",
        ]
        for name in ("length_scale", "signal_variance", "noise", "target_mean", "target_scale"):
            lines.append(name + " " + " ".join(f"{v:.17g}" for v in getattr(self, name)))
        lines.append("# data columns: theta, target_1 .. target_n_outputs")
        lines.append("data")
        for x, row in zip(self.train_inputs, self.train_targets):
            lines.append(" ".join(f"{v:.17g}" for v in (x, *row)))
        Path(path).write_text("\n".join(lines) + "\n")


def predict(model: GPModel, theta: float) -> GPPrediction:
    """Predictive mean and latent variance per output at a scalar input."""
    p = model.predict_many([theta])
    return GPPrediction(p.mean[0], p.variance[0])


def load_model(path) -> GPModel:
    meta = {}
    rows = []
    in_data = False
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        if in_data:
            rows.append([float(v) for v in line.split()])
        elif line.strip() == "data":
            in_data = True
        else:
            key, *vals = line.split()
            meta[key] = vals
    data = np.array(rows)
    floats = {k: np.array(v, dtype=float) for k, v in meta.items() if k not in ("mode", "n_outputs")}
    return GPModel(data[:, 0], data[:, 1:], meta["mode"][0], floats["length_scale"],
                   floats["signal_variance"], floats["noise"], floats["target_mean"],
                   floats["target_scale"])


def _log_marginal_likelihood(L, y):
    alpha = linalg.cho_solve((L, True), y)
    n = y.shape[0]
    return (-0.5 * np.sum(y * alpha, axis=0) - np.sum(np.log(np.diag(L)))
            - 0.5 * n * np.log(2 * np.pi))


def fit(inputs, targets, mode: str = "index", *, length_scale=None, signal_variance=None,
        noise=None) -> GPModel:
    """Fit one GP per target column.

    Any hyperparameter passed explicitly is held fixed (in standardized
    target units for ``signal_variance`` and ``noise``); the others are
    chosen by log marginal likelihood over the search grid.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(len(x), -1)
    if mode == "misfit" and y.shape[1] != 1:
        raise ValueError("misfit mode takes a single target column")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs and targets must be finite")
    if np.unique(x).size < 3:
        raise ValueError("need at least 3 distinct inputs")

    mean = y.mean(axis=0)
    scale = y.std(axis=0)
    scale[scale == 0] = 1.0
    ys = (y - mean) / scale

    span = np.ptp(x)
    ells = [length_scale] if length_scale is not None else np.geomspace(span / 100, span * 10, 20)
    s2s = [signal_variance] if signal_variance is not None else np.geomspace(0.1, 100.0, 10)
    noises = [noise] if noise is not None else NOISE_GRID

    r = x[:, None] - x[None, :]
    best = np.full(y.shape[1], -np.inf)
    best_h = [None] * y.shape[1]
    for ell in ells:
        base = matern52(r, 1.0, ell)
        for s2 in s2s:
            for nz in noises:
                try:
                    L, used = _cholesky(s2 * base, nz)
                except SingularGram:
                    continue
                lml = _log_marginal_likelihood(L, ys)
                for j in range(y.shape[1]):
                    if lml[j] > best[j]:
                        best[j] = lml[j]
                        best_h[j] = (ell, s2, used)
    if any(h is None for h in best_h):
        raise SingularGram("no hyperparameter combination gave a factorizable Gram matrix")
    ell, s2, nz = (np.array(v) for v in zip(*best_h))
    return GPModel(x, y, mode, ell, s2, nz, mean, scale)
