"""Two-scale (truth) and single-scale (forecast) Lorenz96 dynamics.

Fast variables are stored flattened: ``v[k * n_z + l]`` holds V[l, k] with
zero-based ``k`` and ``l``. The flattened vector is one periodic ring, so
V[n_z, k] is V[0, k + 1] and the last fast variable neighbours the first.

The functions here are the readable numpy reference. Long integrations go
through the compiled loops in :mod:`hoope._kernels`, which are checked
against these in the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from hoope import _kernels

#: RK4 steps per model time unit at the default step.
STEPS_PER_MTU = 2000


@dataclass(frozen=True)
class ModelConstants:
    n_x: int = 9
    n_z: int = 20
    forcing_S: float = 14.0
    timescale_xi: float = 0.7
    coupling_hx: float = -2.0
    coupling_hz: float = 1.0
    dt: float = 0.0005

    def __post_init__(self):
        if self.n_x < 4 or self.n_z < 4:
            raise ValueError("n_x and n_z must be at least 4")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.timescale_xi == 0:
            raise ValueError("timescale_xi must be non-zero")

    def steps(self, mtu: float) -> int:
        """Number of RK4 steps spanning ``mtu`` model time units."""
        n = int(round(mtu / self.dt))
        if abs(n * self.dt - mtu) > 1e-9 * max(1.0, mtu):
            raise ValueError(f"{mtu} MTU is not a whole number of steps of {self.dt}")
        return n


@dataclass
class TwoScaleState:
    x: np.ndarray
    v: np.ndarray

    def check(self, c: ModelConstants) -> None:
        if self.x.shape != (c.n_x,) or self.v.shape != (c.n_x * c.n_z,):
            raise ValueError("state shape does not match model constants")

    def copy(self) -> "TwoScaleState":
        return TwoScaleState(self.x.copy(), self.v.copy())


def coupling_tendency(state: TwoScaleState, c: ModelConstants) -> np.ndarray:
    """Sub-grid forcing U[k] = (h_x / n_z) * sum_l V[l, k]."""
    return c.coupling_hx / c.n_z * state.v.reshape(c.n_x, c.n_z).sum(axis=1)


def true_parameter(state: TwoScaleState, c: ModelConstants) -> np.ndarray:
    """The F field that makes the single-scale model exact: S + U."""
    return c.forcing_S + coupling_tendency(state, c)


def _advection(x: np.ndarray) -> np.ndarray:
    # -X[k-1] * (X[k-2] - X[k+1]); grid along axis 0
    return -np.roll(x, 1, axis=0) * (np.roll(x, 2, axis=0) - np.roll(x, -1, axis=0))


def tendency_single_scale(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """dX/dt of the single-scale model with per-grid forcing ``f``."""
    return _advection(x) - x + f


def tendency_two_scale(state: TwoScaleState, c: ModelConstants) -> TwoScaleState:
    x, v = state.x, state.v
    dx = _advection(x) - x + c.forcing_S + coupling_tendency(state, c)
    # -V[j+1] * (V[j+2] - V[j-1]) on the flattened ring
    adv_v = -np.roll(v, -1) * (np.roll(v, -2) - np.roll(v, 1))
    dv = (adv_v - v + c.coupling_hz * np.repeat(x, c.n_z)) / c.timescale_xi
    return TwoScaleState(dx, dv)


def rk4_step(y, tendency: Callable, dt: float):
    """One classical RK4 step for an array state or a :class:`TwoScaleState`."""
    if isinstance(y, TwoScaleState):
        def axpy(a, s, b):
            return TwoScaleState(a.x + s * b.x, a.v + s * b.v)
    else:
        def axpy(a, s, b):
            return a + s * b

    k1 = tendency(y)
    k2 = tendency(axpy(y, 0.5 * dt, k1))
    k3 = tendency(axpy(y, 0.5 * dt, k2))
    k4 = tendency(axpy(y, dt, k3))
    if isinstance(y, TwoScaleState):
        return TwoScaleState(
            y.x + dt / 6.0 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x),
            y.v + dt / 6.0 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v),
        )
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_two_scale(state: TwoScaleState, c: ModelConstants, n_steps: int,
                        dt: float | None = None) -> TwoScaleState:
    """Advance the truth model ``n_steps`` RK4 steps (compiled loop)."""
    state.check(c)
    x, v = _kernels.two_scale_run(
        state.x.astype(float), state.v.astype(float), n_steps,
        c.dt if dt is None else dt, c.n_z, c.forcing_S, c.timescale_xi,
        c.coupling_hx, c.coupling_hz,
    )
    return TwoScaleState(x, v)


def integrate_single_scale(x: np.ndarray, f: np.ndarray, n_steps: int, dt: float) -> np.ndarray:
    """Advance single-scale members ``n_steps`` RK4 steps.

    ``x`` and ``f`` are either one state of shape (n_x,) or a batch of
    members of shape (n_x, k); parameters persist unchanged over the call.
    """
    x = np.asarray(x, dtype=float)
    f = np.broadcast_to(np.asarray(f, dtype=float), x.shape)
    if x.ndim == 1:
        return _kernels.single_scale_run(x[:, None].copy(), f[:, None].copy(), n_steps, dt)[:, 0]
    return _kernels.single_scale_run(np.ascontiguousarray(x), np.ascontiguousarray(f), n_steps, dt)
