"""Compiled RK4 loops for the Lorenz96 models.

Index conventions follow :mod:`hoope.models`. Every kernel is a pure
function of its arguments.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _two_scale_tend(x, v, out_x, out_v, n_z, S, xi, hx, hz):
    n_x = x.shape[0]
    n_v = v.shape[0]
    for k in range(n_x):
        s = 0.0
        for l in range(n_z):
            s += v[k * n_z + l]
        out_x[k] = (-x[k - 1] * (x[k - 2] - x[(k + 1) % n_x])
                    - x[k] + S + hx / n_z * s)
    inv_xi = 1.0 / xi
    for k in range(n_x):
        hzx = hz * x[k]
        for j in range(k * n_z, (k + 1) * n_z):
            if j >= 1 and j < n_v - 2:
                adv = -v[j + 1] * (v[j + 2] - v[j - 1])
            else:
                adv = -v[(j + 1) % n_v] * (v[(j + 2) % n_v] - v[(j - 1) % n_v])
            out_v[j] = (adv - v[j] + hzx) * inv_xi


@njit(cache=True, inline="always")
def _two_scale_step(x, v, dt, n_z, S, xi, hx, hz, work):
    n_x = x.shape[0]
    n_v = v.shape[0]
    k1x, k2x, k3x, k4x, tx = work[0][0], work[0][1], work[0][2], work[0][3], work[0][4]
    k1v, k2v, k3v, k4v, tv = work[1][0], work[1][1], work[1][2], work[1][3], work[1][4]
    _two_scale_tend(x, v, k1x, k1v, n_z, S, xi, hx, hz)
    for i in range(n_x):
        tx[i] = x[i] + 0.5 * dt * k1x[i]
    for i in range(n_v):
        tv[i] = v[i] + 0.5 * dt * k1v[i]
    _two_scale_tend(tx, tv, k2x, k2v, n_z, S, xi, hx, hz)
    for i in range(n_x):
        tx[i] = x[i] + 0.5 * dt * k2x[i]
    for i in range(n_v):
        tv[i] = v[i] + 0.5 * dt * k2v[i]
    _two_scale_tend(tx, tv, k3x, k3v, n_z, S, xi, hx, hz)
    for i in range(n_x):
        tx[i] = x[i] + dt * k3x[i]
    for i in range(n_v):
        tv[i] = v[i] + dt * k3v[i]
    _two_scale_tend(tx, tv, k4x, k4v, n_z, S, xi, hx, hz)
    for i in range(n_x):
        x[i] += dt / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i])
    for i in range(n_v):
        v[i] += dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i])


@njit(cache=True)
def two_scale_run(x0, v0, n_steps, dt, n_z, S, xi, hx, hz):
    x = x0.copy()
    v = v0.copy()
    work = (np.empty((5, x.shape[0])), np.empty((5, v.shape[0])))
    for _ in range(n_steps):
        _two_scale_step(x, v, dt, n_z, S, xi, hx, hz, work)
    return x, v


@njit(cache=True)
def two_scale_record(x0, v0, n_records, steps_per_record, dt, n_z, S, xi, hx, hz):
    """Integrate and store X and S + U after every ``steps_per_record`` steps.

    Returns (xs, fs, x_end, v_end, ok); ``ok`` is False if the state became
    non-finite, in which case the records stop at the failure.
    """
    n_x = x0.shape[0]
    x = x0.copy()
    v = v0.copy()
    work = (np.empty((5, n_x)), np.empty((5, v.shape[0])))
    xs = np.full((n_records, n_x), np.nan)
    fs = np.full((n_records, n_x), np.nan)
    for r in range(n_records):
        for _ in range(steps_per_record):
            _two_scale_step(x, v, dt, n_z, S, xi, hx, hz, work)
        for k in range(n_x):
            s = 0.0
            for l in range(n_z):
                s += v[k * n_z + l]
            xs[r, k] = x[k]
            fs[r, k] = S + hx / n_z * s
        for k in range(n_x):
            if not np.isfinite(x[k]):
                return xs, fs, x, v, False
    return xs, fs, x, v, True


@njit(cache=True, inline="always")
def _single_tend(x, f, out):
    n = x.shape[0]
    out[0] = -x[n - 1] * (x[n - 2] - x[1]) - x[0] + f[0]
    out[1] = -x[0] * (x[n - 1] - x[2]) - x[1] + f[1]
    for k in range(2, n - 1):
        out[k] = -x[k - 1] * (x[k - 2] - x[k + 1]) - x[k] + f[k]
    out[n - 1] = -x[n - 2] * (x[n - 3] - x[0]) - x[n - 1] + f[n - 1]


@njit(cache=True, inline="always")
def _single_step(x, f, dt, k1, k2, k3, k4, t):
    n = x.shape[0]
    _single_tend(x, f, k1)
    for i in range(n):
        t[i] = x[i] + 0.5 * dt * k1[i]
    _single_tend(t, f, k2)
    for i in range(n):
        t[i] = x[i] + 0.5 * dt * k2[i]
    _single_tend(t, f, k3)
    for i in range(n):
        t[i] = x[i] + dt * k3[i]
    _single_tend(t, f, k4)
    for i in range(n):
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def single_scale_run(x0, f, n_steps, dt):
    """Advance each column of ``x0`` (n_x, k) with its own forcing column."""
    n, n_mem = x0.shape
    out = np.empty((n, n_mem))
    x = np.empty(n)
    fm = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    t = np.empty(n)
    for m in range(n_mem):
        for i in range(n):
            x[i] = x0[i, m]
            fm[i] = f[i, m]
        for _ in range(n_steps):
            _single_step(x, fm, dt, k1, k2, k3, k4, t)
        for i in range(n):
            out[i, m] = x[i]
    return out


@njit(cache=True)
def single_scale_record(x0, f, n_skip, n_records, steps_per_record, dt):
    """Integrate each column, skip ``n_skip`` steps, then store X every
    ``steps_per_record`` steps. Returns an array (n_records, n_x, k)."""
    n, n_mem = x0.shape
    out = np.empty((n_records, n, n_mem))
    x = np.empty(n)
    fm = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    t = np.empty(n)
    for m in range(n_mem):
        for i in range(n):
            x[i] = x0[i, m]
            fm[i] = f[i, m]
        for _ in range(n_skip):
            _single_step(x, fm, dt, k1, k2, k3, k4, t)
        for r in range(n_records):
            for _ in range(steps_per_record):
                _single_step(x, fm, dt, k1, k2, k3, k4, t)
            for i in range(n):
                out[r, i, m] = x[i]
    return out
