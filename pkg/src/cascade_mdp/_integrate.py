"""Fixed-step classical Runge-Kutta helpers shared by the forward and backward solvers."""

import math

import numpy as np

from .errors import InvalidStep


def step_grid(t0, t1, dt):
    """Return the points t0, t0+dt, ... ending exactly at t1.

    A partial final step is appended when (t1 - t0) is not a multiple of dt.
    """
    if not dt > 0 or not math.isfinite(dt):
        raise InvalidStep(f"step must be positive and finite, got {dt!r}")
    if t1 < t0:
        raise InvalidStep(f"t1={t1} precedes t0={t0}")
    span = t1 - t0
    ratio = span / dt
    k = round(ratio)
    if abs(ratio - k) > 1e-9 * max(1.0, ratio):
        k = math.floor(ratio)
        grid = t0 + dt * np.arange(k + 1)
        return np.append(grid, t1)
    grid = t0 + dt * np.arange(k + 1)
    grid[-1] = t1
    return grid


def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(f, y0, grid, store=True):
    """Integrate y' = f(t, y) across ``grid`` (ascending or descending).

    Returns the array of states at every grid point when ``store`` is set,
    otherwise only the final state.
    """
    y = np.array(y0, dtype=float)
    out = np.empty((len(grid),) + y.shape) if store else None
    if store:
        out[0] = y
    for i in range(len(grid) - 1):
        t = grid[i]
        y = rk4_step(f, t, y, grid[i + 1] - t)
        if store:
            out[i + 1] = y
    return out if store else y
