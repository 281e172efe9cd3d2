"""Underdamped double-well particle: position x is resolved, velocity y is the
discarded variable and also the identifiable feedback (theta = y).

The potential -x^2/2 + x^4/4 has wells at x = +-1; with the default driving
strength the trajectory hops between them on a O(100) time scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..core import TimeSeries


@dataclass(frozen=True)
class LangevinParams:
    gamma: float = 1.0
    sigma_y: float = 3.0 * math.sqrt(2.0) / 10.0
    dt: float = 0.01

    def __post_init__(self):
        if self.gamma <= 0 or self.sigma_y < 0:
            raise ValueError("gamma must be positive and sigma_y nonnegative")


def default_params(**overrides) -> LangevinParams:
    return LangevinParams(**overrides)


def drift(x: float, y: float, p: LangevinParams) -> tuple[float, float]:
    """(dx/dt, dy/dt) without noise: velocity, then force minus damping."""
    return y, x - x ** 3 - p.gamma * y


@njit(cache=True)
def _simulate_kernel(n_steps, dt, gamma, sigma_y, x0, y0, seed):
    np.random.seed(seed)
    out = np.empty((n_steps, 2))
    noise = np.empty(n_steps)
    x, y = x0, y0
    out[0, 0] = x
    out[0, 1] = y
    noise[0] = 0.0
    amp = sigma_y * np.sqrt(dt)
    for t in range(1, n_steps):
        xi = np.random.normal(0.0, 1.0)
        x_new = x + y * dt
        y = y + (x - x ** 3 - gamma * y) * dt + amp * xi
        x = x_new
        out[t, 0] = x
        out[t, 1] = y
        noise[t] = xi
    return out, noise


def simulate(p: LangevinParams, n_steps: int, seed: int,
             x0: float = 1.0, y0: float = 0.0,
             return_noise: bool = False):
    """Euler-Maruyama path of (x, y); noise acts on y only.

    Sample 0 is the initial condition.  With return_noise the standard
    normal draws are handed back for paired-path experiments (noise[t] is
    the draw used in the update producing sample t).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    values, noise = _simulate_kernel(n_steps, p.dt, p.gamma, p.sigma_y,
                                     x0, y0, seed)
    if not np.all(np.isfinite(values)):
        raise RuntimeError("langevin path blew up")
    ts = TimeSeries(values, p.dt, ("x", "y"), seed)
    return (ts, noise) if return_noise else ts


def resolved_rhs(state, p: LangevinParams):
    """Feedback-free part of dx/dt; the entire velocity term is feedback."""
    return np.zeros_like(np.asarray(state, dtype=np.float64))


def resolved_step(p: LangevinParams, x, theta):
    """Coarse resolved map: x advances with the current feedback (velocity)."""
    return x + theta * p.dt


def invert_resolved_step(p: LangevinParams, x_t, x_next):
    """Feedback that the coarse map consumed between two samples."""
    return (x_next - x_t) / p.dt
