"""Time-stepping kernels: Euler-Maruyama, RK4, explicit midpoint, and the
split-step update for cubic Schrodinger dynamics.

All steppers are pure functions of (state, noise); callers own the state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NumericalBlowupError


@dataclass(frozen=True)
class StepperConfig:
    scheme: str  # euler_maruyama | rk4 | midpoint | strang_nls
    dt: float
    noise: np.ndarray | None = None  # per-component amplitudes

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.noise is not None and np.any(np.asarray(self.noise) < 0):
            raise ValueError("noise amplitudes must be nonnegative")


def _check_finite(v: np.ndarray, what: str, step: int | None = None) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise NumericalBlowupError(f"non-finite {what}", step=step)
    return v


def euler_maruyama_step(state, drift, sigma, dt, noise, step: int | None = None):
    """state + drift(state)*dt + sigma * sqrt(dt) * noise (elementwise)."""
    state = np.asarray(state, dtype=np.float64)
    g = _check_finite(np.asarray(drift(state), dtype=np.float64), "drift output", step)
    return state + g * dt + np.asarray(sigma) * np.sqrt(dt) * np.asarray(noise)


def rk4_step(state, f, dt, step: int | None = None):
    """Classical fourth-order Runge-Kutta update."""
    k1 = np.asarray(f(state))
    k2 = np.asarray(f(state + 0.5 * dt * k1))
    k3 = np.asarray(f(state + 0.5 * dt * k2))
    k4 = np.asarray(f(state + dt * k3))
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _check_finite(out, "rk4 stage", step)


def midpoint_step(state, f, dt, step: int | None = None):
    """Explicit midpoint (second order): full step on the half-step slope."""
    k1 = np.asarray(f(state))
    out = state + dt * np.asarray(f(state + 0.5 * dt * k1))
    return _check_finite(out, "midpoint stage", step)


# ---------------------------------------------------------------------------
# Cubic Schrodinger split step.
#
# Spectra are stored over modes k = -K..K (length 2K+1, ascending).  The
# nonlinear substep is an exact pointwise phase rotation on the matching
# 2K+1-point collocation grid, so the discrete mass sum |u_k|^2 is conserved
# to rounding (the grid transform is unitary up to scaling and both substeps
# only rotate phases).
# ---------------------------------------------------------------------------


def nls_wavenumbers(K: int) -> np.ndarray:
    return np.arange(-K, K + 1, dtype=np.float64)


def spectrum_to_grid(u_hat: np.ndarray) -> np.ndarray:
    """Values of u(x) = sum_k u_k exp(ikx) on the 2K+1 uniform grid."""
    n = u_hat.shape[-1]
    return np.fft.ifft(np.fft.ifftshift(u_hat, axes=-1), axis=-1) * n


def grid_to_spectrum(u_grid: np.ndarray) -> np.ndarray:
    n = u_grid.shape[-1]
    return np.fft.fftshift(np.fft.fft(u_grid, axis=-1), axes=-1) / n


def strang_nls_step(u_hat: np.ndarray, dt: float) -> np.ndarray:
    """One split step: half linear phase, full nonlinear rotation, half phase."""
    u_hat = np.asarray(u_hat, dtype=np.complex128)
    n = u_hat.shape[-1]
    if n % 2 == 0:
        raise ValueError("spectrum length must be odd (modes -K..K)")
    k = nls_wavenumbers((n - 1) // 2)
    half = np.exp(-1j * k * k * dt / 2.0)
    u = u_hat * half
    ug = spectrum_to_grid(u)
    ug = ug * np.exp(-1j * np.abs(ug) ** 2 * dt)
    u = grid_to_spectrum(ug)
    return u * half


def nls_reduced_split_step(u0: complex, theta: complex, dt: float) -> complex:
    """Closure-side update for the lone resolved mode: linear substep driven by
    the feedback estimate, then the exact cubic rotation."""
    v = u0 - 1j * theta * dt
    return v * np.exp(-1j * np.abs(v) ** 2 * dt)
