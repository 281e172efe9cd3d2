"""Extraction of the identifiable feedback series from resolved trajectories,
and residual-variance estimation for the closure noise.

Three extraction routes:

* exact        - the feedback is a known function of recorded state (mean-flow
                 stress from the vorticity modes; velocity observed directly);
* subtraction  - algebraic inversion of the system's discrete resolved map
                 between consecutive samples;
* finite difference - forward difference of the resolved series minus the
                 feedback-free continuous tendency, mapped through the
                 system's feedback placement.

The forward difference is adjoint to an explicit Euler update, so driving
that update with the extracted series reproduces the source samples to
rounding; the matching property for subtraction holds with the system's own
coarse map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DelayDataset, TimeSeries, interleaved_to_complex
from .systems import get_module, kse as kse_mod, langevin as lang_mod
from .systems import nls as nls_mod, topo as topo_mod

SUBTRACTION_SYSTEMS = ("langevin", "topo", "nls")
FD_SYSTEMS = ("langevin", "topo", "nls", "kse")


class NonAdditiveSystemError(ValueError):
    """The system has no cleanly invertible one-step resolved map."""


@dataclass(frozen=True)
class ThetaSeries:
    series: TimeSeries
    method: str  # exact | subtraction | finite_difference_fit

    @property
    def values(self) -> np.ndarray:
        return self.series.values


def resolved_series(full: TimeSeries, system_id: str, params) -> TimeSeries:
    """Project a recorded full-state series onto the resolved variables."""
    if system_id == "langevin":
        return TimeSeries(full.values[:, :1], full.dt, ("x",), full.seed)
    if system_id == "topo":
        return TimeSeries(full.values[:, :1], full.dt, ("u",), full.seed)
    if system_id == "nls":
        k0 = params.K  # zeroth mode sits in the middle of -K..K
        cols = full.values[:, 2 * k0:2 * k0 + 2]
        return TimeSeries(cols, full.dt, ("u0.re", "u0.im"), full.seed)
    if system_id == "kse":
        n = params.resolved_modes
        return TimeSeries(full.values[:, :2 * n], full.dt,
                          full.var_names[:2 * n] if full.var_names else (),
                          full.seed)
    raise KeyError(system_id)


def extract_theta_exact(full: TimeSeries, system_id: str, params) -> ThetaSeries:
    """Feedback evaluated from recorded state, where it is a known function."""
    if system_id == "langevin":
        th = full.values[:, 1:2]
        return ThetaSeries(TimeSeries(th, full.dt, ("theta",), full.seed),
                           "exact")
    if system_id == "topo":
        w = topo_mod.reps_from_series(full)
        th = topo_mod.theta_from_reps(w, params)[:, None]
        return ThetaSeries(TimeSeries(th, full.dt, ("theta",), full.seed),
                           "exact")
    raise NonAdditiveSystemError(
        f"{system_id}: feedback is not a recorded function of state")


def _complex_resolved(x: TimeSeries) -> np.ndarray:
    return interleaved_to_complex(x.values)


def extract_theta_subtraction(x: TimeSeries, system_id: str, params
                              ) -> ThetaSeries:
    """Invert the discrete resolved map between consecutive samples.

    Defined for t = 0 .. N-2; the last sample has no successor and is
    dropped.  Exact (to rounding) when the data were produced by the coarse
    map itself; on finely integrated data the map mismatch and any resolved
    noise fold into the extracted series.
    """
    if system_id not in SUBTRACTION_SYSTEMS:
        raise NonAdditiveSystemError(
            f"{system_id}: one-step resolved map is not invertible in the "
            "feedback")
    v = x.values
    if system_id == "langevin":
        th = lang_mod.invert_resolved_step(params, v[:-1, 0], v[1:, 0])[:, None]
        names = ("theta",)
    elif system_id == "topo":
        th = topo_mod.invert_resolved_step(params, v[:-1, 0], v[1:, 0])[:, None]
        names = ("theta",)
    else:  # nls
        z = _complex_resolved(x)[:, 0]
        tc = nls_mod.invert_resolved_step(params, z[:-1], z[1:])
        th = np.column_stack([tc.real, tc.imag])
        names = ("theta.re", "theta.im")
    return ThetaSeries(TimeSeries(th, x.dt, names, x.seed), "subtraction")


def extract_theta_fd(x: TimeSeries, system_id: str, params) -> ThetaSeries:
    """Forward difference of the resolved series minus the feedback-free
    tendency, mapped through the system's feedback placement."""
    if system_id not in FD_SYSTEMS:
        raise NonAdditiveSystemError(system_id)
    if x.n_steps < 3:
        raise ValueError("need at least 3 samples for a difference fit")
    dt = x.dt
    if system_id in ("langevin", "topo"):
        v = x.values[:, 0]
        fd = (v[1:] - v[:-1]) / dt
        base = get_module(system_id).resolved_rhs(v[:-1], params)
        th = (fd - base)[:, None]
        names = ("theta",)
    elif system_id == "nls":
        z = _complex_resolved(x)[:, 0]
        fd = (z[1:] - z[:-1]) / dt
        tc = 1j * fd - np.abs(z[:-1]) ** 2 * z[:-1]
        th = np.column_stack([tc.real, tc.imag])
        names = ("theta.re", "theta.im")
    else:  # kse
        z = _complex_resolved(x)
        fd = (z[1:] - z[:-1]) / dt
        tc = fd - kse_mod.resolved_rhs(z[:-1], params)
        th = np.empty((tc.shape[0], 2 * tc.shape[1]))
        th[:, 0::2] = tc.real
        th[:, 1::2] = tc.imag
        names = tuple(f"theta{k}.{p}" for k in range(1, tc.shape[1] + 1)
                      for p in ("re", "im"))
    return ThetaSeries(TimeSeries(th, dt, names, x.seed),
                       "finite_difference_fit")


def reinsert(x: TimeSeries, theta: ThetaSeries, system_id: str, params
             ) -> np.ndarray:
    """Drive the discrete map adjoint to the extraction with the extracted
    feedback, starting from the first sample; returns the reconstructed
    resolved values aligned with x."""
    n = theta.values.shape[0] + 1
    if theta.method == "subtraction":
        step = get_module(system_id).resolved_step
        if system_id == "nls":
            z = _complex_resolved(x)[:, 0]
            thc = interleaved_to_complex(theta.values)[:, 0]
            out = np.empty(n, dtype=np.complex128)
            out[0] = z[0]
            for t in range(n - 1):
                out[t + 1] = step(params, out[t], thc[t])
            return np.column_stack([out.real, out.imag])
        out = np.empty((n, 1))
        out[0, 0] = x.values[0, 0]
        for t in range(n - 1):
            out[t + 1, 0] = step(params, out[t, 0], theta.values[t, 0])
        return out
    # finite differences pair with the explicit Euler update
    dt = x.dt
    if system_id == "nls":
        z0 = _complex_resolved(x)[0, 0]
        thc = interleaved_to_complex(theta.values)[:, 0]
        out = np.empty(n, dtype=np.complex128)
        out[0] = z0
        for t in range(n - 1):
            out[t + 1] = out[t] + dt * (-1j) * (np.abs(out[t]) ** 2 * out[t]
                                                + thc[t])
        return np.column_stack([out.real, out.imag])
    if system_id == "kse":
        z0 = _complex_resolved(x)[0]
        thc = interleaved_to_complex(theta.values)
        out = np.empty((n, z0.shape[0]), dtype=np.complex128)
        out[0] = z0
        for t in range(n - 1):
            out[t + 1] = out[t] + dt * (kse_mod.resolved_rhs(out[t], params)
                                        + thc[t])
        flat = np.empty((n, 2 * z0.shape[0]))
        flat[:, 0::2] = out.real
        flat[:, 1::2] = out.imag
        return flat
    base = get_module(system_id).resolved_rhs
    out = np.empty((n, 1))
    out[0, 0] = x.values[0, 0]
    for t in range(n - 1):
        out[t + 1, 0] = out[t, 0] + dt * (base(out[t, 0], params)
                                          + theta.values[t, 0])
    return out


def training_pair(full: TimeSeries, system_id: str, params,
                  method: str = "default") -> tuple[TimeSeries, TimeSeries]:
    """Aligned (resolved, feedback) series ready for window construction.

    Default extraction per system: directly recorded feedback where the state
    carries it (velocity; mean-flow stress), difference fitting for the
    spectral truncations.
    """
    x = resolved_series(full, system_id, params)
    if method == "default":
        method = {"langevin": "exact", "topo": "exact",
                  "nls": "finite_difference_fit",
                  "kse": "finite_difference_fit"}[system_id]
    if method == "exact":
        th = extract_theta_exact(full, system_id, params)
    elif method == "subtraction":
        th = extract_theta_subtraction(x, system_id, params)
    elif method == "finite_difference_fit":
        th = extract_theta_fd(x, system_id, params)
    else:
        raise ValueError(f"unknown extraction method {method!r}")
    n = th.values.shape[0]
    x_aligned = TimeSeries(x.values[:n], x.dt, x.var_names, x.seed)
    return x_aligned, th.series


def residual_variance(estimator, data: DelayDataset, block: int = 4096
                      ) -> np.ndarray:
    """Monte-Carlo mean of squared prediction residuals per output."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    targets = np.atleast_2d(data.targets)
    sq = np.zeros(targets.shape[1])
    for lo in range(0, len(data), block):
        pred = estimator.predict_batch(data.inputs_x[lo:lo + block],
                                       data.inputs_theta[lo:lo + block])
        r = pred - targets[lo:lo + block]
        sq += np.sum(r * r, axis=0)
    return sq / len(data)
