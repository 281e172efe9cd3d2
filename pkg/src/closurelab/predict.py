"""Closed-loop integration of closure models.

Each step advances the resolved variables with the system's coarse map driven
by the current feedback estimate, then predicts the next feedback value from
the sliding history window.  Optional noise surfaces:

* xi  - Gaussian residual noise on the feedback update, variance taken from
        the trained estimator;
* eta - the resolved-equation noise of the topographic system.

Policies: "off", "sampled" (fresh draws from a seeded stream), "realized"
(caller-provided standard-normal series, scaled by the respective amplitude
inside the loop).  On numerical blowup the valid prefix is returned together
with the blowup index; downstream skill metrics consume partial paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import TimeSeries, interleaved_to_complex, make_rng
from .systems import kse as kse_mod
from .systems import langevin as lang_mod
from .systems import nls as nls_mod
from .systems import topo as topo_mod


@dataclass
class ClosureRun:
    system_id: str
    params: object
    estimator: object
    t_steps: int
    x_hist0: np.ndarray      # (m+1, d_x) in the real storage layout
    theta_hist0: np.ndarray  # (m+1, d_theta)
    xi_policy: str = "off"
    eta_policy: str = "off"
    seed: int = 0
    xi_realized: np.ndarray | None = None   # (t_steps, d_theta) std normals
    eta_realized: np.ndarray | None = None  # (t_steps,) std normals

    def __post_init__(self):
        self.x_hist0 = np.atleast_2d(np.asarray(self.x_hist0, dtype=np.float64))
        self.theta_hist0 = np.atleast_2d(
            np.asarray(self.theta_hist0, dtype=np.float64))
        m = self.estimator.m
        if self.x_hist0.shape[0] != m + 1 or self.theta_hist0.shape[0] != m + 1:
            raise ValueError(f"initial history must hold m+1={m + 1} states")
        if self.t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        for policy, name in ((self.xi_policy, "xi"), (self.eta_policy, "eta")):
            if policy not in ("off", "sampled", "realized"):
                raise ValueError(f"unknown {name} policy {policy!r}")
        if self.xi_policy == "realized" and self.xi_realized is None:
            raise ValueError("xi_policy='realized' needs xi_realized")
        if self.eta_policy == "realized" and self.eta_realized is None:
            raise ValueError("eta_policy='realized' needs eta_realized")


@dataclass
class ClosureResult:
    x: TimeSeries
    theta: TimeSeries
    blowup_step: int | None = None


def _rollout_eval(estimator):
    """Closed loops prefer the guarded evaluation when an estimator offers
    one (polynomial models clamp to their training box); bounded estimators
    fall back to the plain batch prediction."""
    return getattr(estimator, "predict_batch_guarded", estimator.predict_batch)


def _advance(system_id, params, x_row, th_row, eta):
    if system_id == "langevin":
        return x_row + th_row * params.dt
    if system_id == "topo":
        return np.array([topo_mod.resolved_step(params, x_row[0], th_row[0],
                                                eta)])
    if system_id == "nls":
        u = x_row[0] + 1j * x_row[1]
        th = th_row[0] + 1j * th_row[1]
        out = nls_mod.resolved_step(params, u, th)
        return np.array([out.real, out.imag])
    if system_id == "kse":
        v = x_row[0::2] + 1j * x_row[1::2]
        th = th_row[0::2] + 1j * th_row[1::2]
        out = kse_mod.resolved_step(params, v, th)
        flat = np.empty_like(x_row)
        flat[0::2] = out.real
        flat[1::2] = out.imag
        return flat
    raise KeyError(system_id)


def closed_loop_run(run: ClosureRun) -> ClosureResult:
    """Single closure trajectory; sample 0 is the newest initial history entry."""
    est = run.estimator
    params = run.params
    rng = make_rng(run.seed)
    resid_std = np.sqrt(np.asarray(est.residual_variance, dtype=np.float64))

    xh = run.x_hist0.copy()
    th = run.theta_hist0.copy()
    d_x = xh.shape[1]
    d_th = th.shape[1]
    xs = np.empty((run.t_steps + 1, d_x))
    ths = np.empty((run.t_steps + 1, d_th))
    xs[0] = xh[-1]
    ths[0] = th[-1]
    blowup = None
    dt = getattr(params, "dt_obs", getattr(params, "dt", None))

    for t in range(run.t_steps):
        if run.eta_policy == "sampled":
            eta = rng.standard_normal()
        elif run.eta_policy == "realized":
            eta = float(run.eta_realized[t])
        else:
            eta = 0.0
        x_next = _advance(run.system_id, params, xh[-1], th[-1], eta)

        th_next = np.asarray(_rollout_eval(est)(xh[None], th[None])[0],
                             dtype=np.float64)
        if run.xi_policy == "sampled":
            th_next = th_next + resid_std * rng.standard_normal(d_th)
        elif run.xi_policy == "realized":
            th_next = th_next + resid_std * run.xi_realized[t]

        if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(th_next))):
            blowup = t + 1
            xs = xs[:t + 1]
            ths = ths[:t + 1]
            break
        xs[t + 1] = x_next
        ths[t + 1] = th_next
        xh = np.vstack([xh[1:], x_next])
        th = np.vstack([th[1:], th_next])

    return ClosureResult(TimeSeries(xs, dt, seed=run.seed),
                         TimeSeries(ths, dt, seed=run.seed), blowup)


def ensemble_closed_loop(system_id, params, estimator, x_hist0, theta_hist0,
                         t_steps, xi_policy="off", seed=0):
    """Batched closure rollout over an ensemble of initial histories.

    x_hist0: (B, m+1, d_x); returns (B, t_steps+1, d_x) resolved paths (full
    ensembles always run to completion; non-finite members are frozen at
    their last valid state and reported).
    """
    est = estimator
    rng = make_rng(seed)
    resid_std = np.sqrt(np.asarray(est.residual_variance, dtype=np.float64))
    xh = np.array(x_hist0, dtype=np.float64)
    th = np.array(theta_hist0, dtype=np.float64)
    b, _, d_x = xh.shape
    d_th = th.shape[2]
    out = np.empty((b, t_steps + 1, d_x))
    out[:, 0] = xh[:, -1]
    alive = np.ones(b, dtype=bool)

    predictor = _rollout_eval(est)
    for t in range(t_steps):
        x_next = _advance_batch(system_id, params, xh[:, -1], th[:, -1])
        th_next = np.asarray(predictor(xh, th), dtype=np.float64)
        if xi_policy == "sampled":
            th_next = th_next + resid_std * rng.standard_normal((b, d_th))
        ok = (np.all(np.isfinite(x_next), axis=1)
              & np.all(np.isfinite(th_next), axis=1))
        newly_dead = alive & ~ok
        if np.any(newly_dead):
            x_next[newly_dead] = xh[newly_dead, -1]
            th_next[newly_dead] = th[newly_dead, -1]
            alive = alive & ok
        out[:, t + 1] = x_next
        xh = np.concatenate([xh[:, 1:], x_next[:, None, :]], axis=1)
        th = np.concatenate([th[:, 1:], th_next[:, None, :]], axis=1)
    return out, alive


def _advance_batch(system_id, params, x_rows, th_rows):
    if system_id == "langevin":
        return x_rows + th_rows * params.dt
    if system_id == "kse":
        v = x_rows[:, 0::2] + 1j * x_rows[:, 1::2]
        th = th_rows[:, 0::2] + 1j * th_rows[:, 1::2]
        nxt = kse_mod.resolved_step(params, v, th)
        flat = np.empty_like(x_rows)
        flat[:, 0::2] = nxt.real
        flat[:, 1::2] = nxt.imag
        return flat
    if system_id == "nls":
        u = x_rows[:, 0] + 1j * x_rows[:, 1]
        th = th_rows[:, 0] + 1j * th_rows[:, 1]
        nxt = nls_mod.resolved_step(params, u, th)
        return np.column_stack([nxt.real, nxt.imag])
    if system_id == "topo":
        u = x_rows[:, 0]
        nxt = topo_mod.resolved_step(params, u, th_rows[:, 0], 0.0)
        return nxt[:, None]
    raise KeyError(system_id)


def recover_eta(u: TimeSeries, theta: TimeSeries, p) -> np.ndarray:
    """Invert the coarse mean-flow map for the noise realization that the
    verification path consumed; entry t is the draw producing sample t+1."""
    if p.sigma == 0:
        raise ValueError("noise amplitude is zero; nothing to recover")
    uv = u.values[:, 0]
    tv = theta.values[:, 0]
    n = min(uv.shape[0] - 1, tv.shape[0])
    d = p.dt_obs
    pred = uv[:n] + d * tv[:n] - d * p.damping * (uv[:n] - p.u_eq)
    return (uv[1:n + 1] - pred) / (np.sqrt(d) * p.sigma / np.sqrt(p.mu))


def sample_xi(estimator, rng: np.random.Generator) -> np.ndarray:
    """One residual-noise draw: zero mean, diagonal trained variance."""
    resid = np.asarray(estimator.residual_variance, dtype=np.float64)
    return np.sqrt(resid) * rng.standard_normal(resid.shape[0])


def theta_noise_ratio(theta_values: np.ndarray, p) -> float:
    """Variance of the feedback-space image of one observation step of
    vorticity forcing, relative to the variance of the feedback itself.

    Large separation justifies running the closure without residual noise."""
    t = topo_mod.tables(p)
    var_noise = float(np.sum(
        t.theta_coef ** 2 * np.abs(t.h_rep) ** 2
        * t.sigma_k ** 2 * p.dt_obs / 2.0))
    var_theta = float(np.var(np.asarray(theta_values).ravel()))
    return var_noise / var_theta


# ---------------------------------------------------------------------------
# Fast path: scalar double-well closure with a 2-d tensor-polynomial
# estimator, used for metastability statistics over millions of steps.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _hermite_closed_loop_kernel(x0, y0, n_steps, dt, mean, scale, deg_i,
                                deg_j, coefs, max_deg, noise, resid_std,
                                z_lo, z_hi):
    he_x = np.empty(max_deg + 1)
    he_y = np.empty(max_deg + 1)
    out = np.empty((n_steps + 1, 2))
    x, y = x0, y0
    out[0, 0] = x
    out[0, 1] = y
    for t in range(n_steps):
        zx = min(max((x - mean[0]) / scale[0], z_lo[0]), z_hi[0])
        zy = min(max((y - mean[1]) / scale[1], z_lo[1]), z_hi[1])
        he_x[0] = 1.0
        he_y[0] = 1.0
        if max_deg >= 1:
            he_x[1] = zx
            he_y[1] = zy
        for k in range(1, max_deg):
            he_x[k + 1] = (zx * he_x[k] - np.sqrt(k) * he_x[k - 1]) / np.sqrt(k + 1.0)
            he_y[k + 1] = (zy * he_y[k] - np.sqrt(k) * he_y[k - 1]) / np.sqrt(k + 1.0)
        acc = 0.0
        for b in range(deg_i.shape[0]):
            acc += coefs[b] * he_x[deg_i[b]] * he_y[deg_j[b]]
        x_new = x + y * dt
        y = acc + resid_std * noise[t]
        x = x_new
        if not (np.isfinite(x) and np.isfinite(y)):
            return out[:t + 1]
        out[t + 1, 0] = x
        out[t + 1, 1] = y
    return out


def hermite_closed_loop(model, x0, y0, n_steps, dt, noise):
    """Double-well closure rollout with the tensor-polynomial estimator.

    noise: (n_steps,) standard normals (zeros for a deterministic run);
    scaled inside by the trained residual standard deviation."""
    if model.input_dim != 2 or model.output_dim != 1:
        raise ValueError("needs the 2-input, 1-output estimator")
    deg = model.multi_indices
    resid_std = float(np.sqrt(model.residual_variance[0]))
    z_lo, z_hi = model.guard_bounds()
    return _hermite_closed_loop_kernel(
        float(x0), float(y0), n_steps, dt, model.mean, model.scale,
        deg[:, 0].astype(np.int64), deg[:, 1].astype(np.int64),
        np.ascontiguousarray(model.coeffs[:, 0]),
        int(deg.max()), np.asarray(noise, dtype=np.float64), resid_std,
        z_lo, z_hi)
