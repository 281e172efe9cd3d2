"""Empirical verification of the convergence claims on the double-well system,
where the exact missing drift is known.

Two experiments:

* rate check - run the coarse stochastic closure whose drift estimate is the
  true drift plus a bounded perturbation of known amplitude, paired with the
  true discretization through shared noise; the strong error must grow
  linearly in the perturbation amplitude and at most quadratically in the
  horizon.
* horizon check - train the tensor-polynomial estimator on increasing data
  sizes and measure how long the closed-loop path tracks the true path under
  a shared noise realization before deviating by half the well separation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import make_delay_dataset, make_rng, substream
from .hermite import fit_hermite
from .identify import training_pair
from .predict import hermite_closed_loop
from .systems import langevin


@dataclass(frozen=True)
class RateExperiment:
    epsilons: tuple = (0.003, 0.01, 0.03, 0.1)
    t_grid: tuple = (25, 50, 100, 150, 200)
    dt: float = 0.01
    ensemble: int = 200
    seed: int = 0
    burn_steps: int = 10_000
    perturbation: str = "additive_bounded"

    def __post_init__(self):
        eps = np.asarray(self.epsilons, dtype=float)
        if eps.size < 4 or np.log10(eps.max() / eps.min()) < 1.5:
            raise ValueError("need >= 4 perturbation amplitudes spanning "
                             ">= 1.5 decades")


def _paired_max_dev(p, eps, t_max, x0, y0, noise):
    """Per-member running max |x_hat - x| under shared noise; returns the
    (B, t_max+1) running-max table."""
    dt = p.dt
    amp = p.sigma_y * np.sqrt(dt)
    x, y = x0.copy(), y0.copy()
    xh, yh = x0.copy(), y0.copy()
    dev = np.zeros((x0.shape[0], t_max + 1))
    for t in range(t_max):
        gx = x - x ** 3 - p.gamma * y
        x, y = x + y * dt, y + gx * dt + amp * noise[:, t]
        gxh = xh - xh ** 3 - p.gamma * yh + eps * np.sin(xh + yh)
        xh, yh = xh + yh * dt, yh + gxh * dt + amp * noise[:, t]
        dev[:, t + 1] = np.maximum(dev[:, t], np.abs(xh - x))
    return dev


def _equilibrium_batch(p, n, seed, burn_steps):
    rng = make_rng(seed)
    x = np.full(n, 1.0)
    y = np.zeros(n)
    amp = p.sigma_y * np.sqrt(p.dt)
    for _ in range(burn_steps):
        gx = x - x ** 3 - p.gamma * y
        x, y = x + y * p.dt, y + gx * p.dt + amp * rng.standard_normal(n)
    return x, y, rng


def _loglog_slope(xs, ys):
    return float(np.polyfit(np.log(np.asarray(xs, float)),
                            np.log(np.asarray(ys, float)), 1)[0])


def verify_strong_error_rates(exp: RateExperiment, p=None,
                              n_bootstrap: int = 200) -> dict:
    """Strong-error scaling of the perturbed paired closure.

    Returns slopes with bootstrap confidence intervals: eps_slope at the
    unit-time horizon and the growth exponent over the horizon grid at the
    middle perturbation amplitude.
    """
    p = p or langevin.default_params(dt=exp.dt)
    t_max = max(exp.t_grid)
    x0, y0, rng = _equilibrium_batch(p, exp.ensemble, exp.seed,
                                     exp.burn_steps)
    noise = rng.standard_normal((exp.ensemble, t_max))

    # sanity anchor: zero perturbation cancels exactly under shared noise
    dev0 = _paired_max_dev(p, 0.0, t_max, x0, y0, noise)
    zero_gap = float(dev0[:, -1].max())

    t_unit = min(exp.t_grid, key=lambda t: abs(t * p.dt - 1.0))
    tables = {}
    for eps in exp.epsilons:
        tables[eps] = _paired_max_dev(p, eps, t_max, x0, y0, noise)

    per_member_eps = np.stack([tables[e][:, t_unit] for e in exp.epsilons])
    eps_slope = _loglog_slope(exp.epsilons, per_member_eps.mean(axis=1))

    mid_eps = sorted(exp.epsilons)[len(exp.epsilons) // 2]
    per_member_t = np.stack([tables[mid_eps][:, t] for t in exp.t_grid])
    growth_exponent = _loglog_slope([t * p.dt for t in exp.t_grid],
                                    per_member_t.mean(axis=1))

    boot = make_rng(exp.seed + 1)
    bs_eps, bs_growth = [], []
    for _ in range(n_bootstrap):
        idx = boot.integers(0, exp.ensemble, exp.ensemble)
        bs_eps.append(_loglog_slope(exp.epsilons,
                                    per_member_eps[:, idx].mean(axis=1)))
        bs_growth.append(_loglog_slope([t * p.dt for t in exp.t_grid],
                                       per_member_t[:, idx].mean(axis=1)))
    ci = lambda v: (float(np.percentile(v, 2.5)), float(np.percentile(v, 97.5)))
    return {
        "zero_perturbation_gap": zero_gap,
        "eps_slope": eps_slope,
        "eps_slope_ci": ci(bs_eps),
        "growth_exponent": growth_exponent,
        "growth_exponent_ci": ci(bs_growth),
        "errors_vs_eps": dict(zip(exp.epsilons,
                                  per_member_eps.mean(axis=1).tolist())),
        "errors_vs_t": dict(zip(exp.t_grid,
                                per_member_t.mean(axis=1).tolist())),
    }


@dataclass(frozen=True)
class HorizonExperiment:
    n_grid: tuple = (50_000, 500_000)
    degrees: tuple = (50, 50)
    n_members: int = 20
    threshold: float = 0.5  # half the well separation
    t_max_units: float = 60.0
    seed: int = 0
    noise: str = "off"  # off: conditional-mean closure; realized: shared draws


def _first_crossing(dev: np.ndarray, threshold: float, dt: float) -> float:
    above = np.nonzero(dev > threshold)[0]
    return float(above[0] * dt) if above.size else float(dev.shape[0] * dt)


def prediction_horizons(exp: HorizonExperiment, p=None,
                        models: dict | None = None) -> dict:
    """Median tracking horizon per training size under shared noise.

    models: optionally reuse already fitted estimators keyed by n."""
    p = p or langevin.default_params()
    out = {}
    t_max = round(exp.t_max_units / p.dt)
    for i, n in enumerate(exp.n_grid):
        if models and n in models:
            model = models[n]
        else:
            full = langevin.simulate(p, n, seed=exp.seed + i)
            x, th = training_pair(full, "langevin", p)
            ds = make_delay_dataset(x, th, 0)
            model = fit_hermite(ds, exp.degrees)
        horizons = []
        for w in range(exp.n_members):
            rng = substream(exp.seed + 1000, w)
            seg, noise = langevin.simulate(
                p, t_max + 1, seed=int(rng.integers(2 ** 31)),
                x0=float(rng.normal(1.0, 0.4) * rng.choice([-1.0, 1.0])),
                y0=float(rng.normal(0.0, 0.3)), return_noise=True)
            draws = noise[1:] if exp.noise == "realized" else np.zeros(t_max)
            closure = hermite_closed_loop(
                model, seg.values[0, 0], seg.values[0, 1], t_max, p.dt,
                draws)
            m = min(closure.shape[0], seg.n_steps)
            dev = np.abs(closure[:m, 0] - seg.values[:m, 0])
            horizons.append(_first_crossing(dev, exp.threshold, p.dt))
        out[n] = {"median": float(np.median(horizons)),
                  "horizons": horizons,
                  "residual_variance": float(model.residual_variance[0])}
    return out
