#!/usr/bin/env python3
"""Reproduce the double-well metastability comparison.

Trains tensor-Hermite closures on two data sizes, runs both in closed loop
with sampled residual noise, and prints mean exit times and reaction rates
against the full model.
"""

import argparse
import warnings

import numpy as np

from closurelab.core import make_delay_dataset, make_rng
from closurelab.hermite import fit_hermite
from closurelab.identify import training_pair
from closurelab.predict import hermite_closed_loop
from closurelab.stats import mean_exit_time, reaction_rate
from closurelab.systems import langevin


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--truth-steps", type=int, default=5_000_000)
    ap.add_argument("--closure-steps", type=int, default=5_000_000)
    ap.add_argument("--sizes", type=int, nargs="+",
                    default=[50_000, 500_000])
    ap.add_argument("--degree", type=int, default=50)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    p = langevin.default_params()
    truth = langevin.simulate(p, args.truth_steps, seed=args.seed + 93)
    tau_true = mean_exit_time(truth.values[:, 0], dt=p.dt)
    nu_true = reaction_rate(truth.values[:, 0], dt=p.dt)
    print(f"full model      tau {tau_true:8.2f}   nu {nu_true:.5f}")

    for n in args.sizes:
        full = langevin.simulate(p, n, seed=args.seed)
        x, th = training_pair(full, "langevin", p)
        ds = make_delay_dataset(x, th, 0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = fit_hermite(ds, (args.degree, args.degree))
        noise = make_rng(args.seed + n).standard_normal(args.closure_steps)
        path = hermite_closed_loop(model, x.values[0, 0], th.values[0, 0],
                                   args.closure_steps, p.dt, noise)
        tau = mean_exit_time(path[:, 0], dt=p.dt)
        nu = reaction_rate(path[:, 0], dt=p.dt)
        print(f"closure N={n:<8d} tau {tau:8.2f}   nu {nu:.5f}   "
              f"ratios ({tau / tau_true:.3f}, {nu / nu_true:.3f})")


if __name__ == "__main__":
    main()
