import numpy as np
import pytest

from closurelab.hermite import HermiteModel, total_degree_indices
from closurelab.systems import langevin
from closurelab.theory import (
    HorizonExperiment,
    RateExperiment,
    prediction_horizons,
    verify_strong_error_rates,
)


def exact_map_model(p, resid):
    """Hand-built estimator equal to the true one-step velocity map.

    The map (1 - gamma dt) y + dt x - dt x^3 lies in the polynomial span, so
    its basis coefficients are known in closed form under the identity
    standardizer."""
    degrees = (3, 3)
    mi = total_degree_indices(degrees, 3)
    coeffs = np.zeros((mi.shape[0], 1))
    lookup = {tuple(a): i for i, a in enumerate(mi)}
    coeffs[lookup[(1, 0)], 0] = -2.0 * p.dt
    coeffs[lookup[(3, 0)], 0] = -np.sqrt(6.0) * p.dt
    coeffs[lookup[(0, 1)], 0] = 1.0 - p.gamma * p.dt
    return HermiteModel(degrees, 3, mi, coeffs, np.zeros(2), np.ones(2),
                        m=0, residual_variance=np.array([resid]))


class TestRateExperiment:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            RateExperiment(epsilons=(0.01, 0.02, 0.03))
        with pytest.raises(ValueError):
            RateExperiment(epsilons=(0.01, 0.02, 0.03, 0.05))

    def test_rates(self):
        res = verify_strong_error_rates(RateExperiment(ensemble=200, seed=3))
        assert res["zero_perturbation_gap"] <= 1e-12
        lo, hi = res["eps_slope_ci"]
        assert lo <= 1.0 + 0.2 and hi >= 1.0 - 0.2
        assert abs(res["eps_slope"] - 1.0) <= 0.2
        assert res["growth_exponent"] <= 2.5

    def test_error_monotone_in_eps(self):
        res = verify_strong_error_rates(RateExperiment(ensemble=100, seed=4))
        errs = [res["errors_vs_eps"][e] for e in sorted(res["errors_vs_eps"])]
        assert all(a < b for a, b in zip(errs, errs[1:]))


class TestHorizon:
    def test_oracle_model_tracks_full_length(self):
        p = langevin.default_params()
        model = exact_map_model(p, resid=p.sigma_y ** 2 * p.dt)
        exp = HorizonExperiment(n_grid=(1,), n_members=5, t_max_units=20.0,
                                seed=2, noise="realized")
        out = prediction_horizons(exp, p, models={1: model})
        assert out[1]["median"] == pytest.approx(20.0, abs=2 * p.dt)
        assert all(h >= 20.0 - p.dt for h in out[1]["horizons"])

    def test_exact_map_model_is_the_update(self):
        p = langevin.default_params()
        model = exact_map_model(p, resid=0.0)
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, y = rng.normal(size=2)
            pred = model.predict_flat(np.array([[x, y]]))[0, 0]
            want = y + (x - x ** 3 - p.gamma * y) * p.dt
            assert pred == pytest.approx(want, abs=1e-12)
