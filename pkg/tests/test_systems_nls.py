import numpy as np
import pytest

from closurelab.core import make_rng
from closurelab.systems import nls


def brute_force_quartic(u_hat, K):
    """Independent oracle: the literal triple sum over retained modes."""
    idx = np.arange(-K, K + 1)
    total = 0.0 + 0.0j
    for i1, k1 in enumerate(idx):
        for i2, k2 in enumerate(idx):
            for i3, k3 in enumerate(idx):
                k4 = k1 + k2 - k3
                if abs(k4) > K:
                    continue
                total += (u_hat[i1] * u_hat[i2]
                          * np.conj(u_hat[i3]) * np.conj(u_hat[k4 + K]))
    return 0.5 * total.real


class TestHamiltonian:
    def test_quartic_grid_matches_brute_force(self):
        K = 4
        p = nls.NlsParams(K=K, kT=1.0)
        rng = make_rng(0)
        u = rng.standard_normal(2 * K + 1) + 1j * rng.standard_normal(2 * K + 1)
        _, e4 = nls.hamiltonian(u, p)
        assert e4 == pytest.approx(brute_force_quartic(u, K), rel=1e-12)

    def test_quadratic_part(self):
        p = nls.NlsParams(K=2, kT=1.0)
        u = np.array([0.0, 1.0, 0.0, 2.0, 0.5], dtype=complex)  # modes -2..2
        e2, _ = nls.hamiltonian(u, p)
        assert e2 == pytest.approx(1.0 * 1 + 4.0 * 1 + 0.25 * 4)


class TestSimulate:
    def test_single_mode_invariant_manifold(self):
        p = nls.NlsParams(K=8, dt_obs=0.02, dt_inner=0.002)
        r = 1.3
        u0 = np.zeros(p.n_modes, dtype=complex)
        u0[p.K] = r
        ts = nls.simulate(p, 51, u0)
        z = ts.to_complex()
        t_end = 50 * p.dt_obs
        assert z[-1, p.K] == pytest.approx(r * np.exp(-1j * r * r * t_end),
                                           abs=1e-10)
        off = np.delete(z[-1], p.K)
        assert np.max(np.abs(off)) < 1e-12

    def test_mass_conserved_long_run(self):
        p = nls.NlsParams(K=16, dt_obs=0.02, dt_inner=0.002)
        rng = make_rng(3)
        u0 = 0.5 * (rng.standard_normal(p.n_modes)
                    + 1j * rng.standard_normal(p.n_modes))
        ts = nls.simulate(p, 1001, u0)  # 10^4 inner steps
        z = ts.to_complex()
        m = np.sum(np.abs(z) ** 2, axis=1)
        assert np.max(np.abs(m - m[0])) / m[0] < 1e-10

    def test_energy_drift_against_halved_step(self):
        p = nls.NlsParams(K=32, dt_obs=0.02, dt_inner=0.002, kT=10.0)
        samples, _ = nls.gibbs_sample(p, seed=9, n_burn=30_000, n_thin=100)
        u0 = samples[0]
        n_obs = 501  # t in [0, 10]; drift is per-step so this bounds the rate
        ts = nls.simulate(p, n_obs, u0)
        e0 = sum(nls.hamiltonian(u0, p))
        e1 = sum(nls.hamiltonian(ts.to_complex()[-1], p))
        drift = abs(e1 - e0) / abs(e0)
        p_half = nls.NlsParams(K=32, dt_obs=0.02, dt_inner=0.001, kT=10.0)
        ts_half = nls.simulate(p_half, n_obs, u0)
        e1_half = sum(nls.hamiltonian(ts_half.to_complex()[-1], p_half))
        drift_half = abs(e1_half - e0) / abs(e0)
        assert drift < 5e-3
        # halving the inner step reduces the drift (second-order splitting)
        assert drift_half < drift


class TestGibbs:
    def test_low_temperature_concentration(self):
        p_cold = nls.NlsParams(K=8, kT=1e-3)
        p_hot = nls.NlsParams(K=8, kT=10.0)
        cold, _ = nls.gibbs_sample(p_cold, seed=1, n_burn=20_000, n_thin=50,
                                   n_samples=20)
        hot, _ = nls.gibbs_sample(p_hot, seed=1, n_burn=20_000, n_thin=50,
                                  n_samples=20)
        assert np.mean(np.abs(cold) ** 2) < 0.05 * np.mean(np.abs(hot) ** 2)

    def test_acceptance_rate_tuned(self):
        p = nls.NlsParams(K=16, kT=10.0)
        _, rate = nls.gibbs_sample(p, seed=2, n_burn=20_000, n_thin=50,
                                   n_samples=50)
        assert 0.1 <= rate <= 0.7

    def test_detailed_balance_identity(self):
        # unclipped acceptance ratios of a move and its reverse multiply to 1
        p = nls.NlsParams(K=4, kT=3.0)
        rng = make_rng(5)
        u = rng.standard_normal(p.n_modes) + 1j * rng.standard_normal(p.n_modes)
        v = u + 0.1 * (rng.standard_normal(p.n_modes)
                       + 1j * rng.standard_normal(p.n_modes))
        e_u = sum(nls.hamiltonian(u, p))
        e_v = sum(nls.hamiltonian(v, p))
        r_fwd = np.exp(-(e_v - e_u) / p.kT)
        r_rev = np.exp(-(e_u - e_v) / p.kT)
        assert r_fwd * r_rev == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.slow
    def test_energy_distribution_stable_under_longer_burn(self):
        p = nls.NlsParams(K=16, kT=10.0)
        a, _ = nls.gibbs_sample(p, seed=3, n_burn=40_000, n_thin=400,
                                n_samples=1500)
        b, _ = nls.gibbs_sample(p, seed=4, n_burn=80_000, n_thin=400,
                                n_samples=1500)

        def energies(samples):
            return np.array([sum(nls.hamiltonian(u, p)) / p.kT for u in samples])

        ea = np.sort(energies(a))
        eb = np.sort(energies(b))
        # two-sample Kolmogorov-Smirnov distance
        allv = np.concatenate([ea, eb])
        cdf_a = np.searchsorted(ea, allv, side="right") / len(ea)
        cdf_b = np.searchsorted(eb, allv, side="right") / len(eb)
        ks = np.max(np.abs(cdf_a - cdf_b))
        assert ks <= 0.05


class TestResolvedMap:
    def test_cubic_self_term(self):
        out = nls.resolved_rhs(np.array([2.0 + 0.0j]))
        assert out[0] == pytest.approx(-8.0j)

    def test_step_inverse_exact(self):
        p = nls.NlsParams(K=4)
        u0 = 0.8 - 0.3j
        th = -0.4 + 1.1j
        u1 = nls.resolved_step(p, u0, th)
        back = nls.invert_resolved_step(p, u0, u1)
        assert back == pytest.approx(th, abs=1e-12)
