import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from closurelab.core import DelayDataset, DelayVector, make_rng
from closurelab.hermite import (
    ExtrapolationWarning,
    HermiteModel,
    design_matrix,
    fit_hermite,
    hermite_eval,
    hermite_table,
    total_degree_indices,
)


def dataset_from_arrays(flat, y, m=0):
    # windows of length 1: inputs_x carries everything, theta inputs empty-width
    n, d = flat.shape
    return DelayDataset(flat[:, None, :], np.zeros((n, 1, 0)), np.atleast_2d(y), m=0)


def dataset_xy(x_cols, th_cols, y):
    n = x_cols.shape[0]
    return DelayDataset(x_cols[:, None, :], th_cols[:, None, :], np.atleast_2d(y), m=0)


class TestHermiteEval:
    def test_degree_zero(self):
        assert hermite_eval(0, 3.7) == 1.0

    def test_degree_one(self):
        assert hermite_eval(1, 2.0) == 2.0

    def test_degree_two_at_zero(self):
        assert hermite_eval(2, 0.0) == pytest.approx(-1.0 / np.sqrt(2), abs=1e-15)

    def test_table_matches_scalar(self):
        x = np.linspace(-3, 3, 11)
        table = hermite_table(x, 8)
        for n in range(9):
            np.testing.assert_allclose(table[:, n], hermite_eval(n, x), atol=1e-13)

    def test_orthonormality_gauss_quadrature(self):
        # exact quadrature for polynomial degree <= 2*n_nodes - 1
        max_deg = 50
        nodes, weights = np.polynomial.hermite_e.hermegauss(max_deg + 1)
        weights = weights / np.sqrt(2.0 * np.pi)
        table = hermite_table(nodes, max_deg)
        gram = (table * weights[:, None]).T @ table
        np.testing.assert_allclose(gram, np.eye(max_deg + 1), atol=1e-10)


class TestIndices:
    def test_count_2d_cap50(self):
        mi = total_degree_indices((50, 50), 50)
        assert mi.shape == (1326, 2)  # (51*52)/2 pairs with i+j <= 50

    def test_count_6d_cap8(self):
        mi = total_degree_indices((8,) * 6, 8)
        assert mi.shape[0] == 3003  # C(14, 6)

    def test_respects_per_dim_caps(self):
        mi = total_degree_indices((1, 3), 4)
        assert mi[:, 0].max() == 1 and mi[:, 1].max() == 3


class TestFit:
    def test_constant_target(self):
        rng = make_rng(0)
        flat = rng.standard_normal((500, 2))
        y = np.full((500, 1), 2.5)
        model = fit_hermite(dataset_from_arrays(flat, y), (4, 4))
        assert model.coeffs[0, 0] == pytest.approx(2.5, abs=1e-9)
        assert np.max(np.abs(model.coeffs[1:, 0])) < 1e-10

    def test_linear_map_reproduced(self):
        rng = make_rng(1)
        flat = rng.standard_normal((800, 3))
        y = flat @ np.array([[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]]) + 0.7
        model = fit_hermite(dataset_from_arrays(flat, y), (2, 2, 2))
        pred = model.predict_flat(flat)
        np.testing.assert_allclose(pred, y, atol=1e-8)
        assert np.max(model.residual_variance) < 1e-16

    def test_projection_optimality_against_normal_equations(self):
        # brute-force oracle: dense normal equations without blocking
        rng = make_rng(2)
        flat = rng.standard_normal((300, 2))
        y = np.tanh(flat[:, :1]) + 0.3 * flat[:, 1:] ** 2
        ds = dataset_from_arrays(flat, y)
        model = fit_hermite(ds, (5, 5))
        z = (flat - model.mean) / model.scale
        phi = design_matrix(z, model.multi_indices)
        coeffs_oracle = np.linalg.lstsq(phi, y, rcond=None)[0]
        resid_fit = np.mean((phi @ model.coeffs - y) ** 2)
        resid_oracle = np.mean((phi @ coeffs_oracle - y) ** 2)
        assert resid_fit <= resid_oracle * (1 + 1e-6) + 1e-12
        # and no single basis function does better alone
        for b in range(phi.shape[1]):
            c = np.linalg.lstsq(phi[:, b:b + 1], y, rcond=None)[0]
            single = np.mean((phi[:, b:b + 1] @ c - y) ** 2)
            assert resid_fit <= single * (1 + 1e-6)

    def test_insufficient_data(self):
        rng = make_rng(3)
        flat = rng.standard_normal((5, 2))
        with pytest.raises(ValueError):
            fit_hermite(dataset_from_arrays(flat, np.zeros((5, 1))), (10, 10))

    def test_standardization_commutes(self):
        rng = make_rng(4)
        x = rng.standard_normal((400, 1)) * 3.0 + 1.0
        th = rng.standard_normal((400, 1)) * 0.5
        y = np.sin(x) + th
        ds = dataset_xy(x, th, y)
        model = fit_hermite(ds, (6, 6))
        flat = ds.flat_inputs()
        pre = (flat - model.mean) / model.scale
        ds_pre = dataset_from_arrays(pre, y)
        model_pre = fit_hermite(ds_pre, (6, 6), standardize=False)
        np.testing.assert_allclose(model_pre.predict_flat(pre),
                                   model.predict_flat(flat), atol=1e-12)


class TestPredict:
    def test_zero_coefficients(self):
        mi = total_degree_indices((3, 3), 3)
        model = HermiteModel((3, 3), 3, mi, np.zeros((mi.shape[0], 1)),
                             np.zeros(2), np.ones(2), 0, np.zeros(1))
        z = DelayVector(np.array([[0.4]]), np.array([[-1.2]]), 0)
        assert model.predict(z)[0] == 0.0

    def test_training_point_recovered(self):
        rng = make_rng(5)
        flat = rng.standard_normal((200, 2))
        y = flat[:, :1].copy()
        model = fit_hermite(dataset_from_arrays(flat, y), (3, 3))
        pred = model.predict_flat(flat[:5])
        np.testing.assert_allclose(pred, y[:5], atol=1e-6)

    def test_extrapolation_warning_and_finite(self):
        rng = make_rng(6)
        flat = rng.standard_normal((200, 2))
        model = fit_hermite(dataset_from_arrays(flat, flat[:, :1]), (4, 4))
        far = model.mean + 6.5 * model.scale
        with pytest.warns(ExtrapolationWarning):
            out = model.predict_flat(far[None, :])
        assert np.all(np.isfinite(out))
        # matches direct series evaluation at the same point
        z = (far - model.mean) / model.scale
        direct = sum(model.coeffs[b, 0]
                     * hermite_eval(int(model.multi_indices[b, 0]), z[0])
                     * hermite_eval(int(model.multi_indices[b, 1]), z[1])
                     for b in range(model.n_basis))
        assert out[0, 0] == pytest.approx(direct, rel=1e-10)

    def test_dimension_mismatch(self):
        rng = make_rng(7)
        flat = rng.standard_normal((100, 2))
        model = fit_hermite(dataset_from_arrays(flat, flat[:, :1]), (2, 2))
        with pytest.raises(ValueError):
            model.predict_flat(np.zeros((1, 3)))

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=15, deadline=None)
    def test_predict_batch_agrees_with_predict(self, seed):
        rng = make_rng(seed)
        x = rng.standard_normal((60, 2, 1))
        th = rng.standard_normal((60, 2, 1))
        y = x[:, -1, :] + th[:, -1, :]
        ds = DelayDataset(x, th, y, m=1)
        model = fit_hermite(ds, (2,) * 4)
        batch = model.predict_batch(x[:4], th[:4])
        for i in range(4):
            single = model.predict(DelayVector(x[i], th[i], 1))
            np.testing.assert_allclose(batch[i], single, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    rng = make_rng(8)
    flat = rng.standard_normal((300, 2))
    y = np.cos(flat[:, :1])
    model = fit_hermite(dataset_from_arrays(flat, y), (6, 6))
    model.save(tmp_path / "ck")
    back = HermiteModel.load(tmp_path / "ck")
    np.testing.assert_array_equal(back.coeffs, model.coeffs)
    np.testing.assert_array_equal(back.multi_indices, model.multi_indices)
    probe = rng.standard_normal((10, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        np.testing.assert_array_equal(back.predict_flat(probe),
                                      model.predict_flat(probe))
