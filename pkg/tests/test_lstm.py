import numpy as np
import pytest

from closurelab.core import DelayDataset, DelayVector, make_rng
from closurelab.lstm import (
    LstmArch,
    LstmModel,
    TrainConfig,
    bptt_grad,
    init_params,
    lstm_cell,
    lstm_forward,
    mse_loss,
    train,
)


def zero_params(d_hidden, d_in, d_out):
    width = d_hidden + d_in
    return {
        "W_f": np.zeros((d_hidden, width)), "W_i": np.zeros((d_hidden, width)),
        "W_o": np.zeros((d_hidden, width)), "W_c": np.zeros((d_hidden, width)),
        "b_f": np.zeros(d_hidden), "b_i": np.zeros(d_hidden),
        "b_o": np.zeros(d_hidden), "b_c": np.zeros(d_hidden),
        "W_out": np.zeros((d_out, d_hidden)), "b_out": np.zeros(d_out),
    }


def synthetic_dataset(n, m, d_x, d_th, seed, target_fn):
    rng = make_rng(seed)
    x = rng.standard_normal((n, m + 1, d_x))
    th = rng.standard_normal((n, m + 1, d_th))
    y = target_fn(x, th)
    return DelayDataset(x, th, y, m)


class TestCell:
    def test_all_zero(self):
        p = zero_params(4, 2, 1)
        h, C = lstm_cell(np.zeros(4), np.zeros(4), np.zeros(2), p)
        np.testing.assert_array_equal(h, np.zeros(4))
        np.testing.assert_array_equal(C, np.zeros(4))

    def test_gate_algebra_unit_cell_state(self):
        p = zero_params(3, 2, 1)
        h, C = lstm_cell(np.zeros(3), np.ones(3), np.ones(2), p)
        np.testing.assert_allclose(C, 0.5 * np.ones(3), atol=1e-15)
        np.testing.assert_allclose(h, 0.5 * np.tanh(0.5) * np.ones(3), atol=1e-15)
        assert h[0] == pytest.approx(0.23105857863, abs=1e-10)

    def test_saturated_forget_gate(self):
        rng = make_rng(0)
        p = {k: rng.standard_normal(v.shape) * 0.3
             for k, v in zero_params(5, 3, 1).items()}
        p["b_f"] = np.full(5, 20.0)
        p["W_f"] = np.zeros_like(p["W_f"])
        h0, C0 = rng.standard_normal(5), rng.standard_normal(5)
        z = rng.standard_normal(3)
        _, C1 = lstm_cell(h0, C0, z, p)
        zcat = np.concatenate([h0, z])
        i = 1 / (1 + np.exp(-(zcat @ p["W_i"].T + p["b_i"])))
        g = np.tanh(zcat @ p["W_c"].T + p["b_c"])
        np.testing.assert_allclose(C1, C0 + i * g, atol=1e-8)

    def test_batched_matches_single(self):
        rng = make_rng(1)
        p = {k: rng.standard_normal(v.shape) * 0.4
             for k, v in zero_params(4, 3, 1).items()}
        h = rng.standard_normal((5, 4))
        C = rng.standard_normal((5, 4))
        z = rng.standard_normal((5, 3))
        hb, Cb = lstm_cell(h, C, z, p)
        for j in range(5):
            hs, Cs = lstm_cell(h[j], C[j], z[j], p)
            np.testing.assert_allclose(hb[j], hs, atol=1e-14)
            np.testing.assert_allclose(Cb[j], Cs, atol=1e-14)


class TestForward:
    def test_zero_weights_gives_readout_bias(self):
        p = zero_params(4, 2, 3)
        p["b_out"] = np.array([1.0, -2.0, 0.5])
        out = lstm_forward(p, np.ones((6, 5, 2)))
        np.testing.assert_allclose(out, np.tile(p["b_out"], (6, 1)), atol=1e-15)

    def test_m0_is_single_cell_plus_readout(self):
        rng = make_rng(2)
        p = {k: rng.standard_normal(v.shape) * 0.5
             for k, v in zero_params(6, 2, 2).items()}
        z = rng.standard_normal((1, 1, 2))
        out = lstm_forward(p, z)
        h, _ = lstm_cell(np.zeros(6), np.zeros(6), z[0, 0], p)
        np.testing.assert_allclose(out[0], h @ p["W_out"].T + p["b_out"], atol=1e-14)

    def test_order_sensitivity(self):
        ds = synthetic_dataset(400, 3, 1, 1, 3,
                               lambda x, th: th[:, -1, :] - 0.5 * th[:, 0, :])
        model = train(ds, TrainConfig(iterations=300, batch_size=32, seed=0,
                                      val_every=100), d_hidden=8)
        win = np.concatenate([ds.inputs_x[:1], ds.inputs_theta[:1]], axis=2)
        win_std = (win - model.mean) / model.scale
        out = lstm_forward(model.params, win_std)
        out_rev = lstm_forward(model.params, win_std[:, ::-1, :])
        assert abs(out[0, 0] - out_rev[0, 0]) > 1e-6


class TestLoss:
    def test_zero_when_exact(self):
        p = zero_params(3, 2, 1)
        p["b_out"] = np.array([0.7])
        win = np.zeros((4, 2, 2))
        assert mse_loss(p, win, np.full((4, 1), 0.7)) == 0.0

    def test_unit_targets_zero_model(self):
        p = zero_params(3, 2, 1)
        assert mse_loss(p, np.zeros((5, 2, 2)), np.ones((5, 1))) == 1.0

    def test_descent_under_small_gd_steps(self):
        rng = make_rng(4)
        p = {k: rng.standard_normal(v.shape) * 0.3
             for k, v in zero_params(5, 2, 1).items()}
        win = rng.standard_normal((10, 3, 2))
        y = rng.standard_normal((10, 1))
        losses = [mse_loss(p, win, y)]
        for _ in range(30):
            grads, _ = bptt_grad(p, win, y)
            for k in p:
                p[k] = p[k] - 0.05 * grads[k]
            losses.append(mse_loss(p, win, y))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


class TestGradient:
    def test_zero_model_zero_targets(self):
        p = zero_params(4, 2, 1)
        grads, loss = bptt_grad(p, np.zeros((6, 3, 2)), np.zeros((6, 1)))
        assert loss == 0.0
        for k in ("W_f", "W_i", "W_o", "W_c", "W_out", "b_out"):
            np.testing.assert_array_equal(grads[k], np.zeros_like(p[k]))

    def test_against_central_differences(self):
        rng = make_rng(5)
        p = {k: rng.standard_normal(v.shape) * 0.5
             for k, v in zero_params(6, 3, 2).items()}
        win = rng.standard_normal((4, 4, 3))
        y = rng.standard_normal((4, 2))
        grads, _ = bptt_grad(p, win, y)
        h = 1e-5
        names = sorted(p)
        checked = 0
        worst = 0.0
        while checked < 50:
            k = names[rng.integers(len(names))]
            idx = tuple(rng.integers(s) for s in p[k].shape)
            orig = p[k][idx]
            p[k][idx] = orig + h
            up = mse_loss(p, win, y)
            p[k][idx] = orig - h
            dn = mse_loss(p, win, y)
            p[k][idx] = orig
            fd = (up - dn) / (2 * h)
            bp = grads[k][idx]
            if max(abs(fd), abs(bp)) < 1e-10:
                continue
            rel = abs(fd - bp) / max(abs(fd), abs(bp))
            worst = max(worst, rel)
            checked += 1
        assert worst <= 1e-5

    def test_duplicated_batch_same_gradient(self):
        rng = make_rng(6)
        p = {k: rng.standard_normal(v.shape) * 0.4
             for k, v in zero_params(5, 2, 1).items()}
        win = rng.standard_normal((3, 2, 2))
        y = rng.standard_normal((3, 1))
        g1, _ = bptt_grad(p, win, y)
        g2, _ = bptt_grad(p, np.tile(win, (2, 1, 1)), np.tile(y, (2, 1)))
        for k in p:
            np.testing.assert_allclose(g1[k], g2[k], atol=1e-14)


class TestTrain:
    def test_linear_teacher(self):
        ds = synthetic_dataset(4000, 2, 1, 1, 7,
                               lambda x, th: 0.9 * th[:, -1, :])
        cfg = TrainConfig(iterations=2000, batch_size=128, learning_rate=1e-2,
                          seed=1, val_every=100)
        model = train(ds, cfg, d_hidden=32)
        best_val = min(v for _, _, v in model.training_log)
        assert best_val <= 1e-4, f"validation MSE {best_val}"
        assert np.all(model.residual_variance >= 0)

    def test_determinism(self):
        ds = synthetic_dataset(300, 1, 1, 1, 8, lambda x, th: th[:, -1, :])
        cfg = TrainConfig(iterations=60, batch_size=16, seed=3, val_every=20)
        a = train(ds, cfg, d_hidden=6)
        b = train(ds, cfg, d_hidden=6)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_divergence_aborts(self):
        from closurelab.lstm import TrainingDivergedError
        ds = synthetic_dataset(100, 1, 1, 1, 9, lambda x, th: th[:, -1, :] * 1e150)
        cfg = TrainConfig(iterations=200, batch_size=16, seed=0,
                          learning_rate=1e3, clip_norm=0.0, val_every=50)
        with pytest.raises((TrainingDivergedError, FloatingPointError)):
            with np.errstate(over="raise"):
                train(ds, cfg, d_hidden=4)

    def test_standardization_commutes(self):
        ds = synthetic_dataset(400, 1, 1, 1, 10,
                               lambda x, th: th[:, -1, :] * 2.0 + 1.0)
        cfg = TrainConfig(iterations=150, batch_size=32, seed=5, val_every=50)
        a = train(ds, cfg, d_hidden=6)
        win = np.concatenate([ds.inputs_x, ds.inputs_theta], axis=2)
        pre = (win - a.mean) / a.scale
        ds_pre = DelayDataset(pre[:, :, :1], pre[:, :, 1:], ds.targets, ds.m)
        b = train(ds_pre, cfg, d_hidden=6, standardize=False)
        pa = a.predict_batch(ds.inputs_x[:10], ds.inputs_theta[:10])
        pb = b.predict_batch(pre[:10, :, :1], pre[:10, :, 1:])
        np.testing.assert_allclose(pa, pb, atol=1e-10)

    def test_x_only_ablation_shapes(self):
        ds = synthetic_dataset(300, 2, 2, 1, 11, lambda x, th: th[:, -1, :])
        cfg = TrainConfig(iterations=50, batch_size=16, seed=0, val_every=25)
        model = train(ds, cfg, d_hidden=4, use_theta=False)
        assert model.arch.d_in == 2
        out = model.predict_batch(ds.inputs_x[:3], ds.inputs_theta[:3])
        assert out.shape == (3, 1)

    def test_validation_split_guard(self):
        ds = synthetic_dataset(2, 0, 1, 1, 12, lambda x, th: th[:, -1, :])
        with pytest.raises(ValueError):
            train(ds, TrainConfig(iterations=5, validation_fraction=0.9),
                  d_hidden=4)


def test_checkpoint_round_trip(tmp_path):
    ds = synthetic_dataset(300, 1, 1, 1, 13, lambda x, th: 0.5 * th[:, -1, :])
    cfg = TrainConfig(iterations=80, batch_size=16, seed=2, val_every=40)
    model = train(ds, cfg, d_hidden=5)
    model.save(tmp_path / "ck")
    back = LstmModel.load(tmp_path / "ck")
    for k in model.params:
        np.testing.assert_array_equal(back.params[k], model.params[k])
    z = DelayVector(ds.inputs_x[0], ds.inputs_theta[0], ds.m)
    np.testing.assert_array_equal(back.predict(z), model.predict(z))
    assert (tmp_path / "ck" / "training_log.csv").read_text().startswith(
        "iteration,train_loss,val_loss")
