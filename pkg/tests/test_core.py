import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from closurelab.core import (
    AlignmentError,
    DelayVector,
    InsufficientDataError,
    TimeSeries,
    complex_to_interleaved,
    flatten_delay,
    interleaved_to_complex,
    make_delay_dataset,
    make_rng,
    read_mdts1,
    substream,
    unflatten_delay,
    write_mdts1,
)


def series(n, d=1, dt=0.1, seed=0):
    rng = make_rng(seed)
    return TimeSeries(rng.standard_normal((n, d)), dt, seed=seed)


class TestTimeSeries:
    def test_basic_shape(self):
        ts = series(10, 3)
        assert ts.n_steps == 10 and ts.n_vars == 3
        assert ts.duration == pytest.approx(0.9)

    def test_rejects_nonfinite(self):
        with pytest.raises(Exception):
            TimeSeries(np.array([[1.0], [np.nan]]), 0.1)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            TimeSeries(np.zeros((3, 1)), 0.0)

    def test_complex_round_trip(self):
        rng = make_rng(3)
        z = rng.standard_normal((7, 4)) + 1j * rng.standard_normal((7, 4))
        ts = TimeSeries.from_complex(z, 0.05)
        assert ts.n_vars == 8
        np.testing.assert_array_equal(ts.to_complex(), z)


class TestDelayDataset:
    def test_count_m0(self):
        x = series(5, seed=1)
        th = series(5, seed=2)
        ds = make_delay_dataset(x, th, 0)
        assert len(ds) == 4
        np.testing.assert_array_equal(ds.inputs_x[0, 0], x.values[0])
        np.testing.assert_array_equal(ds.inputs_theta[0, 0], th.values[0])
        np.testing.assert_array_equal(ds.targets[0], th.values[1])

    def test_count_matches_window_formula(self):
        ds = make_delay_dataset(series(100, seed=1), series(100, seed=2), 19)
        assert len(ds) == 80

    def test_single_pair_boundary(self):
        x, th = series(21, seed=1), series(21, seed=2)
        ds = make_delay_dataset(x, th, 19)
        assert len(ds) == 1
        np.testing.assert_array_equal(ds.inputs_x[0], x.values[0:20])
        np.testing.assert_array_equal(ds.targets[0], th.values[20])

    def test_target_is_one_past_newest(self):
        x, th = series(50, seed=3), series(50, seed=4)
        ds = make_delay_dataset(x, th, 5)
        for i in [0, 7, len(ds) - 1]:
            s = i + 5  # newest index in window i
            np.testing.assert_array_equal(ds.inputs_theta[i, -1], th.values[s])
            np.testing.assert_array_equal(ds.targets[i], th.values[s + 1])

    def test_alignment_errors(self):
        with pytest.raises(AlignmentError):
            make_delay_dataset(series(5), series(6), 0)
        with pytest.raises(AlignmentError):
            make_delay_dataset(series(5, dt=0.1), series(5, dt=0.2), 0)

    def test_m_too_large(self):
        with pytest.raises(InsufficientDataError):
            make_delay_dataset(series(5), series(5), 4)

    @given(n=st.integers(4, 40), m=st.integers(0, 5), k=st.integers(1, 3))
    @settings(max_examples=30, deadline=None)
    def test_shift_equivariance(self, n, m, k):
        if m > n - 2 - k:
            return
        x, th = series(n, seed=10), series(n, seed=11)
        full = make_delay_dataset(x, th, m)
        xs = TimeSeries(x.values[k:], x.dt)
        ths = TimeSeries(th.values[k:], th.dt)
        shifted = make_delay_dataset(xs, ths, m)
        np.testing.assert_array_equal(shifted.targets, full.targets[k:])
        np.testing.assert_array_equal(shifted.inputs_x, full.inputs_x[k:])


class TestFlatten:
    def test_complex_480(self):
        rng = make_rng(0)
        x = rng.standard_normal((20, 6)) + 1j * rng.standard_normal((20, 6))
        th = rng.standard_normal((20, 6)) + 1j * rng.standard_normal((20, 6))
        z = DelayVector(x, th, 19)
        assert flatten_delay(z).shape == (480,)

    def test_scalar_m0(self):
        z = DelayVector(np.array([[1.5]]), np.array([[-2.0]]), 0)
        np.testing.assert_array_equal(flatten_delay(z), [1.5, -2.0])

    def test_scalar_m19(self):
        z = DelayVector(np.arange(20.0)[:, None], np.arange(20.0, 40.0)[:, None], 19)
        flat = flatten_delay(z)
        assert flat.shape == (40,)
        # time-major, x before theta
        np.testing.assert_array_equal(flat[:4], [0.0, 20.0, 1.0, 21.0])

    @given(m=st.integers(0, 4), dx=st.integers(1, 3), dth=st.integers(1, 3),
           cx=st.booleans(), cth=st.booleans(), seed=st.integers(0, 2**16))
    @settings(max_examples=50, deadline=None)
    def test_round_trip(self, m, dx, dth, cx, cth, seed):
        rng = make_rng(seed)

        def draw(d, cplx):
            a = rng.standard_normal((m + 1, d))
            return a + 1j * rng.standard_normal((m + 1, d)) if cplx else a

        z = DelayVector(draw(dx, cx), draw(dth, cth), m)
        back = unflatten_delay(flatten_delay(z), m, dx, dth, cx, cth)
        np.testing.assert_array_equal(back.x_hist, z.x_hist)
        np.testing.assert_array_equal(back.theta_hist, z.theta_hist)

    def test_flat_inputs_matches_flatten(self):
        x, th = series(30, 2, seed=5), series(30, 3, seed=6)
        ds = make_delay_dataset(x, th, 3)
        flat = ds.flat_inputs()
        for i in [0, 4, len(ds) - 1]:
            np.testing.assert_array_equal(flat[i], flatten_delay(ds.vector(i)))


class TestRng:
    def test_reproducible(self):
        a = make_rng(42).standard_normal(100)
        b = make_rng(42).standard_normal(100)
        np.testing.assert_array_equal(a, b)

    def test_substreams_differ(self):
        a = substream(42, 0).standard_normal(10)
        b = substream(42, 1).standard_normal(10)
        assert not np.allclose(a, b)


class TestMdts1:
    def test_round_trip(self, tmp_path):
        ts = series(64, 3, dt=0.05, seed=9)
        path = write_mdts1(tmp_path / "a.mdts1", ts, {"system": "test"})
        back, manifest = read_mdts1(path)
        np.testing.assert_array_equal(back.values, ts.values)
        assert back.dt == ts.dt and back.seed == ts.seed
        assert manifest["system"] == "test"

    def test_header_layout(self, tmp_path):
        ts = TimeSeries(np.ones((2, 1)), 0.5, ("u",), seed=7)
        path = write_mdts1(tmp_path / "b.mdts1", ts)
        raw = path.read_bytes()
        assert raw[:5] == b"MDTS1"
        assert len(raw) == 37 + 8 * 2  # header + payload

    def test_magic_check(self, tmp_path):
        p = tmp_path / "bad.mdts1"
        p.write_bytes(b"NOTIT" + b"\0" * 64)
        with pytest.raises(ValueError):
            read_mdts1(p)


def test_interleave_round_trip():
    rng = make_rng(1)
    z = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    np.testing.assert_array_equal(interleaved_to_complex(complex_to_interleaved(z)), z)
