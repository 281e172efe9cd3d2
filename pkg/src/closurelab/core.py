"""Shared data model: time series, delay windows, estimator contract, file IO.

All floating arithmetic is 64-bit.  Complex-valued states are stored in
real arrays as interleaved (re, im) column pairs; helpers convert both ways.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, runtime_checkable

import numpy as np

MDTS1_MAGIC = b"MDTS1"
MDTS1_VERSION = 1


class AlignmentError(ValueError):
    """Two series that must share length and step do not."""


class InsufficientDataError(ValueError):
    """Not enough samples for the requested window length."""


class NumericalBlowupError(RuntimeError):
    """A state or drift evaluation became non-finite."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for worker/trajectory `index` under a root seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.PCG64(ss))


def substream_seed(seed: int, index: int) -> int:
    """Deterministic 32-bit integer seed for numba kernels, per trajectory."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled multivariate real series.

    values has shape (n_steps, n_vars); dt is the sampling step in model
    time units; seed records the provenance of the generating noise stream.
    """

    values: np.ndarray
    dt: float
    var_names: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("values must be a (n_steps, n_vars) matrix with n_steps >= 1")
        if not np.all(np.isfinite(v)):
            raise NumericalBlowupError("non-finite entries in time series")
        if not self.dt > 0:
            raise ValueError("dt must be strictly positive")
        object.__setattr__(self, "values", v)
        if self.var_names and len(self.var_names) != v.shape[1]:
            raise ValueError("var_names length does not match n_vars")
        object.__setattr__(self, "var_names", tuple(self.var_names))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    @property
    def duration(self) -> float:
        return (self.n_steps - 1) * self.dt

    @classmethod
    def from_complex(cls, values: np.ndarray, dt: float, var_names=(), seed: int = 0
                     ) -> "TimeSeries":
        """Store a complex (n_steps, n_modes) series as interleaved re/im columns."""
        z = np.asarray(values, dtype=np.complex128)
        if z.ndim == 1:
            z = z[:, None]
        flat = complex_to_interleaved(z)
        if not var_names:
            var_names = tuple(
                f"z{j}.{p}" for j in range(z.shape[1]) for p in ("re", "im"))
        return cls(flat, dt, var_names, seed)

    def to_complex(self) -> np.ndarray:
        return interleaved_to_complex(self.values)


def complex_to_interleaved(z: np.ndarray) -> np.ndarray:
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],), dtype=np.float64)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def interleaved_to_complex(v: np.ndarray) -> np.ndarray:
    if v.shape[-1] % 2:
        raise ValueError("interleaved array must have an even number of columns")
    return v[..., 0::2] + 1j * v[..., 1::2]


@dataclass(frozen=True)
class DelayVector:
    """History window (x_hist, theta_hist) of m+1 consecutive states, oldest first."""

    x_hist: np.ndarray
    theta_hist: np.ndarray
    m: int

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x_hist))
        th = np.atleast_2d(np.asarray(self.theta_hist))
        if x.shape[0] != self.m + 1 or th.shape[0] != self.m + 1:
            raise ValueError("history arrays must have exactly m+1 rows")
        object.__setattr__(self, "x_hist", x)
        object.__setattr__(self, "theta_hist", th)

    @property
    def flat_len(self) -> int:
        return (self.m + 1) * (_real_width(self.x_hist) + _real_width(self.theta_hist))


def _real_width(a: np.ndarray) -> int:
    return 2 * a.shape[1] if np.iscomplexobj(a) else a.shape[1]


def _expand_real(row: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(row):
        return complex_to_interleaved(row)
    return np.asarray(row, dtype=np.float64)


def flatten_delay(z: DelayVector) -> np.ndarray:
    """Deterministic layout: for each time (oldest first) append x then theta;
    complex entries expand to (re, im)."""
    parts = []
    for j in range(z.m + 1):
        parts.append(_expand_real(z.x_hist[j]))
        parts.append(_expand_real(z.theta_hist[j]))
    return np.concatenate(parts)


def unflatten_delay(flat: np.ndarray, m: int, d_x: int, d_theta: int,
                    complex_x: bool = False, complex_theta: bool = False) -> DelayVector:
    """Inverse of flatten_delay for the given shapes."""
    wx = 2 * d_x if complex_x else d_x
    wt = 2 * d_theta if complex_theta else d_theta
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != ((m + 1) * (wx + wt),):
        raise ValueError("flat vector length does not match the declared shapes")
    rows = flat.reshape(m + 1, wx + wt)
    x = rows[:, :wx]
    th = rows[:, wx:]
    if complex_x:
        x = interleaved_to_complex(x)
    if complex_theta:
        th = interleaved_to_complex(th)
    return DelayVector(x.copy(), th.copy(), m)


@dataclass(frozen=True)
class DelayDataset:
    """Supervised pairs: window ending at index s maps to theta at s+1.

    inputs_x has shape (n_pairs, m+1, d_x), inputs_theta (n_pairs, m+1, d_theta),
    targets (n_pairs, d_theta).  Windows are ordered by s ascending.
    """

    inputs_x: np.ndarray
    inputs_theta: np.ndarray
    targets: np.ndarray
    m: int
    source: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def d_x(self) -> int:
        return self.inputs_x.shape[2]

    @property
    def d_theta(self) -> int:
        return self.inputs_theta.shape[2]

    @property
    def input_dim(self) -> int:
        return (self.m + 1) * (self.d_x + self.d_theta)

    def vector(self, i: int) -> DelayVector:
        return DelayVector(self.inputs_x[i], self.inputs_theta[i], self.m)

    def flat_inputs(self) -> np.ndarray:
        """(n_pairs, (m+1)*(d_x+d_theta)) matrix in flatten_delay layout."""
        n = len(self)
        stacked = np.concatenate([self.inputs_x, self.inputs_theta], axis=2)
        return stacked.reshape(n, -1)

    def subset(self, idx) -> "DelayDataset":
        return DelayDataset(self.inputs_x[idx], self.inputs_theta[idx],
                            self.targets[idx], self.m, dict(self.source))


def make_delay_dataset(x: TimeSeries, theta: TimeSeries, m: int,
                       source: dict | None = None) -> DelayDataset:
    """Build all N-m-1 training pairs from aligned resolved/feedback series."""
    if x.n_steps != theta.n_steps or abs(x.dt - theta.dt) > 1e-15 * max(x.dt, theta.dt):
        raise AlignmentError(
            f"series misaligned: n_steps {x.n_steps} vs {theta.n_steps}, "
            f"dt {x.dt} vs {theta.dt}")
    n = x.n_steps
    if m < 0:
        raise ValueError("memory length m must be nonnegative")
    if m > n - 2:
        raise InsufficientDataError(
            f"m={m} needs at least m+2={m + 2} samples, have {n}")
    n_pairs = n - m - 1
    win_x = np.lib.stride_tricks.sliding_window_view(x.values, m + 1, axis=0)
    win_t = np.lib.stride_tricks.sliding_window_view(theta.values, m + 1, axis=0)
    # window i covers indices i .. i+m; the pair with newest index s = i+m
    # targets theta_{s+1}; windows come out as (n_pairs, d, m+1)
    inputs_x = np.ascontiguousarray(win_x[:n_pairs].transpose(0, 2, 1))
    inputs_theta = np.ascontiguousarray(win_t[:n_pairs].transpose(0, 2, 1))
    targets = theta.values[m + 1:].copy()
    src = dict(source or {})
    src.setdefault("dt", x.dt)
    src.setdefault("seed", x.seed)
    return DelayDataset(inputs_x, inputs_theta, targets, m, src)


@runtime_checkable
class ClosureEstimator(Protocol):
    """Common evaluation contract for the trained feedback estimators."""

    kind: str
    m: int
    input_dim: int
    output_dim: int
    residual_variance: np.ndarray

    def predict(self, z: DelayVector) -> np.ndarray:
        """Deterministic prediction of the next feedback value."""
        ...

    def predict_batch(self, x_hist: np.ndarray, theta_hist: np.ndarray) -> np.ndarray:
        """Vectorized prediction for (batch, m+1, d) history stacks."""
        ...


# ---------------------------------------------------------------------------
# Trajectory file format MDTS1
#
# 5-byte magic "MDTS1", u32 version, u32 n_vars, u64 n_steps, f64 dt,
# u64 seed, then row-major little-endian f64 payload.  Variable names and
# any extra metadata go to a JSON sidecar `<path>.json`.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<5sIIQdQ")


def write_mdts1(path: str | Path, ts: TimeSeries, extra: dict | None = None) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MDTS1_MAGIC, MDTS1_VERSION, ts.n_vars,
                              ts.n_steps, ts.dt, ts.seed & (2**64 - 1)))
        fh.write(np.ascontiguousarray(ts.values, dtype="<f8").tobytes())
    manifest = {"var_names": list(ts.var_names)}
    if extra:
        manifest.update(extra)
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_mdts1(path: str | Path) -> tuple[TimeSeries, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, n_vars, n_steps, dt, seed = _HEADER.unpack(head)
        if magic != MDTS1_MAGIC:
            raise ValueError(f"{path}: not an MDTS1 file")
        if version != MDTS1_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        payload = np.frombuffer(fh.read(8 * n_vars * n_steps), dtype="<f8")
    values = payload.reshape(n_steps, n_vars).astype(np.float64)
    sidecar = path.with_name(path.name + ".json")
    manifest = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    names = tuple(manifest.get("var_names", ()))
    return TimeSeries(values, dt, names, seed), manifest
