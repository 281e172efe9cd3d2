"""Diagnostics: correlation functions, density estimates, spectra,
metastability statistics, and ensemble prediction-skill metrics.

Every operation returns a StatsReport (abscissa grid, values, sample count,
metadata) that serializes to CSV with a JSON metadata sidecar; plotting is
out of scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InsufficientTransitionsError(RuntimeError):
    """The series never completes enough well-to-well transitions."""


@dataclass
class StatsReport:
    kind: str
    grid: np.ndarray
    values: np.ndarray
    sample_count: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("abscissa grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("report values must be finite")

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        vals = np.atleast_2d(self.values)
        if vals.shape[0] == self.grid.shape[0]:
            table = np.column_stack([self.grid, vals])
        else:
            table = np.column_stack([self.grid, vals.T])
        n_cols = table.shape[1] - 1
        header = "grid," + ",".join(
            f"value{i}" if n_cols > 1 else "value" for i in range(n_cols))
        lines = [header]
        lines += [",".join(f"{v:.12e}" for v in row) for row in table]
        path.write_text("\n".join(lines) + "\n")
        meta = {"kind": self.kind, "sample_count": self.sample_count,
                "columns": header.split(","), "format_version": 1}
        meta.update({k: v for k, v in self.metadata.items()
                     if isinstance(v, (str, int, float, bool, list))})
        path.with_name(path.name + ".meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True))
        return path


def _centered(x):
    x = np.asarray(x, dtype=np.float64).ravel()
    return x - x.mean()


def _autocov_fft(a, b, max_lag):
    n = a.shape[0]
    size = 1
    while size < 2 * n:
        size *= 2
    fa = np.fft.rfft(a, size)
    fb = np.fft.rfft(b, size)
    corr = np.fft.irfft(np.conj(fa) * fb, size)
    return corr[:max_lag + 1] / n


def acf(series, max_lag: int, dt: float = 1.0, metadata=None) -> StatsReport:
    """Lag autocorrelation of the centered series, normalized at lag zero."""
    x = _centered(getattr(series, "values", series))
    n = x.shape[0]
    if n <= max_lag:
        raise ValueError("series shorter than the requested maximum lag")
    c = _autocov_fft(x, x, max_lag)
    if c[0] <= 0:
        raise ValueError("zero-variance series has no correlation function")
    dt = getattr(series, "dt", dt)
    return StatsReport("acf", np.arange(max_lag + 1) * dt, c / c[0], n,
                       dict(metadata or {}))


def ccf(a, b, max_lag: int, dt: float = 1.0, metadata=None) -> StatsReport:
    """Cross-correlation of two centered series over lags -max_lag..max_lag;
    positive lag means the second series trails the first."""
    xa = _centered(getattr(a, "values", a))
    xb = _centered(getattr(b, "values", b))
    if xa.shape[0] != xb.shape[0]:
        raise ValueError("series must share length")
    n = xa.shape[0]
    if n <= max_lag:
        raise ValueError("series shorter than the requested maximum lag")
    sa = xa.std()
    sb = xb.std()
    if sa == 0 or sb == 0:
        raise ValueError("zero-variance input")
    pos = _autocov_fft(xa, xb, max_lag)        # b delayed by tau
    neg = _autocov_fft(xb, xa, max_lag)        # a delayed by tau
    vals = np.concatenate([neg[1:][::-1], pos]) / (sa * sb)
    dt = getattr(a, "dt", dt)
    grid = np.arange(-max_lag, max_lag + 1) * dt
    return StatsReport("ccf", grid, vals, n, dict(metadata or {}))


def kde_pdf(samples, grid=None, n_grid: int = 512, span_sigmas: float = 5.0,
            metadata=None) -> StatsReport:
    """Gaussian kernel density with the 1.06 sigma n^(-1/5) bandwidth."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.shape[0]
    if n < 100:
        raise ValueError("need at least 100 samples for a density estimate")
    sigma = x.std()
    if sigma <= 0:
        raise ValueError("degenerate sample variance")
    h = 1.06 * sigma * n ** (-0.2)
    if grid is None:
        grid = np.linspace(x.mean() - span_sigmas * sigma,
                           x.mean() + span_sigmas * sigma, n_grid)
    grid = np.asarray(grid, dtype=np.float64)
    dens = np.zeros(grid.shape[0])
    norm = 1.0 / (n * h * np.sqrt(2.0 * np.pi))
    block = max(1, 2 ** 22 // grid.shape[0])
    for lo in range(0, n, block):
        z = (grid[None, :] - x[lo:lo + block, None]) / h
        dens += norm * np.exp(-0.5 * z * z).sum(axis=0)
    return StatsReport("pdf", grid, dens, n, dict(metadata or {}))


def pdf_l1_distance(a: StatsReport, b: StatsReport) -> float:
    """Integrated absolute density difference on a common grid."""
    lo = max(a.grid[0], b.grid[0])
    hi = min(a.grid[-1], b.grid[-1])
    grid = np.linspace(lo, hi, max(a.grid.size, b.grid.size))
    fa = np.interp(grid, a.grid, a.values)
    fb = np.interp(grid, b.grid, b.values)
    return float(np.trapezoid(np.abs(fa - fb), grid))


def energy_spectrum(modes, metadata=None) -> StatsReport:
    """Squared temporal mean modulus per mode (the mean-amplitude convention,
    not the mean of squares)."""
    z = np.asarray(modes)
    if z.size == 0:
        raise ValueError("empty mode series")
    mean_abs = np.mean(np.abs(z), axis=0)
    return StatsReport("spectrum", np.arange(1, z.shape[1] + 1, dtype=float),
                       mean_abs ** 2, z.shape[0], dict(metadata or {}))


def _well_events(x, centers, band):
    """Indices where the hysteresis state switches wells; the first event is
    the initial entry."""
    x = np.asarray(x, dtype=np.float64).ravel()
    labels = np.zeros(x.shape[0], dtype=np.int8)
    labels[np.abs(x - centers[1]) < band] = 1
    labels[np.abs(x - centers[0]) < band] = -1
    events = []
    current = 0
    for i, lab in enumerate(labels):
        if lab != 0 and lab != current:
            events.append(i)
            current = lab
    return events


def mean_exit_time(series, centers=(-1.0, 1.0), band: float = 0.3,
                   dt: float = 1.0, min_sojourns: int = 10) -> float:
    """Mean first-passage time from a well to the barrier midpoint.

    A sojourn starts on entering one well ball (hysteresis: sojourns are only
    counted once the opposite ball is actually reached, so barrier chatter is
    never double counted) and its escape completes at the first crossing of
    the midpoint between the two centers after the start."""
    x = np.asarray(getattr(series, "values", series), dtype=np.float64).ravel()
    dt = getattr(series, "dt", dt)
    events = _well_events(x, centers, band)
    if len(events) - 1 < min_sojourns:
        raise InsufficientTransitionsError(
            f"only {max(0, len(events) - 1)} completed sojourns; "
            f"need {min_sojourns}")
    mid = 0.5 * (centers[0] + centers[1])
    sign = np.sign(x - mid)
    crossings = np.nonzero(sign[1:] * sign[:-1] < 0)[0] + 1
    durations = []
    for start, end in zip(events, events[1:]):
        # the escape crossing lies strictly after the entry sample; a crossing
        # at the entry instant is the arrival into this well
        pos = np.searchsorted(crossings, start, side="right")
        if pos < crossings.shape[0] and crossings[pos] <= end:
            durations.append(crossings[pos] - start)
    if len(durations) < min_sojourns:
        raise InsufficientTransitionsError("too few completed escapes")
    return float(np.mean(durations) * dt)


def reaction_rate(series, centers=(-1.0, 1.0), band: float = 0.3,
                  dt: float = 1.0, min_sojourns: int = 10) -> float:
    """Completed well-to-well transitions per unit time."""
    x = getattr(series, "values", series)
    dt = getattr(series, "dt", dt)
    n = np.asarray(x).ravel().shape[0]
    events = _well_events(x, centers, band)
    if len(events) - 1 < min_sojourns:
        raise InsufficientTransitionsError(
            f"only {max(0, len(events) - 1)} completed sojourns; "
            f"need {min_sojourns}")
    return float((len(events) - 1) / ((n - 1) * dt))


def rmse_ancr(pred, truth, dt: float, climatology=None, field_map=None,
              metadata=None) -> StatsReport:
    """Lead-time skill of paired ensembles (pred, truth): root-mean-square
    error over members and space, and the mean spatial correlation of the
    anomalies about the truth climatology.

    pred/truth: (B, T+1, d); field_map optionally sends state rows to the
    comparison space (e.g. spectral coefficients to collocation values).
    Returns values stacked as (2, T+1): row 0 RMSE, row 1 anomaly correlation.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("ensembles must share shape")
    if field_map is not None:
        pred = pred @ field_map.T
        truth = truth @ field_map.T
    if climatology is None:
        climatology = truth.mean(axis=(0, 1))
    rmse = np.sqrt(np.mean((pred - truth) ** 2, axis=(0, 2)))
    pa = pred - climatology
    ta = truth - climatology
    num = np.sum(pa * ta, axis=2)
    den = np.sqrt(np.sum(pa * pa, axis=2) * np.sum(ta * ta, axis=2))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(den > 0, num / den, 0.0)
    ancr = corr.mean(axis=0)
    grid = np.arange(pred.shape[1]) * dt
    vals = np.vstack([rmse, ancr])
    return StatsReport("rmse_ancr", grid, vals, pred.shape[0],
                       dict(metadata or {}))


def strong_error(pred, truth, dt: float = 1.0, metadata=None) -> StatsReport:
    """Mean over paired runs of the running maximum deviation up to each lead.

    pred/truth: (B, T+1, d) sharing noise realizations and initial states."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("paired runs must share shape")
    dev = np.linalg.norm(pred - truth, axis=2)
    running = np.maximum.accumulate(dev, axis=1)
    vals = running.mean(axis=0)
    grid = np.arange(pred.shape[1]) * dt
    return StatsReport("strong_error", grid, vals, pred.shape[0],
                       dict(metadata or {}))


def kse_field_map(n_modes: int, n_grid: int = 32) -> np.ndarray:
    """Linear map from interleaved spectral rows (2*n_modes reals) to the real
    field on a uniform collocation grid (zero-mean band-limited signal)."""
    x = 2.0 * np.pi * np.arange(n_grid) / n_grid
    k = np.arange(1, n_modes + 1)
    cols = np.empty((n_grid, 2 * n_modes))
    cols[:, 0::2] = 2.0 * np.cos(np.outer(x, k))
    cols[:, 1::2] = -2.0 * np.sin(np.outer(x, k))
    return cols
