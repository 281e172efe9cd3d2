"""Topographic mean flow interaction on a doubly periodic box.

State: a real zonal mean flow u plus the vorticity modes on the lattice shell
1 <= |k|^2 <= k_cutoff (56 signed wavevectors, 28 representatives under
k <-> -k, 57 real degrees of freedom in total).  The mean flow feels the
modes only through the topographic stress, which is also the identifiable
feedback the closure model learns.

The deterministic part advances with classical RK4 at the inner step and the
stochastic forcing enters as an Euler-Maruyama increment after each step;
observations are recorded on a coarser grid.  The quadratic advection term is
a dealiased spectral convolution; a collocation-grid evaluation of the same
term is kept alongside as an independent route for verification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from ..core import TimeSeries


class ConsistencyError(RuntimeError):
    """Conjugate symmetry or realness of a derived field was violated."""


@dataclass(frozen=True)
class TopoParams:
    coupling: float = 7.0 * math.sqrt(2.0) / 4.0  # topography amplitude
    damping: float = 0.1                          # Ekman / momentum drag
    beta: float = 1.0
    mu: float = 2.0
    k_cutoff: int = 17                            # shell bound on |k|^2
    dt_inner: float = 2.5e-3
    dt_obs: float = 0.05

    def __post_init__(self):
        ratio = self.dt_obs / self.dt_inner
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt_obs must be an integer multiple of dt_inner")

    @property
    def n_substeps(self) -> int:
        return round(self.dt_obs / self.dt_inner)

    @property
    def sigma(self) -> float:
        # equilibrium variance sigma^2 / (2 damping) pinned to one
        return math.sqrt(2.0 * self.damping)

    @property
    def u_eq(self) -> float:
        return -self.beta / self.mu


REGIMES = {
    "weak": dict(coupling=3.0 * math.sqrt(2.0) / 4.0, damping=0.5),
    "intermediate": dict(coupling=5.0 * math.sqrt(2.0) / 4.0, damping=0.1),
    "strong": dict(coupling=7.0 * math.sqrt(2.0) / 4.0, damping=0.1),
}


def default_params(regime: str | None = None, **overrides) -> TopoParams:
    base = dict(REGIMES[regime]) if regime else {}
    base.update(overrides)
    return TopoParams(**base)


def mode_set(k_cutoff: int) -> np.ndarray:
    """Half-plane representatives (kx, ky) of the shell 1 <= |k|^2 <= k_cutoff.

    Canonical choice under k <-> -k: kx > 0, or kx = 0 and ky > 0.  Sorted by
    (|k|^2, kx, ky) for a stable layout.
    """
    if k_cutoff < 1:
        raise ValueError("k_cutoff must be >= 1")
    kmax = int(math.isqrt(k_cutoff))
    reps = []
    for kx in range(-kmax, kmax + 1):
        for ky in range(-kmax, kmax + 1):
            s = kx * kx + ky * ky
            if not (1 <= s <= k_cutoff):
                continue
            if kx > 0 or (kx == 0 and ky > 0):
                reps.append((kx, ky))
    reps.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    return np.array(reps, dtype=np.int64)


def topography_modes(reps: np.ndarray, coupling: float) -> np.ndarray:
    """Spectral coefficients of H (cos x + sin x) at the representatives."""
    h = np.zeros(reps.shape[0], dtype=np.complex128)
    for r, (kx, ky) in enumerate(reps):
        if ky == 0 and kx == 1:
            h[r] = coupling * (1.0 - 1.0j) / 2.0
        elif ky == 0 and kx == -1:  # not canonical, kept for completeness
            h[r] = coupling * (1.0 + 1.0j) / 2.0
    return h


@dataclass(frozen=True)
class TopoTables:
    """Precomputed arrays driving the spectral kernels."""

    reps: np.ndarray          # (R, 2) int
    ksq: np.ndarray           # (R,)
    kx: np.ndarray            # (R,)
    h_rep: np.ndarray         # (R,) complex
    w_eq: np.ndarray          # (R,) complex
    sigma_k: np.ndarray       # (R,)
    theta_coef: np.ndarray    # (R,) theta = sum theta_coef * Im(conj(h) w)
    signed: np.ndarray        # (2R, 2) int, [reps; -reps]
    h_signed: np.ndarray      # (2R,) complex
    pair_out: np.ndarray      # (P,) output representative index
    pair_l: np.ndarray        # (P,) signed index into psi factor
    pair_p: np.ndarray        # (P,) signed index into gradient factor
    pair_coef: np.ndarray     # (P,) float, includes the 1/|l|^2 from psi


@lru_cache(maxsize=8)
def _tables_cached(k_cutoff: int, coupling: float, damping: float,
                   beta: float, mu: float) -> TopoTables:
    reps = mode_set(k_cutoff)
    nr = reps.shape[0]
    ksq = (reps[:, 0] ** 2 + reps[:, 1] ** 2).astype(np.float64)
    kx = reps[:, 0].astype(np.float64)
    h_rep = topography_modes(reps, coupling)
    w_eq = -ksq * h_rep / (mu + ksq)
    sigma = math.sqrt(2.0 * damping)
    sigma_k = sigma * (1.0 + mu / ksq) ** -0.5
    theta_coef = -2.0 * kx / ksq

    signed = np.vstack([reps, -reps])
    h_signed = np.concatenate([h_rep, np.conj(h_rep)])
    index = {(int(k[0]), int(k[1])): i for i, k in enumerate(signed)}

    outs, ls, ps, coefs = [], [], [], []
    for r in range(nr):
        kxo, kyo = int(reps[r, 0]), int(reps[r, 1])
        for il, (lx, ly) in enumerate(signed):
            px, py = kxo - int(lx), kyo - int(ly)
            ip = index.get((px, py))
            if ip is None:
                continue
            c = float(ly * px - lx * py)
            if c == 0.0:
                continue
            lsq = float(lx * lx + ly * ly)
            outs.append(r)
            ls.append(il)
            ps.append(ip)
            coefs.append(c / lsq)  # advection tendency: +sum c/|l|^2 w_l q_p
    return TopoTables(
        reps=reps, ksq=ksq, kx=kx, h_rep=h_rep, w_eq=w_eq, sigma_k=sigma_k,
        theta_coef=theta_coef, signed=signed, h_signed=h_signed,
        pair_out=np.array(outs, dtype=np.int64),
        pair_l=np.array(ls, dtype=np.int64),
        pair_p=np.array(ps, dtype=np.int64),
        pair_coef=np.array(coefs, dtype=np.float64),
    )


def tables(p: TopoParams) -> TopoTables:
    return _tables_cached(p.k_cutoff, p.coupling, p.damping, p.beta, p.mu)


def signed_from_reps(w_reps: np.ndarray) -> np.ndarray:
    return np.concatenate([w_reps, np.conj(w_reps)])


# ---------------------------------------------------------------------------
# Advection term, two routes.
# ---------------------------------------------------------------------------


def advection_pairs(w_reps: np.ndarray, t: TopoTables) -> np.ndarray:
    """Dealiased spectral convolution via the precomputed pair list."""
    wsig = signed_from_reps(w_reps)
    qsig = wsig + t.h_signed
    terms = t.pair_coef * wsig[t.pair_l] * qsig[t.pair_p]
    out = np.zeros(t.reps.shape[0], dtype=np.complex128)
    np.add.at(out, t.pair_out, terms)
    return out


def advection_grid(w_reps: np.ndarray, t: TopoTables, n_grid: int = 16,
                   tol: float = 1e-10) -> np.ndarray:
    """Collocation-grid evaluation of the same advection tendency.

    The grid is alias-free for the quadratic product because every retained
    wavevector component is at most sqrt(k_cutoff) and n_grid covers three
    times that band (the 2/3 truncation keeps |k_i| <= n_grid/3).
    """
    kmax = int(math.isqrt(int(t.ksq.max())))
    if n_grid < 3 * kmax:
        raise ValueError(f"grid {n_grid} too small for dealiased products "
                         f"(need >= {3 * kmax})")
    wsig = signed_from_reps(w_reps)
    qsig = wsig + t.h_signed

    psi_hat = np.zeros((n_grid, n_grid), dtype=np.complex128)
    q_hat = np.zeros((n_grid, n_grid), dtype=np.complex128)
    lsq = (t.signed[:, 0] ** 2 + t.signed[:, 1] ** 2).astype(np.float64)
    for i, (kx, ky) in enumerate(t.signed):
        psi_hat[kx % n_grid, ky % n_grid] = -wsig[i] / lsq[i]
        q_hat[kx % n_grid, ky % n_grid] = qsig[i]

    freq = np.fft.fftfreq(n_grid) * n_grid
    ikx = 1j * freq[:, None]
    iky = 1j * freq[None, :]
    area = n_grid * n_grid
    psi_x = np.fft.ifft2(ikx * psi_hat) * area
    psi_y = np.fft.ifft2(iky * psi_hat) * area
    q_x = np.fft.ifft2(ikx * q_hat) * area
    q_y = np.fft.ifft2(iky * q_hat) * area
    jac = -psi_y * q_x + psi_x * q_y
    if np.max(np.abs(jac.imag)) > tol * max(1.0, np.max(np.abs(jac.real))):
        raise ConsistencyError("advection field is not real: conjugate "
                               "symmetry violated")
    jac_hat = np.fft.fft2(jac.real) / area
    out = np.empty(t.reps.shape[0], dtype=np.complex128)
    for r, (kx, ky) in enumerate(t.reps):
        out[r] = -jac_hat[kx % n_grid, ky % n_grid]
    return out


def theta_topo(omega_signed: np.ndarray, p: TopoParams, tol: float = 1e-10
               ) -> float:
    """Topographic stress on the mean flow, evaluated over all signed modes.

    Requires a conjugate-symmetric input; the imaginary residue of the sum is
    checked against tol and discarded.
    """
    t = tables(p)
    omega_signed = np.asarray(omega_signed, dtype=np.complex128)
    n = t.signed.shape[0]
    if omega_signed.shape != (n,):
        raise ValueError(f"expected {n} signed modes")
    nr = n // 2
    sym = np.max(np.abs(omega_signed[nr:] - np.conj(omega_signed[:nr])))
    scale = max(1.0, float(np.max(np.abs(omega_signed))))
    if sym > tol * scale:
        raise ConsistencyError("omega is not conjugate symmetric")
    lsq = (t.signed[:, 0] ** 2 + t.signed[:, 1] ** 2).astype(np.float64)
    lx = t.signed[:, 0].astype(np.float64)
    total = np.sum(1j * (lx / lsq) * np.conj(t.h_signed) * omega_signed)
    if abs(total.imag) > 1e-12 * max(1.0, abs(total.real)):
        raise ConsistencyError("theta has a non-negligible imaginary part")
    return float(total.real)


def theta_from_reps(w_reps: np.ndarray, p: TopoParams) -> np.ndarray:
    """Vectorized theta over (..., R) representative stacks."""
    t = tables(p)
    return np.sum(t.theta_coef * (np.conj(t.h_rep) * w_reps).imag, axis=-1)


# ---------------------------------------------------------------------------
# Full simulator (numba kernel).
# ---------------------------------------------------------------------------


@njit(cache=True)
def _rhs(u, w, wsig, dw, kx, ksq, h_rep, h_signed, w_eq, theta_coef,
         pair_out, pair_l, pair_p, pair_coef, beta, mu, dbar, u_eq):
    nr = w.shape[0]
    for i in range(nr):
        wsig[i] = w[i]
        wsig[nr + i] = np.conj(w[i])
    theta = 0.0
    for r in range(nr):
        theta += theta_coef[r] * (np.conj(h_rep[r]) * w[r]).imag
    du = theta - dbar * (u - u_eq)
    for r in range(nr):
        dw[r] = (1j * kx[r] * (beta / ksq[r] - u) * w[r]
                 - 1j * kx[r] * h_rep[r] * u
                 - dbar * (w[r] - w_eq[r]))
    for j in range(pair_out.shape[0]):
        dw[pair_out[j]] += (pair_coef[j] * wsig[pair_l[j]]
                            * (wsig[pair_p[j]] + h_signed[pair_p[j]]))
    return du


@njit(cache=True)
def _simulate_kernel(n_obs, n_sub, n_burn_sub, dt, seed,
                     kx, ksq, h_rep, h_signed, w_eq, sigma_k, theta_coef,
                     pair_out, pair_l, pair_p, pair_coef,
                     beta, mu, dbar, u_eq, sigma):
    np.random.seed(seed)
    nr = kx.shape[0]
    # equilibrium-calibrated random start
    u = u_eq + sigma / np.sqrt(mu * 2.0 * dbar) * np.random.normal(0.0, 1.0)
    w = np.empty(nr, dtype=np.complex128)
    for r in range(nr):
        s = sigma_k[r] / np.sqrt(2.0 * dbar)
        w[r] = w_eq[r] + s * (np.random.normal(0.0, 1.0)
                              + 1j * np.random.normal(0.0, 1.0)) / np.sqrt(2.0)

    wsig = np.empty(2 * nr, dtype=np.complex128)
    k1w = np.empty(nr, dtype=np.complex128)
    k2w = np.empty(nr, dtype=np.complex128)
    k3w = np.empty(nr, dtype=np.complex128)
    k4w = np.empty(nr, dtype=np.complex128)
    wtmp = np.empty(nr, dtype=np.complex128)

    out = np.empty((n_obs, 1 + 2 * nr))
    sq_dt = np.sqrt(dt)
    u_amp = sigma / np.sqrt(mu)
    total = n_burn_sub + (n_obs - 1) * n_sub

    # record a sample every n_sub steps once burn-in has passed
    rec = 0
    step = 0
    while rec < n_obs:
        if step >= n_burn_sub and (step - n_burn_sub) % n_sub == 0:
            out[rec, 0] = u
            for r in range(nr):
                out[rec, 1 + 2 * r] = w[r].real
                out[rec, 2 + 2 * r] = w[r].imag
            rec += 1
            if rec == n_obs:
                break
        k1u = _rhs(u, w, wsig, k1w, kx, ksq, h_rep, h_signed, w_eq, theta_coef,
                   pair_out, pair_l, pair_p, pair_coef, beta, mu, dbar, u_eq)
        for r in range(nr):
            wtmp[r] = w[r] + 0.5 * dt * k1w[r]
        k2u = _rhs(u + 0.5 * dt * k1u, wtmp, wsig, k2w, kx, ksq, h_rep,
                   h_signed, w_eq, theta_coef, pair_out, pair_l, pair_p,
                   pair_coef, beta, mu, dbar, u_eq)
        for r in range(nr):
            wtmp[r] = w[r] + 0.5 * dt * k2w[r]
        k3u = _rhs(u + 0.5 * dt * k2u, wtmp, wsig, k3w, kx, ksq, h_rep,
                   h_signed, w_eq, theta_coef, pair_out, pair_l, pair_p,
                   pair_coef, beta, mu, dbar, u_eq)
        for r in range(nr):
            wtmp[r] = w[r] + dt * k3w[r]
        k4u = _rhs(u + dt * k3u, wtmp, wsig, k4w, kx, ksq, h_rep, h_signed,
                   w_eq, theta_coef, pair_out, pair_l, pair_p, pair_coef,
                   beta, mu, dbar, u_eq)
        u = u + (dt / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        for r in range(nr):
            w[r] = w[r] + (dt / 6.0) * (k1w[r] + 2.0 * k2w[r]
                                        + 2.0 * k3w[r] + k4w[r])
        # stochastic forcing as an explicit increment after the smooth update
        u = u + u_amp * sq_dt * np.random.normal(0.0, 1.0)
        for r in range(nr):
            zr = np.random.normal(0.0, 1.0)
            zi = np.random.normal(0.0, 1.0)
            w[r] = w[r] + sigma_k[r] * sq_dt * (zr + 1j * zi) / np.sqrt(2.0)
        if not np.isfinite(u):
            return out[:rec]
        step += 1
    return out


def var_names(p: TopoParams) -> tuple[str, ...]:
    t = tables(p)
    names = ["u"]
    for kx, ky in t.reps:
        names.append(f"w({kx},{ky}).re")
        names.append(f"w({kx},{ky}).im")
    return tuple(names)


def simulate(p: TopoParams, n_obs: int, seed: int,
             burn_time: float = 1000.0) -> TimeSeries:
    """Full model observed every dt_obs after discarding an initial transient."""
    t = tables(p)
    n_burn_sub = round(burn_time / p.dt_inner)
    out = _simulate_kernel(
        n_obs, p.n_substeps, n_burn_sub, p.dt_inner, seed,
        t.kx, t.ksq, t.h_rep, t.h_signed, t.w_eq, t.sigma_k, t.theta_coef,
        t.pair_out, t.pair_l, t.pair_p, t.pair_coef,
        p.beta, p.mu, p.damping, p.u_eq, p.sigma)
    if out.shape[0] < n_obs:
        from ..core import NumericalBlowupError
        raise NumericalBlowupError("topographic path blew up",
                                   step=out.shape[0])
    return TimeSeries(out, p.dt_obs, var_names(p), seed)


def reps_from_series(ts: TimeSeries) -> np.ndarray:
    """(n_steps, R) complex representative modes from a recorded state series."""
    body = ts.values[:, 1:]
    return body[:, 0::2] + 1j * body[:, 1::2]


def resolved_rhs(state, p: TopoParams):
    """Feedback-free mean-flow tendency (pure relaxation to equilibrium)."""
    u = np.asarray(state, dtype=np.float64)
    return -p.damping * (u - p.u_eq)


def resolved_step(p: TopoParams, u, theta, eta=0.0):
    """Coarse mean-flow map at the observation step, driven by feedback and
    optionally a standard normal increment."""
    d = p.dt_obs
    return (u + d * theta - d * p.damping * (u - p.u_eq)
            + math.sqrt(d) * p.sigma / math.sqrt(p.mu) * eta)


def invert_resolved_step(p: TopoParams, u_t, u_next):
    """Feedback consumed by the noise-free coarse map between two samples."""
    d = p.dt_obs
    return (u_next - u_t + d * p.damping * (u_t - p.u_eq)) / d
