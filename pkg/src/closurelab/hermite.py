"""Nonparametric feedback estimator: ridge-regularized least squares on a
truncated tensor product of normalized probabilists' Hermite polynomials.

Inputs are standardized per dimension, so the basis is orthonormal under the
standard Gaussian weight in the standardized coordinates.  A total-degree cap
(default: the largest per-dimension degree) keeps the basis count polynomial
in the input dimension.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DelayDataset, DelayVector, flatten_delay

CHECKPOINT_FORMAT = 1


class ConditioningWarning(UserWarning):
    """Gram matrix has directions at or below the ridge floor."""


class ExtrapolationWarning(UserWarning):
    """Evaluation far outside the standardized training range."""


def hermite_eval(n: int, x) -> np.ndarray | float:
    """He_n(x) / sqrt(n!), orthonormal under the standard Gaussian weight.

    Uses the normalized recurrence He*_{n+1} = (x He*_n - sqrt(n) He*_{n-1}) /
    sqrt(n+1), which avoids factorial overflow.
    """
    if n < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    prev = np.ones_like(x)
    if n == 0:
        return prev if prev.ndim else float(prev)
    cur = x.copy()
    for k in range(1, n):
        prev, cur = cur, (x * cur - np.sqrt(k) * prev) / np.sqrt(k + 1)
    return cur if cur.ndim else float(cur)


def hermite_table(x: np.ndarray, max_degree: int) -> np.ndarray:
    """(len(x), max_degree+1) table of He*_0..He*_max at each point."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = x
    for k in range(1, max_degree):
        out[..., k + 1] = (x * out[..., k] - np.sqrt(k) * out[..., k - 1]) / np.sqrt(k + 1)
    return out


def total_degree_indices(degrees: tuple[int, ...], total_degree: int) -> np.ndarray:
    """All multi-indices a with a_i <= degrees_i and sum(a) <= total_degree,
    ordered by total degree then lexicographically."""
    ranges = [range(d + 1) for d in degrees]
    idx = [a for a in itertools.product(*ranges) if sum(a) <= total_degree]
    idx.sort(key=lambda a: (sum(a), a))
    return np.array(idx, dtype=np.int64)


@dataclass
class HermiteModel:
    """Trained tensor-Hermite regressor satisfying the estimator contract.

    z_lo/z_hi record the standardized training range; rollout drivers clamp
    their queries to that box (plus a small margin) because a high-degree
    polynomial is meaningless outside the data and would blow up a closed
    loop.  Plain predict calls stay unguarded and merely warn.
    """

    degrees: tuple[int, ...]
    total_degree: int
    multi_indices: np.ndarray        # (n_basis, n_dims)
    coeffs: np.ndarray               # (n_basis, output_dim)
    mean: np.ndarray                 # (n_dims,)
    scale: np.ndarray                # (n_dims,)
    m: int
    residual_variance: np.ndarray    # (output_dim,)
    z_lo: np.ndarray | None = None   # standardized training minima
    z_hi: np.ndarray | None = None
    guard_margin: float = 0.25
    kind: str = "rkhs"

    @property
    def input_dim(self) -> int:
        return len(self.degrees)

    @property
    def output_dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_basis(self) -> int:
        return self.multi_indices.shape[0]

    def standardize(self, flat: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(flat) - self.mean) / self.scale
        if np.any(np.abs(z) > 6.0):
            warnings.warn("evaluating more than 6 standard deviations from the "
                          "training data", ExtrapolationWarning, stacklevel=3)
        return z

    def predict_flat(self, flat: np.ndarray) -> np.ndarray:
        flat = np.atleast_2d(np.asarray(flat, dtype=np.float64))
        if flat.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {flat.shape[1]}")
        phi = design_matrix(self.standardize(flat), self.multi_indices)
        return phi @ self.coeffs

    def predict(self, z: DelayVector) -> np.ndarray:
        return self.predict_flat(flatten_delay(z)[None, :])[0]

    def predict_batch(self, x_hist: np.ndarray, theta_hist: np.ndarray) -> np.ndarray:
        b = x_hist.shape[0]
        flat = np.concatenate([x_hist, theta_hist], axis=2).reshape(b, -1)
        return self.predict_flat(flat)

    def guard_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = (self.z_lo if self.z_lo is not None
              else np.full(self.input_dim, -6.0)) - self.guard_margin
        hi = (self.z_hi if self.z_hi is not None
              else np.full(self.input_dim, 6.0)) + self.guard_margin
        return lo, hi

    def predict_batch_guarded(self, x_hist: np.ndarray, theta_hist: np.ndarray
                              ) -> np.ndarray:
        """Rollout evaluation: standardized inputs clamped to the training box."""
        b = x_hist.shape[0]
        flat = np.concatenate([x_hist, theta_hist], axis=2).reshape(b, -1)
        z = (flat - self.mean) / self.scale
        lo, hi = self.guard_bounds()
        z = np.clip(z, lo, hi)
        phi = design_matrix(z, self.multi_indices)
        return phi @ self.coeffs

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": CHECKPOINT_FORMAT,
            "kind": self.kind,
            "degrees": list(self.degrees),
            "total_degree": self.total_degree,
            "m": self.m,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "n_basis": int(self.n_basis),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "residual_variance": self.residual_variance.tolist(),
            "z_lo": None if self.z_lo is None else self.z_lo.tolist(),
            "z_hi": None if self.z_hi is None else self.z_hi.tolist(),
            "guard_margin": self.guard_margin,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
        (directory / "coeffs.bin").write_bytes(
            np.ascontiguousarray(self.coeffs, dtype="<f8").tobytes())
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "HermiteModel":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest["format_version"] != CHECKPOINT_FORMAT:
            raise ValueError("unsupported checkpoint format")
        degrees = tuple(manifest["degrees"])
        mi = total_degree_indices(degrees, manifest["total_degree"])
        coeffs = np.frombuffer((directory / "coeffs.bin").read_bytes(), dtype="<f8")
        coeffs = coeffs.reshape(manifest["n_basis"], manifest["output_dim"]).copy()
        opt = lambda key: (None if manifest.get(key) is None
                           else np.array(manifest[key]))
        return cls(
            degrees=degrees,
            total_degree=manifest["total_degree"],
            multi_indices=mi,
            coeffs=coeffs,
            mean=np.array(manifest["mean"]),
            scale=np.array(manifest["scale"]),
            m=manifest["m"],
            residual_variance=np.array(manifest["residual_variance"]),
            z_lo=opt("z_lo"),
            z_hi=opt("z_hi"),
            guard_margin=manifest.get("guard_margin", 0.25),
            kind=manifest["kind"],
        )


def design_matrix(z_std: np.ndarray, multi_indices: np.ndarray) -> np.ndarray:
    """Evaluate the retained tensor basis at standardized points (N, d)."""
    n_dims = z_std.shape[1]
    max_deg = int(multi_indices.max(initial=0))
    tables = [hermite_table(z_std[:, d], max_deg) for d in range(n_dims)]
    phi = tables[0][:, multi_indices[:, 0]]
    for d in range(1, n_dims):
        phi = phi * tables[d][:, multi_indices[:, d]]
    return phi


def fit_hermite(data: DelayDataset, degrees, total_degree: int | None = None,
                ridge_scale: float = 1e-6, block: int = 8192,
                standardize: bool = True) -> HermiteModel:
    """Least-squares projection of targets onto the truncated tensor basis.

    Normal equations are accumulated in row blocks; the ridge is a floor at
    ridge_scale times the largest Gram eigenvalue.  Large bases on strongly
    non-Gaussian data are rank deficient (most directions carry no samples);
    the floor keeps those directions damped, which closed-loop stability
    depends on, so the bias-removing refinement step only runs when the Gram
    is full rank above the floor.
    """
    flat = data.flat_inputs()
    y = np.atleast_2d(data.targets)
    n, d = flat.shape
    degrees = tuple(int(g) for g in (degrees if np.ndim(degrees) else [degrees] * d))
    if len(degrees) != d:
        raise ValueError(f"need {d} per-dimension degrees, got {len(degrees)}")
    if total_degree is None:
        total_degree = max(degrees)
    mi = total_degree_indices(degrees, total_degree)
    n_basis = mi.shape[0]
    if n < n_basis:
        raise ValueError(f"{n} samples cannot determine {n_basis} basis functions")

    if standardize:
        mean = flat.mean(axis=0)
        scale = flat.std(axis=0)
        if np.any(scale <= 0):
            raise ValueError("degenerate input dimension (zero variance)")
    else:
        mean = np.zeros(d)
        scale = np.ones(d)

    gram = np.zeros((n_basis, n_basis))
    rhs = np.zeros((n_basis, y.shape[1]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        for lo in range(0, n, block):
            zb = (flat[lo:lo + block] - mean) / scale
            phi = design_matrix(zb, mi)
            gram += phi.T @ phi
            rhs += phi.T @ y[lo:lo + block]

    eigs = np.linalg.eigvalsh(gram)
    ridge = ridge_scale * eigs[-1]
    full_rank = eigs[0] >= ridge
    if not full_rank:
        warnings.warn(f"Gram matrix has eigenvalues below the ridge floor "
                      f"({eigs[0]:.3e} < {ridge:.3e}); solution is regularized",
                      ConditioningWarning, stacklevel=2)
    shifted = gram + ridge * np.eye(n_basis)
    coeffs = np.linalg.solve(shifted, rhs)
    if full_rank:
        # one refinement step removes the first-order ridge bias where the
        # least-squares solution is actually determined by the data
        coeffs += np.linalg.solve(shifted, rhs - gram @ coeffs)

    z_all = (flat - mean) / scale
    model = HermiteModel(degrees=degrees, total_degree=total_degree,
                         multi_indices=mi, coeffs=coeffs, mean=mean, scale=scale,
                         m=data.m, residual_variance=np.zeros(y.shape[1]),
                         z_lo=z_all.min(axis=0), z_hi=z_all.max(axis=0))
    # training-set residual drives the optional closure noise
    sq = np.zeros(y.shape[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        for lo in range(0, n, block):
            r = model.predict_flat(flat[lo:lo + block]) - y[lo:lo + block]
            sq += np.sum(r * r, axis=0)
    model.residual_variance = sq / n
    return model
