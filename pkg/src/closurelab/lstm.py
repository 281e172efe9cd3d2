"""Recurrent feedback estimator: an LSTM over the m+1 window cells with a
linear readout, trained by mini-batch Adam with full backpropagation through
the unrolled cells.

Everything is plain numpy in 64-bit; training is deterministic for a fixed
seed.  Cell j consumes the window entry at offset j (oldest first); the
readout maps the final hidden state to the next feedback value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DelayDataset, DelayVector, complex_to_interleaved, make_rng

CHECKPOINT_FORMAT = 1

WEIGHT_NAMES = ("W_f", "W_i", "W_o", "W_c", "b_f", "b_i", "b_o", "b_c",
                "W_out", "b_out")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class LstmArch:
    d_in: int
    d_hidden: int
    d_out: int
    m: int
    use_theta: bool = True  # False: window carries resolved history only


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    clip_norm: float = 5.0
    validation_fraction: float = 0.1
    val_every: int = 50
    input_noise_rel_var: float = 0.0  # jitter on inputs and targets, per batch
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be >= 1")


def init_params(arch: LstmArch, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, din = arch.d_hidden, arch.d_in
    width = d + din

    def gate():
        return rng.standard_normal((d, width)) / math.sqrt(width)

    params = {
        "W_f": gate(), "W_i": gate(), "W_o": gate(), "W_c": gate(),
        "b_f": np.ones(d),  # open forget gate at init
        "b_i": np.zeros(d), "b_o": np.zeros(d), "b_c": np.zeros(d),
        "W_out": rng.standard_normal((arch.d_out, d)) / math.sqrt(d),
        "b_out": np.zeros(arch.d_out),
    }
    return params


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_cell(h, C, z, params):
    """One cell update; pure function of (h, C, z, params)."""
    zcat = np.concatenate([np.atleast_2d(h), np.atleast_2d(z)], axis=-1)
    f = _sigmoid(zcat @ params["W_f"].T + params["b_f"])
    i = _sigmoid(zcat @ params["W_i"].T + params["b_i"])
    o = _sigmoid(zcat @ params["W_o"].T + params["b_o"])
    g = np.tanh(zcat @ params["W_c"].T + params["b_c"])
    C_new = f * np.atleast_2d(C) + i * g
    h_new = o * np.tanh(C_new)
    if np.ndim(h) == 1:
        return h_new[0], C_new[0]
    return h_new, C_new


def lstm_forward(params: dict, windows: np.ndarray) -> np.ndarray:
    """Readout after m+1 cells, zero initial state.  windows: (B, m+1, d_in)."""
    return _forward_cached(params, windows)[0]


def _forward_cached(params, windows):
    b, n_cells, _ = windows.shape
    d = params["W_f"].shape[0]
    h = np.zeros((b, d))
    C = np.zeros((b, d))
    cache = []
    for t in range(n_cells):
        zcat = np.concatenate([h, windows[:, t, :]], axis=1)
        f = _sigmoid(zcat @ params["W_f"].T + params["b_f"])
        i = _sigmoid(zcat @ params["W_i"].T + params["b_i"])
        o = _sigmoid(zcat @ params["W_o"].T + params["b_o"])
        g = np.tanh(zcat @ params["W_c"].T + params["b_c"])
        C_new = f * C + i * g
        tc = np.tanh(C_new)
        h_new = o * tc
        cache.append((zcat, f, i, o, g, C, tc))
        h, C = h_new, C_new
    pred = h @ params["W_out"].T + params["b_out"]
    return pred, (cache, h)


def mse_loss(params: dict, windows: np.ndarray, targets: np.ndarray) -> float:
    pred = lstm_forward(params, windows)
    return float(np.mean((pred - targets) ** 2))


def bptt_grad(params: dict, windows: np.ndarray, targets: np.ndarray
              ) -> tuple[dict[str, np.ndarray], float]:
    """Exact reverse-mode gradient of mse_loss; returns (grads, loss)."""
    pred, (cache, h_last) = _forward_cached(params, windows)
    b, d_out = pred.shape
    diff = pred - targets
    loss = float(np.mean(diff ** 2))
    dpred = (2.0 / (b * d_out)) * diff

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    grads["W_out"] = dpred.T @ h_last
    grads["b_out"] = dpred.sum(axis=0)
    dh = dpred @ params["W_out"]
    d = params["W_f"].shape[0]
    dC = np.zeros_like(dh)
    for t in range(len(cache) - 1, -1, -1):
        zcat, f, i, o, g, C_prev, tc = cache[t]
        do = dh * tc
        dC = dC + dh * o * (1.0 - tc * tc)
        df = dC * C_prev
        di = dC * g
        dg = dC * i
        daf = df * f * (1.0 - f)
        dai = di * i * (1.0 - i)
        dao = do * o * (1.0 - o)
        dac = dg * (1.0 - g * g)
        grads["W_f"] += daf.T @ zcat
        grads["W_i"] += dai.T @ zcat
        grads["W_o"] += dao.T @ zcat
        grads["W_c"] += dac.T @ zcat
        grads["b_f"] += daf.sum(axis=0)
        grads["b_i"] += dai.sum(axis=0)
        grads["b_o"] += dao.sum(axis=0)
        grads["b_c"] += dac.sum(axis=0)
        dzcat = daf @ params["W_f"] + dai @ params["W_i"] \
            + dao @ params["W_o"] + dac @ params["W_c"]
        dh = dzcat[:, :d]
        dC = dC * f
    return grads, loss


@dataclass
class LstmModel:
    """Trained recurrent regressor satisfying the estimator contract."""

    arch: LstmArch
    params: dict[str, np.ndarray]
    mean: np.ndarray   # per input channel
    scale: np.ndarray
    residual_variance: np.ndarray
    train_config: TrainConfig | None = None
    training_log: list = field(default_factory=list)  # (iter, train, val)
    kind: str = "lstm"

    @property
    def m(self) -> int:
        return self.arch.m

    @property
    def input_dim(self) -> int:
        return (self.arch.m + 1) * self.arch.d_in

    @property
    def output_dim(self) -> int:
        return self.arch.d_out

    def _windows_from_hist(self, x_hist: np.ndarray, theta_hist: np.ndarray
                           ) -> np.ndarray:
        if self.arch.use_theta:
            w = np.concatenate([x_hist, theta_hist], axis=2)
        else:
            w = np.asarray(x_hist, dtype=np.float64)
        if w.shape[1] != self.arch.m + 1 or w.shape[2] != self.arch.d_in:
            raise ValueError(
                f"window shape {w.shape[1:]} does not match "
                f"(m+1, d_in)=({self.arch.m + 1}, {self.arch.d_in})")
        return (w - self.mean) / self.scale

    def predict_batch(self, x_hist: np.ndarray, theta_hist: np.ndarray) -> np.ndarray:
        return lstm_forward(self.params,
                            self._windows_from_hist(x_hist, theta_hist))

    def predict(self, z: DelayVector) -> np.ndarray:
        def as_real(a):
            return complex_to_interleaved(a) if np.iscomplexobj(a) else np.asarray(a)

        out = self.predict_batch(as_real(z.x_hist)[None],
                                 as_real(z.theta_hist)[None])
        return out[0]

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": CHECKPOINT_FORMAT,
            "kind": self.kind,
            "arch": {"d_in": self.arch.d_in, "d_hidden": self.arch.d_hidden,
                     "d_out": self.arch.d_out, "m": self.arch.m,
                     "use_theta": self.arch.use_theta},
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "residual_variance": self.residual_variance.tolist(),
            "train_config": None if self.train_config is None else {
                "iterations": self.train_config.iterations,
                "batch_size": self.train_config.batch_size,
                "learning_rate": self.train_config.learning_rate,
                "seed": self.train_config.seed,
                "clip_norm": self.train_config.clip_norm,
                "validation_fraction": self.train_config.validation_fraction,
                "input_noise_rel_var": self.train_config.input_noise_rel_var,
            },
            "weights": {k: list(v.shape) for k, v in self.params.items()},
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
        for k, v in self.params.items():
            (directory / f"{k}.bin").write_bytes(
                np.ascontiguousarray(v, dtype="<f8").tobytes())
        log_lines = ["iteration,train_loss,val_loss"]
        log_lines += [f"{it},{tr:.10e},{va:.10e}" for it, tr, va in self.training_log]
        (directory / "training_log.csv").write_text("\n".join(log_lines) + "\n")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "LstmModel":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest["format_version"] != CHECKPOINT_FORMAT:
            raise ValueError("unsupported checkpoint format")
        arch = LstmArch(**manifest["arch"])
        params = {}
        for k, shape in manifest["weights"].items():
            buf = np.frombuffer((directory / f"{k}.bin").read_bytes(), dtype="<f8")
            params[k] = buf.reshape(shape).copy()
        tc = manifest.get("train_config")
        return cls(arch=arch, params=params,
                   mean=np.array(manifest["mean"]),
                   scale=np.array(manifest["scale"]),
                   residual_variance=np.array(manifest["residual_variance"]),
                   train_config=TrainConfig(**tc) if tc else None,
                   kind=manifest["kind"])


def _dataset_windows(data: DelayDataset, use_theta: bool) -> np.ndarray:
    if use_theta:
        return np.concatenate([data.inputs_x, data.inputs_theta], axis=2)
    return data.inputs_x


def train(data: DelayDataset, cfg: TrainConfig, d_hidden: int,
          use_theta: bool = True, standardize: bool = True) -> LstmModel:
    """Adam with gradient clipping and best-validation checkpointing.

    Inputs are standardized per channel; targets stay in physical units so the
    training residual is directly the closure noise variance estimate.
    """
    windows = _dataset_windows(data, use_theta)
    targets = np.atleast_2d(data.targets)
    n = windows.shape[0]
    n_val = int(round(cfg.validation_fraction * n))
    n_train = n - n_val
    if n_train < 1:
        raise ValueError("validation split leaves no training pairs")

    if standardize:
        mean = windows[:n_train].reshape(-1, windows.shape[2]).mean(axis=0)
        scale = windows[:n_train].reshape(-1, windows.shape[2]).std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    else:
        mean = np.zeros(windows.shape[2])
        scale = np.ones(windows.shape[2])
    win_std = (windows - mean) / scale

    arch = LstmArch(d_in=windows.shape[2], d_hidden=d_hidden,
                    d_out=targets.shape[1], m=data.m, use_theta=use_theta)
    rng = make_rng(cfg.seed)
    params = init_params(arch, rng)
    adam_m = {k: np.zeros_like(v) for k, v in params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in params.items()}

    tr_win, tr_y = win_std[:n_train], targets[:n_train]
    va_win, va_y = win_std[n_train:], targets[n_train:]
    target_noise = np.sqrt(cfg.input_noise_rel_var) * targets[:n_train].std(axis=0)

    def val_loss(p):
        if n_val == 0:
            return math.nan
        return mse_loss(p, va_win, va_y)

    best = {k: v.copy() for k, v in params.items()}
    best_val = math.inf
    log = []
    for it in range(cfg.iterations):
        idx = rng.integers(0, n_train, size=min(cfg.batch_size, n_train))
        wb = tr_win[idx]
        yb = tr_y[idx]
        if cfg.input_noise_rel_var > 0:
            # jitter regularization: same relative variance on (standardized)
            # inputs and on targets, fresh draws every batch
            wb = wb + math.sqrt(cfg.input_noise_rel_var) * rng.standard_normal(wb.shape)
            yb = yb + target_noise * rng.standard_normal(yb.shape)
        grads, loss = bptt_grad(params, wb, yb)
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became non-finite at iteration {it}")

        gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if cfg.clip_norm > 0 and gnorm > cfg.clip_norm:
            for g in grads.values():
                g *= cfg.clip_norm / gnorm

        lr = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * it / cfg.iterations))
        t = it + 1
        for k in params:
            adam_m[k] = cfg.beta1 * adam_m[k] + (1 - cfg.beta1) * grads[k]
            adam_v[k] = cfg.beta2 * adam_v[k] + (1 - cfg.beta2) * grads[k] ** 2
            mhat = adam_m[k] / (1 - cfg.beta1 ** t)
            vhat = adam_v[k] / (1 - cfg.beta2 ** t)
            params[k] -= lr * mhat / (np.sqrt(vhat) + cfg.eps)

        if (it + 1) % cfg.val_every == 0 or it == cfg.iterations - 1:
            _, (_, h_last) = _forward_cached(params, wb[: min(8, len(wb))])
            assert np.all(np.abs(h_last) < 1.0), "hidden state left (-1, 1)"
            vl = val_loss(params)
            log.append((it + 1, loss, vl))
            if n_val and vl < best_val:
                best_val = vl
                best = {k: v.copy() for k, v in params.items()}

    if n_val == 0:
        best = params
    model = LstmModel(arch=arch, params=best, mean=mean, scale=scale,
                      residual_variance=np.zeros(targets.shape[1]),
                      train_config=cfg, training_log=log)
    resid = model_residuals(model, win_std[:n_train], tr_y)
    model.residual_variance = resid
    return model


def model_residuals(model: LstmModel, win_std: np.ndarray, targets: np.ndarray,
                    block: int = 4096) -> np.ndarray:
    sq = np.zeros(targets.shape[1])
    for lo in range(0, win_std.shape[0], block):
        pred = lstm_forward(model.params, win_std[lo:lo + block])
        r = pred - targets[lo:lo + block]
        sq += np.sum(r * r, axis=0)
    return sq / win_std.shape[0]


def residual_variance_on(model, data: DelayDataset, block: int = 4096) -> np.ndarray:
    """Mean squared prediction residual per output component over a dataset."""
    targets = np.atleast_2d(data.targets)
    sq = np.zeros(targets.shape[1])
    n = len(data)
    for lo in range(0, n, block):
        pred = model.predict_batch(data.inputs_x[lo:lo + block],
                                   data.inputs_theta[lo:lo + block])
        r = pred - targets[lo:lo + block]
        sq += np.sum(r * r, axis=0)
    return sq / n
