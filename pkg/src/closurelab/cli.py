"""Experiment driver: configuration, persistence, and reproducible pipelines.

Stages: simulate -> extract -> train -> predict -> stats, plus verify (the
rate experiments) and pipeline (all stages chained).  Every artifact carries
a provenance record naming the exact inputs (by content hash) and the config
hash that produced it; downstream stages refuse mismatched inputs.

Exit codes: 0 ok, 2 configuration/schema, 3 numerical blowup, 4 provenance.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from pathlib import Path

import click
import jsonschema
import numpy as np

from . import __version__
from .core import (NumericalBlowupError, TimeSeries, make_delay_dataset,
                   make_rng, read_mdts1, write_mdts1)
from .hermite import HermiteModel, fit_hermite
from .identify import residual_variance, training_pair
from .lstm import LstmModel, TrainConfig, train as train_lstm
from .predict import ClosureRun, closed_loop_run, recover_eta
from .stats import acf, energy_spectrum, kde_pdf, mean_exit_time, reaction_rate
from .systems import get_module
from .theory import RateExperiment, verify_strong_error_rates

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PROVENANCE = 4


class ConfigError(Exception):
    pass


class ProvenanceError(Exception):
    pass


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "data"],
    "properties": {
        "name": {"type": "string"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["id"],
            "properties": {
                "id": {"enum": ["langevin", "topo", "nls", "kse"]},
                "regime": {"enum": ["weak", "intermediate", "strong"]},
                "params": {"type": "object"},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_obs", "seed"],
            "properties": {
                "n_obs": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer"},
                "train_fraction": {"type": "number", "exclusiveMinimum": 0,
                                   "maximum": 1},
                "burn_time": {"type": "number", "minimum": 0},
                "extraction": {"enum": ["default", "exact", "subtraction",
                                        "finite_difference_fit"]},
                "gibbs": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_burn": {"type": "integer", "minimum": 1},
                        "n_thin": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer"},
                    },
                },
            },
        },
        "closure": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "m"],
            "properties": {
                "kind": {"enum": ["rkhs", "lstm"]},
                "m": {"type": "integer", "minimum": 0},
                "degrees": {"type": "array",
                            "items": {"type": "integer", "minimum": 0}},
                "total_degree": {"type": "integer", "minimum": 0},
                "hidden_dim": {"type": "integer", "minimum": 1},
                "use_theta": {"type": "boolean"},
                "train": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "iterations": {"type": "integer", "minimum": 1},
                        "batch_size": {"type": "integer", "minimum": 1},
                        "learning_rate": {"type": "number",
                                          "exclusiveMinimum": 0},
                        "seed": {"type": "integer"},
                        "clip_norm": {"type": "number", "minimum": 0},
                        "validation_fraction": {"type": "number",
                                                "minimum": 0, "maximum": 0.9},
                        "input_noise_rel_var": {"type": "number",
                                                "minimum": 0},
                    },
                },
            },
        },
        "prediction": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t_steps"],
            "properties": {
                "t_steps": {"type": "integer", "minimum": 1},
                "xi_policy": {"enum": ["off", "sampled", "realized"]},
                "eta_policy": {"enum": ["off", "sampled", "realized"]},
                "seed": {"type": "integer"},
            },
        },
        "stats": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "reports": {"type": "array",
                            "items": {"enum": ["acf", "pdf", "spectrum",
                                               "exit_time", "reaction_rate"]}},
                "max_lag": {"type": "integer", "minimum": 1},
                "column": {"type": "integer", "minimum": 0},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilons": {"type": "array", "items": {"type": "number"}},
                "t_grid": {"type": "array", "items": {"type": "integer"}},
                "ensemble": {"type": "integer", "minimum": 10},
                "seed": {"type": "integer"},
            },
        },
    },
}


def load_config(path: str, seed_override: int | None = None) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        pointer = "/" + "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"config schema violation at {pointer}: "
                          f"{exc.message}") from exc
    if seed_override is not None:
        cfg["data"]["seed"] = seed_override
    return cfg


def system_params(cfg: dict):
    block = cfg["system"]
    mod = get_module(block["id"])
    kwargs = dict(block.get("params", {}))
    if block["id"] == "topo" and "regime" in block:
        return mod.default_params(regime=block["regime"], **kwargs)
    try:
        return mod.default_params(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad system params: {exc}") from exc


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_provenance(artifact: Path, stage: str, cfg: dict,
                     inputs: dict[str, Path]) -> None:
    record = {
        "stage": stage,
        "tool_version": __version__,
        "config_sha256": config_hash(cfg),
        "artifact_sha256": sha256(artifact),
        "inputs": {label: sha256(p) for label, p in inputs.items()},
    }
    artifact.with_name(artifact.name + ".prov.json").write_text(
        json.dumps(record, indent=2, sort_keys=True))


def check_provenance(artifact: Path) -> None:
    """Verify an artifact against its record: its own content hash and the
    hashes of the inputs that produced it."""
    prov = artifact.with_name(artifact.name + ".prov.json")
    if not prov.exists():
        return  # hand-made inputs are allowed at the pipeline head
    record = json.loads(prov.read_text())
    own = record.get("artifact_sha256")
    if own and sha256(artifact) != own:
        raise ProvenanceError(
            f"{artifact}: content no longer matches its recorded hash")
    for label, digest in record.get("inputs", {}).items():
        candidate = artifact.parent / label
        if candidate.exists() and sha256(candidate) != digest:
            raise ProvenanceError(
                f"{artifact}: input {label} no longer matches its recorded "
                "hash")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def load_estimator(directory: Path):
    manifest = json.loads(
        _require(directory / "manifest.json", "checkpoint manifest").read_text())
    return (HermiteModel.load(directory) if manifest["kind"] == "rkhs"
            else LstmModel.load(directory))


# ---------------------------------------------------------------------------
# Stage implementations (shared by the subcommands and `pipeline`).
# ---------------------------------------------------------------------------


def stage_simulate(cfg, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    sid = cfg["system"]["id"]
    params = system_params(cfg)
    data = cfg["data"]
    n_obs, seed = data["n_obs"], data["seed"]
    mod = get_module(sid)
    if sid == "langevin":
        ts = mod.simulate(params, n_obs, seed)
    elif sid == "nls":
        g = data.get("gibbs", {})
        samples, _ = mod.gibbs_sample(params, g.get("seed", seed),
                                      g.get("n_burn", 20000),
                                      g.get("n_thin", 200))
        ts = mod.simulate(params, n_obs, samples[0], seed=seed)
    else:
        kwargs = {}
        if "burn_time" in data:
            kwargs["burn_time"] = data["burn_time"]
        ts = mod.simulate(params, n_obs, seed, **kwargs)
    path = out / "trajectory.mdts1"
    write_mdts1(path, ts, {"system": sid, "config": cfg,
                           "params": repr(params)})
    write_provenance(path, "simulate", cfg, {})
    return path


def stage_extract(cfg, data_dir: Path, out: Path) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    traj = _require(data_dir / "trajectory.mdts1", "trajectory")
    check_provenance(traj)
    full, _ = read_mdts1(traj)
    sid = cfg["system"]["id"]
    params = system_params(cfg)
    method = cfg["data"].get("extraction", "default")
    x, th = training_pair(full, sid, params, method)
    xp = out / "resolved.mdts1"
    tp = out / "theta.mdts1"
    write_mdts1(xp, x, {"system": sid, "role": "resolved"})
    write_mdts1(tp, th, {"system": sid, "role": "feedback",
                         "extraction": method})
    for p in (xp, tp):
        write_provenance(p, "extract", cfg, {"trajectory.mdts1": traj})
    return xp, tp


def _load_pair(data_dir: Path):
    xp = _require(data_dir / "resolved.mdts1", "resolved series")
    tp = _require(data_dir / "theta.mdts1", "feedback series")
    for p in (xp, tp):
        check_provenance(p)
    x, _ = read_mdts1(xp)
    th, _ = read_mdts1(tp)
    return x, th, xp, tp


def _split(x: TimeSeries, th: TimeSeries, fraction: float):
    n_train = max(2, int(round(fraction * x.n_steps)))
    head = lambda ts: TimeSeries(ts.values[:n_train], ts.dt, ts.var_names,
                                 ts.seed)
    tail = lambda ts: TimeSeries(ts.values[n_train:], ts.dt, ts.var_names,
                                 ts.seed)
    return (head(x), head(th)), (tail(x), tail(th))


def stage_train(cfg, data_dir: Path, out: Path) -> Path:
    if "closure" not in cfg:
        raise ConfigError("config has no closure block")
    x, th, xp, tp = _load_pair(data_dir)
    closure = cfg["closure"]
    m = closure["m"]
    (x_tr, th_tr), _ = _split(x, th, cfg["data"].get("train_fraction", 0.5))
    if x_tr.n_steps < m + 2:
        raise ConfigError("training split too short for the memory length")
    ds = make_delay_dataset(x_tr, th_tr, m,
                            {"system": cfg["system"]["id"]})
    if len(ds) == 0:
        raise ConfigError("empty training dataset")
    if closure["kind"] == "rkhs":
        degrees = closure.get("degrees", [5] * ds.input_dim)
        if len(degrees) == 1:
            degrees = degrees * ds.input_dim
        if len(degrees) != ds.input_dim:
            raise ConfigError(
                f"degrees length {len(degrees)} != input dim {ds.input_dim}")
        model = fit_hermite(ds, tuple(degrees),
                            closure.get("total_degree"))
    else:
        tc = TrainConfig(**closure.get("train", {}))
        model = train_lstm(ds, tc, closure.get("hidden_dim", 64),
                           use_theta=closure.get("use_theta", True))
    ck = out / "checkpoint"
    model.save(ck)
    write_provenance(ck / "manifest.json", "train", cfg,
                     {"resolved.mdts1": xp, "theta.mdts1": tp})
    return ck


def stage_predict(cfg, data_dir: Path, model_dir: Path, out: Path) -> Path:
    if "prediction" not in cfg:
        raise ConfigError("config has no prediction block")
    out.mkdir(parents=True, exist_ok=True)
    x, th, xp, tp = _load_pair(data_dir)
    check_provenance(model_dir / "manifest.json")
    est = load_estimator(model_dir)
    pred_cfg = cfg["prediction"]
    m = est.m
    if m != cfg.get("closure", {}).get("m", m):
        raise ConfigError("checkpoint memory length does not match config")
    _, (x_ver, th_ver) = _split(x, th, cfg["data"].get("train_fraction", 0.5))
    if x_ver.n_steps < m + 1:
        raise ConfigError("verification split shorter than the memory window")
    params = system_params(cfg)
    sid = cfg["system"]["id"]
    eta_policy = pred_cfg.get("eta_policy", "off")
    kwargs = {}
    if eta_policy == "realized" and sid == "topo":
        eta = recover_eta(x_ver, th_ver, params)
        kwargs["eta_realized"] = eta[m:]
    run = ClosureRun(
        sid, params, est, pred_cfg["t_steps"],
        x_hist0=x_ver.values[:m + 1], theta_hist0=th_ver.values[:m + 1],
        xi_policy=pred_cfg.get("xi_policy", "off"),
        eta_policy=eta_policy, seed=pred_cfg.get("seed", 0), **kwargs)
    res = closed_loop_run(run)
    path = out / "prediction.mdts1"
    write_mdts1(path, res.x, {"system": sid, "role": "closure-prediction",
                              "blowup_step": res.blowup_step,
                              "xi_policy": run.xi_policy,
                              "eta_policy": run.eta_policy})
    write_mdts1(out / "prediction_theta.mdts1", res.theta,
                {"system": sid, "role": "closure-feedback"})
    write_provenance(path, "predict", cfg, {
        "resolved.mdts1": xp, "theta.mdts1": tp,
        "manifest.json": model_dir / "manifest.json"})
    if res.blowup_step is not None:
        raise NumericalBlowupError("closure run blew up",
                                   step=res.blowup_step)
    return path


def stage_stats(cfg, traj_path: Path, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    check_provenance(traj_path)
    ts, manifest = read_mdts1(traj_path)
    stats_cfg = cfg.get("stats", {})
    reports = stats_cfg.get("reports", ["acf", "pdf"])
    col = stats_cfg.get("column", 0)
    max_lag = stats_cfg.get("max_lag", min(200, ts.n_steps - 1))
    written = []
    meta = {"source": traj_path.name, "column": col}
    scalars = {}
    for kind in reports:
        if kind == "acf":
            rep = acf(ts.values[:, col], max_lag, ts.dt, meta)
            written.append(rep.to_csv(out / "acf.csv"))
        elif kind == "pdf":
            rep = kde_pdf(ts.values[:, col], metadata=meta)
            written.append(rep.to_csv(out / "pdf.csv"))
        elif kind == "spectrum":
            rep = energy_spectrum(ts.to_complex(), meta)
            written.append(rep.to_csv(out / "spectrum.csv"))
        elif kind == "exit_time":
            scalars["mean_exit_time"] = mean_exit_time(ts.values[:, col],
                                                       dt=ts.dt)
        elif kind == "reaction_rate":
            scalars["reaction_rate"] = reaction_rate(ts.values[:, col],
                                                     dt=ts.dt)
    if scalars:
        path = out / "scalars.json"
        path.write_text(json.dumps(scalars, indent=2, sort_keys=True))
        written.append(path)
    for p in written:
        write_provenance(p, "stats", cfg, {traj_path.name: traj_path})
    return written


def stage_verify(cfg, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    v = cfg.get("verify", {})
    exp = RateExperiment(
        epsilons=tuple(v.get("epsilons", (0.003, 0.01, 0.03, 0.1))),
        t_grid=tuple(v.get("t_grid", (25, 50, 100, 150, 200))),
        ensemble=v.get("ensemble", 200), seed=v.get("seed", 0))
    res = verify_strong_error_rates(exp)
    path = out / "rates.json"
    path.write_text(json.dumps(res, indent=2, sort_keys=True, default=float))
    rows = ["epsilon,strong_error"]
    rows += [f"{e},{v:.10e}" for e, v in res["errors_vs_eps"].items()]
    (out / "rates_vs_eps.csv").write_text("\n".join(rows) + "\n")
    rows = ["t_steps,strong_error"]
    rows += [f"{t},{v:.10e}" for t, v in res["errors_vs_t"].items()]
    (out / "rates_vs_t.csv").write_text("\n".join(rows) + "\n")
    write_provenance(path, "verify", cfg, {})
    return path


# ---------------------------------------------------------------------------
# Command-line surface.
# ---------------------------------------------------------------------------


def _default_out() -> str:
    return os.environ.get("CLOSURELAB_OUT", ".")


def _run(fn):
    try:
        fn()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except ProvenanceError as exc:
        click.echo(f"provenance error: {exc}", err=True)
        sys.exit(EXIT_PROVENANCE)
    except NumericalBlowupError as exc:
        click.echo(f"numerical blowup: {exc} (step {exc.step})", err=True)
        sys.exit(EXIT_NUMERICAL)
    sys.exit(EXIT_OK)


common = [
    click.option("--config", "config_path", required=True,
                 type=click.Path(exists=False), help="JSON experiment config"),
    click.option("--out", "out_dir", default=None,
                 help="output directory (default: $CLOSURELAB_OUT)"),
    click.option("--seed-override", type=int, default=None),
    click.option("--threads", type=int, default=None,
                 help="cap worker threads for the compiled kernels"),
]


def with_common(cmd):
    for opt in reversed(common):
        cmd = opt(cmd)
    return cmd


def _setup(config_path, out_dir, seed_override, threads):
    if threads:
        import numba
        numba.set_num_threads(max(1, threads))
    cfg = load_config(config_path, seed_override)
    out = Path(out_dir or _default_out())
    return cfg, out


@click.group()
@click.version_option(__version__)
def main():
    """Closure-model experiment pipelines."""


@main.command()
@with_common
def simulate(config_path, out_dir, seed_override, threads):
    """Run the configured full model and store the trajectory."""
    def body():
        cfg, out = _setup(config_path, out_dir, seed_override, threads)
        path = stage_simulate(cfg, out)
        click.echo(f"wrote {path}")
    _run(body)


@main.command()
@with_common
@click.option("--data", "data_dir", required=True, type=click.Path())
def extract(config_path, out_dir, seed_override, threads, data_dir):
    """Extract the resolved series and the identifiable feedback."""
    def body():
        cfg, out = _setup(config_path, out_dir, seed_override, threads)
        xp, tp = stage_extract(cfg, Path(data_dir), out)
        click.echo(f"wrote {xp} and {tp}")
    _run(body)


@main.command()
@with_common
@click.option("--data", "data_dir", required=True, type=click.Path())
def train(config_path, out_dir, seed_override, threads, data_dir):
    """Fit the configured estimator on the training split."""
    def body():
        cfg, out = _setup(config_path, out_dir, seed_override, threads)
        ck = stage_train(cfg, Path(data_dir), out)
        click.echo(f"wrote {ck}")
    _run(body)


@main.command()
@with_common
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--model", "model_dir", required=True, type=click.Path())
def predict(config_path, out_dir, seed_override, threads, data_dir, model_dir):
    """Closed-loop closure run from the verification split."""
    def body():
        cfg, out = _setup(config_path, out_dir, seed_override, threads)
        path = stage_predict(cfg, Path(data_dir), Path(model_dir), out)
        click.echo(f"wrote {path}")
    _run(body)


@main.command()
@with_common
@click.option("--trajectory", "traj", required=True, type=click.Path())
def stats(config_path, out_dir, seed_override, threads, traj):
    """Diagnostics for a stored trajectory."""
    def body():
        cfg, out = _setup(config_path, out_dir, seed_override, threads)
        written = stage_stats(cfg, Path(traj), out)
        click.echo("\n".join(f"wrote {p}" for p in written))
    _run(body)


@main.command()
@with_common
def verify(config_path, out_dir, seed_override, threads):
    """Strong-error rate experiments on the double-well benchmark."""
    def body():
        cfg, out = _setup(config_path, out_dir, seed_override, threads)
        path = stage_verify(cfg, out)
        click.echo(f"wrote {path}")
    _run(body)


@main.command()
@with_common
def pipeline(config_path, out_dir, seed_override, threads):
    """All stages in sequence under one output root."""
    def body():
        cfg, out = _setup(config_path, out_dir, seed_override, threads)
        stage_simulate(cfg, out)
        stage_extract(cfg, out, out)
        target = out / "trajectory.mdts1"
        if "closure" in cfg:
            ck = stage_train(cfg, out, out)
            if "prediction" in cfg:
                target = stage_predict(cfg, out, ck, out)
        if "stats" in cfg:
            stage_stats(cfg, target, out)
        click.echo(f"pipeline complete under {out}")
    _run(body)


if __name__ == "__main__":
    main()
