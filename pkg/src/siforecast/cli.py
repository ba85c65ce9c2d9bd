"""Experiment driver.

Subcommands ``synth2d``, ``ar-bench``, ``forecast``, ``sample`` and ``eval``.
Each run writes a directory with the resolved config snapshot, checkpoints,
loss traces, samples, metrics and a seed manifest.

Exit status: 0 success, 2 config error, 3 data error, 4 divergence.
Set ``SIFORECAST_LOG`` (DEBUG, INFO, WARNING) for log verbosity.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, defaults, load_config, validate
from .data import ArSpec, MultivariateSeries, gen_2d, gen_ar, load_csv, write_csv
from .exceptions import (
    ConfigError,
    ContractError,
    DataError,
    SolverDivergenceError,
    TrainingDivergenceError,
)
from .forecaster import ConditionalForecaster, ForecastSamples, write_forecast_csv
from .generative.estimator import GenerativeModel
from .metrics import (
    MAX_EXACT_WASSERSTEIN,
    MetricReport,
    ar_param_error,
    crps_sum,
    fit_ar,
    mmd,
    nd_sum,
    nrmse_sum,
    sliced_wasserstein,
    subsample,
    wasserstein,
)
from .numerics import load_checkpoint, save_checkpoint

log = logging.getLogger("siforecast")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


def run_seeds(root_seed, run):
    """Independent (data, model, sampling) seeds for run ``run``."""
    state = np.random.SeedSequence([int(root_seed), int(run)]).generate_state(3)
    return tuple(int(v) for v in state)


def _write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for it, value in enumerate(trace):
            writer.writerow([it, repr(float(value))])


def _write_run_metrics(run_dir, metrics):
    # undefined scores are stored as null, never as a bare NaN token
    clean = {k: v if not isinstance(v, float) or np.isfinite(v) else None
             for k, v in metrics.items()}
    with open(run_dir / "metrics.json", "w") as fh:
        json.dump(clean, fh, indent=2)
        fh.write("\n")


def _write_manifest(out, cfg, argv):
    manifest = {
        "command": cfg.kind,
        "argv": list(argv),
        "root_seed": cfg.train.seed,
        "run_seeds": [list(run_seeds(cfg.train.seed, k)) for k in range(cfg.train.n_runs)],
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _prepare(cfg, out, argv):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    _write_manifest(out, cfg, argv)


def _map_runs(fn, cfg, out, jobs):
    args = [(cfg.as_dict(), str(out), k) for k in range(cfg.train.n_runs)]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


# -- two-sample scores ------------------------------------------------------------


def two_sample_metrics(samples, reference):
    """Exact and sliced Wasserstein plus both MMDs, on equal-size sets."""
    n = min(len(samples), len(reference), MAX_EXACT_WASSERSTEIN)
    a, b = subsample(samples, n, seed=0), subsample(reference, n, seed=1)
    return {
        "wasserstein": wasserstein(a, b),
        "swd": sliced_wasserstein(a, b),
        "mmd_rbf": mmd(a, b, "rbf"),
        "mmd_multiscale": mmd(a, b, "multiscale"),
    }


# -- synth2d --------------------------------------------------------------------------


def generative_model(cfg, seed):
    m, t, s = cfg.model, cfg.train, cfg.solver
    return GenerativeModel(
        method=m.method, interp=m.interp, gamma=m.gamma, ddpm_schedule=m.ddpm_schedule,
        hidden_dim=m.hidden_dim, n_blocks=m.n_blocks, time_dim=m.time_dim, n_iter=t.n_iter,
        batch_size=t.batch_size, lr=t.lr, lr_schedule=t.lr_schedule, max_grad_norm=t.max_grad_norm,
        epsilon=s.epsilon, solver_steps=s.steps, clip_delta=s.clip_delta, random_state=seed,
    )


def _synth2d_run(values, out, k):
    cfg = RunConfig(values)
    data_seed, model_seed, sample_seed = run_seeds(cfg.train.seed, k)
    run_dir = Path(out) / f"run{k}"
    run_dir.mkdir(exist_ok=True)
    train = gen_2d(cfg.data.dataset, cfg.data.n_train, data_seed)
    held_out = gen_2d(cfg.data.dataset, cfg.data.n_eval, data_seed + 1)
    model = generative_model(cfg, model_seed).fit(train)
    samples = model.sample(cfg.data.n_eval, random_state=sample_seed)
    save_checkpoint(run_dir / "checkpoint.bin", model.store_)
    _write_loss_trace(run_dir / "loss_trace.csv", model.loss_trace_)
    write_csv(run_dir / "samples.csv", MultivariateSeries(samples))
    write_csv(run_dir / "reference.csv", MultivariateSeries(held_out))
    metrics = two_sample_metrics(samples, held_out)
    _write_run_metrics(run_dir, metrics)
    log.info("synth2d run %d: %s", k, metrics)
    return model.schedule_name, metrics


def cmd_synth2d(cfg, out, jobs=1, argv=()):
    _prepare(cfg, out, argv)
    results = _map_runs(_synth2d_run, cfg, out, jobs)
    report = MetricReport()
    for _, metrics in results:
        report.update(metrics)
    report.write(out / "metrics.json")
    summary = report.summary()
    with open(out / "table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["schedule", cfg.data.dataset])
        writer.writerow([results[0][0], repr(summary["wasserstein"]["mean"])])
    return report


# -- ar-bench -------------------------------------------------------------------------


def forecaster(cfg, seed):
    m, t, s = cfg.model, cfg.train, cfg.solver
    return ConditionalForecaster(
        method=m.method, interp=m.interp, gamma=m.gamma, vanilla=m.vanilla,
        ddpm_schedule=m.ddpm_schedule, context_length=m.context_length,
        encoder_hidden=m.encoder_hidden, encoder_layers=m.encoder_layers,
        hidden_dim=m.hidden_dim, n_blocks=m.n_blocks, time_dim=m.time_dim, n_iter=t.n_iter,
        batch_size=t.batch_size, lr=t.lr, lr_schedule=t.lr_schedule, max_grad_norm=t.max_grad_norm,
        epsilon=s.epsilon, solver_steps=s.steps, clip_delta=s.clip_delta,
        context_includes_source=m.context_includes_source, random_state=seed,
    )


def _ar_run(values, out, k):
    cfg = RunConfig(values)
    d = cfg.data
    data_seed, model_seed, sample_seed = run_seeds(cfg.train.seed, k)
    run_dir = Path(out) / f"run{k}"
    run_dir.mkdir(exist_ok=True)
    series = gen_ar(ArSpec(d.ar_coeffs, d.ar_sigma, d.ar_length, data_seed))
    model = forecaster(cfg, model_seed).fit(series)
    rollout = model.forecast(series.values, d.rollout_length, d.rollout_paths,
                             random_state=sample_seed)
    fitted = fit_ar(rollout.samples[:, :, 0], len(d.ar_coeffs))
    error = ar_param_error(d.ar_coeffs, fitted)
    _write_run_metrics(run_dir, {"ar_error": error, "fitted": fitted.tolist()})
    save_checkpoint(run_dir / "checkpoint.bin", model.store_)
    _write_loss_trace(run_dir / "loss_trace.csv", model.loss_trace_)
    names = [f"path{i}" for i in range(rollout.n_paths)]
    paths = MultivariateSeries(rollout.samples[:, :, 0].T, names=names)
    write_csv(run_dir / "samples.csv", paths)
    log.info("ar-bench run %d: fitted %s error %.4f", k, fitted, error)
    return model.head_.name, fitted.tolist(), error


def cmd_ar_bench(cfg, out, jobs=1, argv=()):
    _prepare(cfg, out, argv)
    results = _map_runs(_ar_run, cfg, out, jobs)
    report = MetricReport()
    for _, fitted, error in results:
        report.add("ar_error", error)
        for i, phi in enumerate(fitted, start=1):
            report.add(f"phi{i}", phi)
    report.write(out / "metrics.json")
    summary = report.summary()["ar_error"]
    with open(out / "table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["schedule", "ar_error_mean", "ar_error_std"])
        std = "" if summary["std"] is None else repr(summary["std"])
        writer.writerow([results[0][0], repr(summary["mean"]), std])
    return report


# -- forecast -----------------------------------------------------------------------


def forecast_metrics(fs):
    return {"crps_sum": crps_sum(fs), "nd_sum": nd_sum(fs), "nrmse_sum": nrmse_sum(fs)}


def _forecast_run(values, out, k):
    cfg = RunConfig(values)
    d = cfg.data
    _, model_seed, sample_seed = run_seeds(cfg.train.seed, k)
    run_dir = Path(out) / f"run{k}"
    run_dir.mkdir(exist_ok=True)
    series = load_csv(d.csv, d.freq)
    if series.length <= d.horizon:
        raise DataError(f"{d.csv}: {series.length} rows leave no history for horizon {d.horizon}")
    history, _ = series.split((series.length - d.horizon) / series.length)
    targets = series.values[-d.horizon:]
    stamps = series.timestamps[-d.horizon:]
    model = forecaster(cfg, model_seed).fit(history)
    if d.oracle:
        fs = ForecastSamples(np.repeat(targets[None], d.n_samples, axis=0), targets, stamps)
    else:
        fs = model.forecast(history.values, d.horizon, d.n_samples, random_state=sample_seed,
                            targets=targets, timestamps=stamps)
    save_checkpoint(run_dir / "checkpoint.bin", model.store_)
    _write_loss_trace(run_dir / "loss_trace.csv", model.loss_trace_)
    write_forecast_csv(run_dir / "forecast.csv", fs)
    metrics = forecast_metrics(fs)
    _write_run_metrics(run_dir, metrics)
    log.info("forecast run %d: %s", k, metrics)
    return model.head_.name, metrics


def cmd_forecast(cfg, out, jobs=1, argv=()):
    _prepare(cfg, out, argv)
    results = _map_runs(_forecast_run, cfg, out, jobs)
    report = MetricReport()
    for _, metrics in results:
        report.update(metrics)
    report.write(out / "metrics.json")
    return report


# -- sample / eval --------------------------------------------------------------------


def cmd_sample(cfg, checkpoint, out, run=0, argv=()):
    """Regenerate synth2d samples from a checkpoint without retraining."""
    if cfg.kind != "synth2d":
        raise ConfigError("sample supports synth2d run configs only")
    _, model_seed, sample_seed = run_seeds(cfg.train.seed, run)
    model = generative_model(cfg, model_seed).build(2)
    model.store_.load_state_dict(load_checkpoint(checkpoint))
    samples = model.sample(cfg.data.n_eval, random_state=sample_seed)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "samples.csv", MultivariateSeries(samples))
    return samples


def cmd_eval(samples_path, reference_path, out):
    samples = load_csv(samples_path).values
    reference = load_csv(reference_path).values
    if samples.shape[1] != reference.shape[1]:
        raise DataError(f"dimension mismatch: {samples.shape[1]} vs {reference.shape[1]}")
    report = MetricReport()
    report.update(two_sample_metrics(samples, reference))
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "metrics.json")
    return report


# -- entry point --------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="siforecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth2d", "ar-bench", "forecast"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI run config (defaults if omitted)")
        p.add_argument("--out", type=Path, required=True, help="run directory")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--jobs", type=int, default=1, help="run seeds in parallel processes")
    p = sub.add_parser("sample")
    p.add_argument("--config", type=Path, required=True, help="config snapshot of a synth2d run")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--run", type=int, default=0, help="run index the checkpoint belongs to")
    p = sub.add_parser("eval")
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, help="accepted for symmetry; unused")
    p.add_argument("--seed", type=int, help="accepted for symmetry; unused")
    return parser


def _resolve_config(args, kind):
    if args.config is None:
        cfg = RunConfig(defaults(kind))
    else:
        cfg = load_config(args.config, kind=kind)
    if args.seed is not None:
        cfg = cfg.replace("train", seed=args.seed)
    validate(cfg)
    return cfg


def run(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.command == "eval":
        return cmd_eval(args.samples, args.reference, args.out)
    if args.command == "sample":
        cfg = _resolve_config(args, None)
        return cmd_sample(cfg, args.checkpoint, args.out, args.run, argv)
    cfg = _resolve_config(args, args.command)
    commands = {"synth2d": cmd_synth2d, "ar-bench": cmd_ar_bench, "forecast": cmd_forecast}
    return commands[args.command](cfg, args.out, max(1, args.jobs), argv)


def _configure_logging():
    level = os.environ.get("SIFORECAST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _configure_logging()
    try:
        run(argv)
    except (ConfigError, ContractError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except DataError as exc:
        return _fail(EXIT_DATA, exc)
    except (TrainingDivergenceError, SolverDivergenceError) as exc:
        return _fail(EXIT_DIVERGENCE, exc)
    return EXIT_OK


def _fail(code, exc):
    message = " ".join(str(exc).split())
    print(f"error[{code}] {type(exc).__name__}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
