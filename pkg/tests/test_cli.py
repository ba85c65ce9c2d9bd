import csv
import json
import math

import numpy as np
import pytest

from siforecast.cli import main, run_seeds, forecaster
from siforecast.config import (
    ConfigError,
    RunConfig,
    defaults,
    load_config,
    parse_config,
)
from siforecast.data import ArSpec, MultivariateSeries, gen_ar, load_csv, write_csv
from siforecast.forecaster import ForecastSamples
from siforecast.metrics import crps_sum, mmd, nd_sum, nrmse_sum, sliced_wasserstein, wasserstein

SYNTH = """
[run]
kind = synth2d
[model]
method = {method}
hidden_dim = 8
n_blocks = 1
time_dim = 4
[train]
n_iter = {n_iter}
batch_size = 32
n_runs = {n_runs}
[solver]
steps = 5
[data]
dataset = moons
n_train = 200
n_eval = 60
"""

AR = """
[run]
kind = ar-bench
[model]
hidden_dim = 8
n_blocks = 1
time_dim = 4
encoder_hidden = 4
context_length = 3
[train]
n_iter = 5
batch_size = 16
[solver]
steps = 4
[data]
ar_length = 120
rollout_paths = 3
rollout_length = 30
"""

FORECAST = """
[run]
kind = forecast
[model]
method = {method}
hidden_dim = 8
n_blocks = 1
time_dim = 4
encoder_hidden = 4
context_length = 3
[train]
n_iter = 5
batch_size = 16
[solver]
steps = 4
[data]
csv = {csv}
horizon = {horizon}
n_samples = 9
oracle = {oracle}
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def _ar_csv(tmp_path, length=150):
    series = gen_ar(ArSpec((0.8,), 1.0, length, seed=3))
    series.values = series.values + 5.0
    path = tmp_path / "ar.csv"
    write_csv(path, series)
    return path


def _artifacts(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


# -- config ---------------------------------------------------------------------------------


def test_config_round_trip_through_ini():
    for kind in ("synth2d", "ar-bench"):
        cfg = RunConfig(defaults(kind))
        assert parse_config(cfg.to_ini()).as_dict() == cfg.as_dict()


def test_config_snapshot_round_trip_forecast(tmp_path):
    cfg = parse_config(FORECAST.format(method="fm", csv="x.csv", horizon=2, oracle="false"))
    assert parse_config(cfg.to_ini()).as_dict() == cfg.as_dict()
    assert cfg.train.lr is None and cfg.model.context_includes_source is None


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[train]\nlearning_rate = 1\n",
    "[train]\nn_iter = many\n",
    "[model]\nmethod = vae\n",
    "[solver]\nclip_delta = 0.5\n",
    "[data]\ndataset = spirals\n",
    "[run]\nkind = nonsense\n",
    "no section header\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_auto_and_bool_values():
    cfg = parse_config("[train]\nlr = auto\n[model]\nvanilla = yes\ncontext_includes_source = off\n")
    assert cfg.train.lr is None and cfg.model.vanilla is True
    assert cfg.model.context_includes_source is False
    assert parse_config("[data]\nar_coeffs = 0.5, 0.2\n", kind="ar-bench").data.ar_coeffs == (0.5, 0.2)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_run_seeds_are_distinct_and_stable():
    assert run_seeds(0, 0) == run_seeds(0, 0)
    assert len({run_seeds(0, k) for k in range(5)}) == 5
    assert len(set(run_seeds(7, 1))) == 3


# -- synth2d ----------------------------------------------------------------------------------


def test_synth2d_zero_iterations_smoke(tmp_path):
    cfg = _write(tmp_path, "c.ini", SYNTH.format(method="fm", n_iter=0, n_runs=1))
    out = tmp_path / "out"
    assert main(["synth2d", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("config.ini", "manifest.json", "metrics.json", "table.csv"):
        assert (out / name).exists()
    for name in ("checkpoint.bin", "loss_trace.csv", "samples.csv", "reference.csv"):
        assert (out / "run0" / name).exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) == {"wasserstein", "swd", "mmd_rbf", "mmd_multiscale"}
    assert all(math.isfinite(v["mean"]) for v in metrics.values())
    assert (out / "table.csv").read_text().splitlines()[0] == "schedule,moons"


def test_synth2d_aggregates_runs(tmp_path):
    cfg = _write(tmp_path, "c.ini", SYNTH.format(method="si", n_iter=2, n_runs=3))
    out = tmp_path / "out"
    assert main(["synth2d", "--config", str(cfg), "--out", str(out)]) == 0
    w = json.loads((out / "metrics.json").read_text())["wasserstein"]
    assert w["runs"] == 3 and w["std"] is not None and w["std"] >= 0.0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["run_seeds"]) == 3
    assert "si(sqrt,linear)" in (out / "table.csv").read_text()


@pytest.mark.parametrize("method", ["ddpm", "sgm", "fm", "si"])
def test_synth2d_bitwise_reproducible_from_snapshot(tmp_path, method):
    cfg = _write(tmp_path, "c.ini", SYNTH.format(method=method, n_iter=3, n_runs=2))
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["synth2d", "--config", str(cfg), "--out", str(first), "--seed", "5"]) == 0
    snapshot = first / "config.ini"
    assert main(["synth2d", "--config", str(snapshot), "--out", str(second)]) == 0
    assert _artifacts(first) == _artifacts(second)


def test_parallel_runs_match_sequential(tmp_path):
    cfg = _write(tmp_path, "c.ini", SYNTH.format(method="fm", n_iter=3, n_runs=2))
    seq, par = tmp_path / "seq", tmp_path / "par"
    assert main(["synth2d", "--config", str(cfg), "--out", str(seq)]) == 0
    assert main(["synth2d", "--config", str(cfg), "--out", str(par), "--jobs", "2"]) == 0
    assert _artifacts(seq) == _artifacts(par)


# -- sample / eval ------------------------------------------------------------------------------


def test_sample_regenerates_run_samples(tmp_path):
    cfg = _write(tmp_path, "c.ini", SYNTH.format(method="sgm", n_iter=3, n_runs=2))
    out = tmp_path / "out"
    assert main(["synth2d", "--config", str(cfg), "--out", str(out)]) == 0
    outputs = []
    for k in range(2):
        dest = tmp_path / f"s{k}"
        args = ["sample", "--config", str(out / "config.ini"), "--out", str(dest),
                "--checkpoint", str(out / "run1" / "checkpoint.bin"), "--run", "1"]
        assert main(args) == 0
        outputs.append((dest / "samples.csv").read_bytes())
    assert outputs[0] == outputs[1]
    assert outputs[0] == (out / "run1" / "samples.csv").read_bytes()


def test_eval_identical_sets_is_zero(tmp_path):
    path = tmp_path / "x.csv"
    write_csv(path, MultivariateSeries(np.random.default_rng(0).standard_normal((50, 2))))
    assert main(["eval", "--samples", str(path), "--reference", str(path),
                 "--out", str(tmp_path / "e")]) == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert {k: v["mean"] for k, v in metrics.items()} == {
        "wasserstein": 0.0, "swd": 0.0, "mmd_rbf": 0.0, "mmd_multiscale": 0.0}


def test_eval_matches_in_process_metrics(tmp_path):
    cfg = _write(tmp_path, "c.ini", SYNTH.format(method="fm", n_iter=3, n_runs=1))
    out = tmp_path / "out"
    assert main(["synth2d", "--config", str(cfg), "--out", str(out)]) == 0
    run_metrics = json.loads((out / "metrics.json").read_text())
    assert main(["eval", "--samples", str(out / "run0" / "samples.csv"),
                 "--reference", str(out / "run0" / "reference.csv"), "--out", str(tmp_path / "e")]) == 0
    evaluated = json.loads((tmp_path / "e" / "metrics.json").read_text())
    a = load_csv(out / "run0" / "samples.csv").values
    b = load_csv(out / "run0" / "reference.csv").values
    direct = {"wasserstein": wasserstein(a, b), "swd": sliced_wasserstein(a, b),
              "mmd_rbf": mmd(a, b, "rbf"), "mmd_multiscale": mmd(a, b, "multiscale")}
    for key, value in direct.items():
        assert evaluated[key]["mean"] == pytest.approx(value, abs=1e-12)
        assert evaluated[key]["mean"] == pytest.approx(run_metrics[key]["mean"], abs=1e-12)


# -- ar-bench -------------------------------------------------------------------------------------


def test_ar_bench_smoke_and_reproducibility(tmp_path):
    cfg = _write(tmp_path, "ar.ini", AR)
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["ar-bench", "--config", str(cfg), "--out", str(first)]) == 0
    assert main(["ar-bench", "--config", str(first / "config.ini"), "--out", str(second)]) == 0
    assert _artifacts(first) == _artifacts(second)
    header, row = csv.reader(open(first / "table.csv"))
    assert header == ["schedule", "ar_error_mean", "ar_error_std"]
    assert row[0] == "si(sqrt,linear)" and row[2] == ""
    metrics = json.loads((first / "metrics.json").read_text())
    assert math.isfinite(metrics["ar_error"]["mean"]) and "phi1" in metrics
    paths = load_csv(first / "run0" / "samples.csv")
    assert paths.values.shape == (30, 3)


# -- forecast --------------------------------------------------------------------------------------


@pytest.mark.parametrize("method", ["si", "fm"])
def test_forecast_pipeline_finite_and_reproducible(tmp_path, method):
    csv_path = _ar_csv(tmp_path)
    cfg = _write(tmp_path, "f.ini", FORECAST.format(method=method, csv=csv_path, horizon=5,
                                                     oracle="false"))
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["forecast", "--config", str(cfg), "--out", str(first)]) == 0
    metrics = json.loads((first / "metrics.json").read_text())
    assert set(metrics) == {"crps_sum", "nd_sum", "nrmse_sum"}
    assert all(math.isfinite(v["mean"]) for v in metrics.values())
    lines = (first / "run0" / "forecast.csv").read_text().splitlines()
    assert lines[0] == "timestamp,dim,target,q05,q25,q50,q75,q95,mean" and len(lines) == 6
    assert main(["forecast", "--config", str(first / "config.ini"), "--out", str(second)]) == 0
    assert _artifacts(first) == _artifacts(second)


def test_forecast_oracle_scores_zero(tmp_path):
    csv_path = _ar_csv(tmp_path)
    cfg = _write(tmp_path, "f.ini", FORECAST.format(method="si", csv=csv_path, horizon=4,
                                                     oracle="true"))
    out = tmp_path / "o"
    assert main(["forecast", "--config", str(cfg), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert {k: v["mean"] for k, v in metrics.items()} == {
        "crps_sum": 0.0, "nd_sum": 0.0, "nrmse_sum": 0.0}


def test_forecast_horizon_one_matches_direct_one_step(tmp_path):
    csv_path = _ar_csv(tmp_path)
    text = FORECAST.format(method="si", csv=csv_path, horizon=1, oracle="false")
    out = tmp_path / "h1"
    assert main(["forecast", "--config", str(_write(tmp_path, "f.ini", text)), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    cfg = parse_config(text)
    series = load_csv(csv_path)
    history = series.values[:-1]
    _, model_seed, sample_seed = run_seeds(cfg.train.seed, 0)
    model = forecaster(cfg, model_seed).fit(history)
    draws = model.predict_one_step(history, cfg.data.n_samples, random_state=sample_seed)
    fs = ForecastSamples(draws[:, None, :], series.values[-1:])
    assert metrics["crps_sum"]["mean"] == crps_sum(fs)
    assert metrics["nd_sum"]["mean"] == nd_sum(fs)
    assert metrics["nrmse_sum"]["mean"] == nrmse_sum(fs)


# -- exit codes ------------------------------------------------------------------------------------


def _single_error_line(capsys, code):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error[{code}] ")
    return err[0]


def test_exit_code_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.ini", "[train]\nn_iter = -1\n")
    assert main(["synth2d", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "n_iter" in _single_error_line(capsys, 2)
    assert main(["synth2d", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "o")]) == 2
    _single_error_line(capsys, 2)


def test_exit_code_data_error(tmp_path, capsys):
    bad = _write(tmp_path, "bad.csv", "timestamp,a\n0,1.0\n1,NaN\n")
    cfg = _write(tmp_path, "f.ini", FORECAST.format(method="si", csv=bad, horizon=1, oracle="false"))
    assert main(["forecast", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "line 3" in _single_error_line(capsys, 3)
    cfg = _write(tmp_path, "g.ini", FORECAST.format(method="si", csv=tmp_path / "absent.csv",
                                                     horizon=1, oracle="false"))
    assert main(["forecast", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    _single_error_line(capsys, 3)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_code_divergence(tmp_path, capsys):
    text = SYNTH.format(method="fm", n_iter=20, n_runs=1) + "\n"
    text = text.replace("[train]\n", "[train]\nlr = 1e300\n")
    cfg = _write(tmp_path, "d.ini", text)
    assert main(["synth2d", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4
    assert "TrainingDivergenceError" in _single_error_line(capsys, 4)


def test_sample_rejects_non_synth_configs(tmp_path, capsys):
    cfg = _write(tmp_path, "ar.ini", AR)
    args = ["sample", "--config", str(cfg), "--checkpoint", str(tmp_path / "x.bin"),
            "--out", str(tmp_path / "o")]
    assert main(args) == 2
    _single_error_line(capsys, 2)
