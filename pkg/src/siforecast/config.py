"""Typed, sectioned run configuration.

Grammar (``configparser`` INI subset)::

    [section]
    key = value        ; or # comments on their own line

Every key has a default, so an empty file is valid.  Unknown sections or
keys are rejected.  Values are typed by the schema below: ``int``, ``float``,
``bool`` (true/false/yes/no/1/0), ``str``, ``floats`` (comma separated),
and optional variants that also accept ``auto`` or ``none``.  Some defaults
depend on ``run.kind``; :meth:`RunConfig.to_ini` writes the fully resolved
values, which is the snapshot stored with every run.
"""
from __future__ import annotations

import configparser
import copy
import io

from .exceptions import ConfigError

KINDS = ("synth2d", "ar-bench", "forecast")

# (type, default); "?" marks types that also accept auto / none
SCHEMA = {
    "run": {
        "kind": ("str", "synth2d"),
    },
    "model": {
        "method": ("str", "fm"),
        "interp": ("str", "linear"),
        "gamma": ("str", "sqrt"),
        "vanilla": ("bool", False),
        "ddpm_schedule": ("str", "linear"),
        "hidden_dim": ("int", 128),
        "n_blocks": ("int", 4),
        "time_dim": ("int", 32),
        "encoder_hidden": ("int", 128),
        "encoder_layers": ("int", 1),
        "context_length": ("int", 16),
        "context_includes_source": ("bool?", None),
    },
    "train": {
        "n_iter": ("int", 5000),
        "batch_size": ("int", 256),
        "lr": ("float?", None),
        "lr_schedule": ("str", "cosine"),
        "max_grad_norm": ("float?", None),
        "seed": ("int", 0),
        "n_runs": ("int", 1),
    },
    "solver": {
        "steps": ("int", 100),
        "epsilon": ("float", 0.5),
        "clip_delta": ("float", 1e-3),
    },
    "data": {
        "dataset": ("str", "moons"),
        "n_train": ("int", 50000),
        "n_eval": ("int", 2000),
        "ar_coeffs": ("floats", (0.8,)),
        "ar_sigma": ("float", 1.0),
        "ar_length": ("int", 2000),
        "csv": ("str", ""),
        "freq": ("str", ""),
        "horizon": ("int", 24),
        "n_samples": ("int", 100),
        "rollout_paths": ("int", 20),
        "rollout_length": ("int", 250),
        "oracle": ("bool", False),
    },
}

# per-kind defaults that differ from the schema defaults
PRESETS = {
    "synth2d": {},
    "ar-bench": {
        "model": {"method": "si", "hidden_dim": 64, "n_blocks": 2, "time_dim": 16,
                  "encoder_hidden": 64, "context_length": 8},
        "train": {"n_iter": 2000, "batch_size": 128, "lr": 1e-3, "lr_schedule": "cosine"},
        "solver": {"steps": 50, "epsilon": 0.35},
    },
    "forecast": {
        "model": {"method": "si", "hidden_dim": 64, "n_blocks": 2, "time_dim": 16},
        "train": {"n_iter": 2000, "batch_size": 128, "lr_schedule": "constant"},
        "solver": {"steps": 50},
    },
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse(kind, raw, where):
    text = raw.strip()
    optional = kind.endswith("?")
    base = kind.rstrip("?")
    if optional and text.lower() in ("auto", "none", ""):
        return None
    try:
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if base == "floats":
            return tuple(float(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None


def _format(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Section:
    """Attribute view of one config section."""

    def __init__(self, values):
        self.__dict__.update(values)

    def as_dict(self):
        return dict(self.__dict__)


class RunConfig:
    def __init__(self, values):
        self._values = values
        for name, section in values.items():
            setattr(self, name, Section(section))

    @property
    def kind(self):
        return self._values["run"]["kind"]

    def as_dict(self):
        return copy.deepcopy(self._values)

    def replace(self, section, **updates):
        values = self.as_dict()
        for key, value in updates.items():
            if key not in values[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            values[section][key] = value
        return RunConfig(values)

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        for section, entries in self._values.items():
            parser[section] = {k: _format(v) for k, v in entries.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def defaults(kind="synth2d"):
    if kind not in KINDS:
        raise ConfigError(f"unknown run kind {kind!r}; valid: {', '.join(KINDS)}")
    values = {s: {k: d for k, (_, d) in entries.items()} for s, entries in SCHEMA.items()}
    for section, entries in PRESETS[kind].items():
        values[section].update(entries)
    values["run"]["kind"] = kind
    return values


def parse_config(text, source="<config>", kind=None):
    """Parse INI text into a :class:`RunConfig`; ``kind`` overrides ``run.kind``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {str(exc).splitlines()[0]}") from None

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}")

    if kind is None:
        kind = parser.get("run", "kind", fallback="synth2d").strip()
    values = defaults(kind)
    for section in parser.sections():
        for key, raw in parser[section].items():
            values[section][key] = _parse(SCHEMA[section][key][0], raw, f"{source}: {section}.{key}")
    values["run"]["kind"] = kind
    cfg = RunConfig(values)
    validate(cfg)
    return cfg


def load_config(path, kind=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path), kind)


def validate(cfg):
    """Range and choice checks, all raised before any compute."""
    from .data import DATASETS_2D
    from .generative import METHODS
    from .numerics.optim import LR_SCHEDULES
    from .schedules import GAMMAS, INTERPOLANTS

    def need(cond, message):
        if not cond:
            raise ConfigError(message)

    m, t, s, d = cfg.model, cfg.train, cfg.solver, cfg.data
    need(cfg.kind in KINDS, f"run.kind must be one of {KINDS}")
    need(m.method in METHODS, f"model.method must be one of {METHODS}, got {m.method!r}")
    need(m.interp in INTERPOLANTS, f"model.interp must be one of {INTERPOLANTS}")
    need(m.gamma in GAMMAS, f"model.gamma must be one of {GAMMAS}")
    need(m.ddpm_schedule in ("linear", "cosine"), "model.ddpm_schedule must be linear or cosine")
    for key in ("hidden_dim", "n_blocks", "encoder_hidden", "encoder_layers", "context_length"):
        need(getattr(m, key) >= 1, f"model.{key} must be positive")
    need(m.time_dim >= 2 and m.time_dim % 2 == 0, "model.time_dim must be a positive even number")
    need(t.n_iter >= 0, "train.n_iter must be non-negative")
    need(t.batch_size >= 1, "train.batch_size must be positive")
    need(t.n_runs >= 1, "train.n_runs must be positive")
    need(t.lr is None or t.lr > 0.0, "train.lr must be positive")
    need(t.lr_schedule in LR_SCHEDULES, f"train.lr_schedule must be one of {LR_SCHEDULES}")
    need(s.steps >= 1, "solver.steps must be positive")
    need(s.epsilon >= 0.0, "solver.epsilon must be non-negative")
    need(0.0 < s.clip_delta <= 0.1, "solver.clip_delta must be in (0, 0.1]")
    if cfg.kind == "synth2d":
        need(d.dataset in DATASETS_2D, f"data.dataset must be one of {DATASETS_2D}")
        need(d.n_train >= 1 and d.n_eval >= 2, "data.n_train >= 1 and data.n_eval >= 2 required")
    if cfg.kind == "ar-bench":
        need(len(d.ar_coeffs) >= 1, "data.ar_coeffs needs at least one coefficient")
        need(d.rollout_paths >= 1, "data.rollout_paths must be positive")
        need(d.rollout_length > 2 * len(d.ar_coeffs), "data.rollout_length too short to refit")
    if cfg.kind == "forecast":
        need(bool(d.csv), "data.csv is required for forecast runs")
        need(d.horizon >= 1 and d.n_samples >= 1, "data.horizon and data.n_samples must be positive")
