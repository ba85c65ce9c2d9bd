"""History-conditioned probabilistic forecaster.

An LSTM encodes the context window into a condition vector ``h`` and a
generative head draws ``x_{t+1}`` given ``h``.  The interpolant head diffuses
from the last observation ``x_t``; the noise-sourced heads start from
Gaussian noise and see ``x_t`` through the encoder instead.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import MultivariateSeries, make_windows, mean_scale, unscale
from .exceptions import ContractError, DataError, DimensionError
from .generative import PathNoise, SolverConfig, make_head
from .generative.estimator import check_method
from .numerics import ParamStore, RnnEncoder, RnnEncoderSpec, no_grad, train_loop

QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)
FORECAST_COLUMNS = ("timestamp", "dim", "target", "q05", "q25", "q50", "q75", "q95", "mean")
# the interpolant head is trained with a smaller step than the baselines
FORECAST_LR = {"si": 1e-4, "ddpm": 1e-3, "sgm": 1e-3, "fm": 1e-3}


@dataclass
class ForecastSamples:
    """``S x H x D`` sample paths in original units, with optional targets."""

    samples: np.ndarray
    targets: np.ndarray = None
    timestamps: list = field(default=None)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 3 or self.samples.shape[0] < 1:
            raise ContractError(f"samples must be S x H x D with S >= 1, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("forecast samples contain non-finite values")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape != self.samples.shape[1:]:
                raise DimensionError(
                    f"targets {self.targets.shape} do not match samples {self.samples.shape}"
                )
        if self.timestamps is None:
            self.timestamps = list(range(self.horizon))

    @property
    def n_paths(self):
        return self.samples.shape[0]

    @property
    def horizon(self):
        return self.samples.shape[1]

    @property
    def dim(self):
        return self.samples.shape[2]


def quantiles(fs, levels=QUANTILE_LEVELS):
    """Empirical quantiles per ``(h, d)``, linear interpolation of order statistics."""
    levels = np.asarray(levels, dtype=np.float64)
    if np.any((levels < 0.0) | (levels > 1.0)):
        raise ContractError(f"quantile levels must lie in [0, 1], got {levels}")
    samples = fs.samples if isinstance(fs, ForecastSamples) else np.asarray(fs, dtype=np.float64)
    return np.quantile(samples, levels, axis=0, method="linear")


def write_forecast_csv(path, fs):
    """One row per ``(h, d)``: target, five quantiles and the sample mean."""
    q = quantiles(fs, QUANTILE_LEVELS)
    mean = fs.samples.mean(axis=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FORECAST_COLUMNS)
        for h in range(fs.horizon):
            for d in range(fs.dim):
                target = "" if fs.targets is None else repr(float(fs.targets[h, d]))
                writer.writerow([
                    fs.timestamps[h], d, target,
                    *(repr(float(v)) for v in q[:, h, d]), repr(float(mean[h, d])),
                ])


def _values(series):
    if isinstance(series, MultivariateSeries):
        return series.values
    values = np.asarray(series, dtype=np.float64)
    return values[:, None] if values.ndim == 1 else values


class ConditionalForecaster(BaseEstimator):
    """Encoder plus generative head trained jointly on ``(x_{t+1}, x_t, context)``.

    ``context_includes_source`` selects the encoder window: ``False`` feeds
    ``x_{t-P:t-1}``, ``True`` feeds the window ending at ``x_t``.  The default
    (``None``) uses the former for the interpolant head in both source modes,
    so vanilla and conditional SI differ only in the source draw, and the
    latter for the ddpm/sgm/fm heads, which would otherwise never see ``x_t``.
    """

    def __init__(self, method="si", interp="linear", gamma="sqrt", vanilla=False,
                 ddpm_schedule="linear", context_length=16, encoder_hidden=128,
                 encoder_layers=1, hidden_dim=64, n_blocks=2, time_dim=16, n_iter=2000,
                 batch_size=128, lr=None, lr_schedule="constant", max_grad_norm=None, epsilon=0.5,
                 solver_steps=50, clip_delta=1e-3, context_includes_source=None, random_state=0):
        self.method = method
        self.interp = interp
        self.gamma = gamma
        self.vanilla = vanilla
        self.ddpm_schedule = ddpm_schedule
        self.context_length = context_length
        self.encoder_hidden = encoder_hidden
        self.encoder_layers = encoder_layers
        self.hidden_dim = hidden_dim
        self.n_blocks = n_blocks
        self.time_dim = time_dim
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.lr = lr
        self.lr_schedule = lr_schedule
        self.max_grad_norm = max_grad_norm
        self.epsilon = epsilon
        self.solver_steps = solver_steps
        self.clip_delta = clip_delta
        self.context_includes_source = context_includes_source
        self.random_state = random_state

    # -- construction ---------------------------------------------------------

    def solver(self):
        return SolverConfig(self.solver_steps, self.epsilon, self.clip_delta, self.random_state)

    @property
    def include_source_(self):
        if self.context_includes_source is not None:
            return bool(self.context_includes_source)
        return self.method != "si"

    def build(self, data_dim, scale=None):
        """Initialise encoder and head; ``scale`` defaults to ones."""
        check_method(self.method)
        if self.context_length < 1:
            raise ContractError(f"context length must be positive, got {self.context_length}")
        self.store_ = ParamStore()
        self.encoder_ = RnnEncoder(
            RnnEncoderSpec(data_dim, self.encoder_hidden, self.encoder_layers),
            self.store_, prefix="encoder", seed=self.random_state,
        )
        self.head_ = make_head(
            self.method, data_dim, cond_dim=self.encoder_hidden,
            ddpm_schedule_kind=self.ddpm_schedule, interp=self.interp, gamma=self.gamma,
            vanilla=self.vanilla, hidden_dim=self.hidden_dim, n_blocks=self.n_blocks,
            time_dim=self.time_dim, solver=self.solver(), store=self.store_,
            seed=self.random_state + 1,
        )
        self.n_features_in_ = data_dim
        self.scale_ = np.ones(data_dim) if scale is None else np.asarray(scale, dtype=np.float64)
        self.loss_trace_ = np.empty(0)
        return self

    # -- training ---------------------------------------------------------------

    def fit(self, series, y=None):
        values = _values(series)
        scaled, scale = mean_scale(values)
        self.build(values.shape[1], scale)
        windows = make_windows(scaled, self.context_length)
        if len(windows) == 0:
            raise DataError("no training windows")
        enc_input = windows.encoder_input(self.include_source_)
        rng = np.random.default_rng(self.random_state)
        n = len(windows)

        def loss_fn():
            rows = rng.integers(0, n, size=min(self.batch_size, n))
            h = self.encoder_.encode(enc_input[rows])
            return self.head_.loss(windows.target[rows], cond=h, x0=windows.source[rows], rng=rng)

        lr = FORECAST_LR[self.method] if self.lr is None else float(self.lr)
        self.loss_trace_ = train_loop(self.store_, loss_fn, self.n_iter, lr, self.max_grad_norm,
                                      schedule=self.lr_schedule)
        return self

    # -- inference ----------------------------------------------------------------

    def _check_history(self, history):
        values = _values(history)
        if values.shape[1] != self.n_features_in_:
            raise DimensionError(f"history has {values.shape[1]} dims, model has {self.n_features_in_}")
        if values.shape[0] < self.context_length + 1:
            raise DataError(
                f"need at least {self.context_length + 1} observations, got {values.shape[0]}"
            )
        return values[-(self.context_length + 1):] / self.scale_

    def _step(self, windows, rng, solver):
        """One scaled-space prediction per row of ``windows`` (``n x (P+1) x D``)."""
        source = windows[:, -1]
        enc = windows[:, 1:] if self.include_source_ else windows[:, :-1]
        with no_grad():
            h = self.encoder_.encode(enc).data
        return self.head_.sample(windows.shape[0], cond=h, x0=source, rng=rng, solver=solver)

    def predict_one_step(self, history, n_samples=1, random_state=None, solver=None):
        """Draw ``n_samples`` values of ``x_{t+1}`` given observations up to ``x_t``.

        ``history`` holds at least ``P + 1`` rows in original units; the last
        row is ``x_t``.
        """
        check_is_fitted(self, "head_")
        window = self._check_history(history)
        seed = self.random_state if random_state is None else random_state
        noise = PathNoise.from_root(seed, int(n_samples))
        windows = np.repeat(window[None], int(n_samples), axis=0)
        return unscale(self._step(windows, noise, solver or self.solver()), self.scale_)

    def forecast(self, history, horizon, n_samples=100, random_state=None, solver=None,
                 targets=None, timestamps=None, path_seeds=None):
        """Roll ``n_samples`` independent paths ``horizon`` steps ahead.

        Each path feeds its own sampled value back as the next ``x_t`` and
        slides its context window by one step.
        """
        check_is_fitted(self, "head_")
        if horizon < 1:
            raise ContractError(f"horizon must be at least 1, got {horizon}")
        window = self._check_history(history)
        seed = self.random_state if random_state is None else random_state
        if path_seeds is not None:
            noise = PathNoise(path_seeds)
        else:
            noise = PathNoise.from_root(seed, int(n_samples))
        windows = np.repeat(window[None], len(noise), axis=0)
        solver = solver or self.solver()
        out = np.empty((len(noise), horizon, self.n_features_in_))
        for h in range(horizon):
            nxt = self._step(windows, noise, solver)
            out[:, h] = nxt
            windows = np.concatenate([windows[:, 1:], nxt[:, None]], axis=1)
        return ForecastSamples(unscale(out, self.scale_), targets, timestamps)

    def predict(self, history, n_samples=100, random_state=None):
        """Sample mean of the one-step prediction."""
        return self.predict_one_step(history, n_samples, random_state).mean(axis=0)
