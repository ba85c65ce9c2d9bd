"""Synthetic generators, CSV ingestion, windowing and mean scaling."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .exceptions import ContractError, DataError, ParseError

DATASETS_2D = ("8gaussians", "circles", "moons", "rings", "swissroll")

# toy-dataset constants
GAUSSIANS_RADIUS = 4.0
GAUSSIANS_STD = 0.5
CIRCLES_NOISE = 0.08
MOONS_NOISE = 0.05
RINGS_NOISE = 0.08
SCALE_2D = 4.0
SCALE_FLOOR = 1e-8


@dataclass
class MultivariateSeries:
    values: np.ndarray
    timestamps: list = None
    freq: str = ""
    names: list = None
    scale: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2:
            raise DataError(f"series values must be T x D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")
        if self.timestamps is None:
            self.timestamps = list(range(len(self.values)))
        if self.names is None:
            self.names = [f"x{d}" for d in range(self.values.shape[1])]

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def split(self, fraction):
        """Split by time at ``round(fraction * T)``; no shuffling."""
        if not 0.0 < fraction <= 1.0:
            raise ContractError(f"split fraction must be in (0, 1], got {fraction}")
        cut = int(round(fraction * self.length))
        head = MultivariateSeries(self.values[:cut], self.timestamps[:cut], self.freq, self.names)
        if cut == self.length:
            return head, None
        tail = MultivariateSeries(self.values[cut:], self.timestamps[cut:], self.freq, self.names)
        return head, tail


# -- 2D toy data -----------------------------------------------------------


def _noisy_circle(rng, n, radius, noise):
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    pts = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return pts + noise * rng.standard_normal((n, 2))


def _split_counts(n, parts):
    base = np.full(parts, n // parts)
    base[: n % parts] += 1
    return base


def gen_2d(name, n, seed=0, noise=True):
    """Draw ``n`` points of a named 2-D toy distribution.

    ``noise=False`` removes the additive jitter (for the Gaussian mixture this
    returns the component centres themselves).
    """
    if name not in DATASETS_2D:
        raise ContractError(f"unknown dataset {name!r}; valid names: {', '.join(DATASETS_2D)}")
    if n < 1:
        raise ContractError(f"need at least one sample, got {n}")
    rng = np.random.default_rng(seed)
    scale = 1.0 if noise else 0.0

    if name == "8gaussians":
        labels = rng.permutation(np.arange(n) % 8)
        angles = labels * (np.pi / 4.0)
        centres = GAUSSIANS_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return centres + scale * GAUSSIANS_STD * rng.standard_normal((n, 2))

    if name == "circles":
        n_out, n_in = _split_counts(n, 2)
        pts = np.concatenate([
            _noisy_circle(rng, n_out, 1.0, scale * CIRCLES_NOISE),
            _noisy_circle(rng, n_in, 0.5, scale * CIRCLES_NOISE),
        ])
        return SCALE_2D * pts[rng.permutation(n)]

    if name == "rings":
        counts = _split_counts(n, 4)
        radii = (0.25, 0.5, 0.75, 1.0)
        pts = np.concatenate([
            _noisy_circle(rng, c, r, scale * RINGS_NOISE / 2.0) for c, r in zip(counts, radii)
        ])
        return SCALE_2D * pts[rng.permutation(n)]

    if name == "moons":
        n_out, n_in = _split_counts(n, 2)
        t_out = rng.uniform(0.0, np.pi, n_out)
        t_in = rng.uniform(0.0, np.pi, n_in)
        outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
        inner = np.stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
        pts = np.concatenate([outer, inner]) - np.array([0.5, 0.25])
        pts = pts + scale * MOONS_NOISE * rng.standard_normal(pts.shape)
        return SCALE_2D * pts[rng.permutation(n)]

    # swissroll: planar projection of the 3-D roll, mapped to about [-4, 4]^2
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(0.0, 1.0, n))
    pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1)
    pts = pts + scale * 0.5 * rng.standard_normal((n, 2))
    return pts * (4.0 / 14.2)


# -- autoregressive processes ---------------------------------------------------


@dataclass(frozen=True)
class ArSpec:
    coeffs: tuple
    sigma: float = 1.0
    length: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in np.atleast_1d(self.coeffs)))
        if not self.coeffs:
            raise ContractError("AR process needs at least one coefficient")
        if self.sigma < 0.0:
            raise ContractError(f"noise std must be non-negative, got {self.sigma}")
        if self.length < 1:
            raise ContractError(f"series length must be positive, got {self.length}")
        radius = spectral_radius(self.coeffs)
        if radius >= 1.0:
            raise ContractError(
                f"AR coefficients {self.coeffs} are not stationary (spectral radius {radius:.4f})"
            )

    @property
    def order(self):
        return len(self.coeffs)


def spectral_radius(coeffs):
    p = len(coeffs)
    companion = np.zeros((p, p))
    companion[0, :] = coeffs
    companion[1:, :-1] = np.eye(p - 1)
    return float(np.max(np.abs(np.linalg.eigvals(companion))))


def gen_ar(spec):
    """Simulate a univariate AR(p) from zero initial state after a burn-in of 10 p."""
    rng = np.random.default_rng(spec.seed)
    burn = 10 * spec.order
    noise = spec.sigma * rng.standard_normal(spec.length + burn)
    # x_t - sum_k phi_k x_{t-k} = noise_t with zero initial state
    x = signal.lfilter([1.0], np.concatenate([[1.0], -np.asarray(spec.coeffs)]), noise)
    return MultivariateSeries(x[burn:, None], freq="step", names=["x0"])


# -- CSV ---------------------------------------------------------------------------


def load_csv(path, freq=""):
    """Read ``timestamp, feature_1, ..., feature_D`` rows with a header line."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "empty file; expected a header row") from None
        if len(header) < 2:
            raise ParseError(1, "header needs a timestamp column and at least one feature")
        width = len(header)
        stamps, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(line_no, f"expected {width} cells, found {len(row)}")
            values = []
            for cell in row[1:]:
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(line_no, f"cannot parse {cell!r} as a number") from None
                if not math.isfinite(value):
                    raise ParseError(line_no, f"non-finite cell {cell!r}")
                values.append(value)
            stamps.append(_parse_stamp(row[0]))
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return MultivariateSeries(np.array(rows), stamps, freq, header[1:])


def _parse_stamp(cell):
    try:
        return int(cell)
    except ValueError:
        return cell


def write_csv(path, series):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *series.names])
        for stamp, row in zip(series.timestamps, series.values):
            writer.writerow([stamp, *(repr(float(v)) for v in row)])


# -- windows and scaling ------------------------------------------------------------


@dataclass
class WindowBatch:
    """Training tuples ``(x_{t+1}, x_t, x_{t-P:t-1})`` stacked over windows."""

    target: np.ndarray
    source: np.ndarray
    context: np.ndarray
    index: np.ndarray

    def __len__(self):
        return self.target.shape[0]

    def take(self, rows):
        return WindowBatch(self.target[rows], self.source[rows], self.context[rows], self.index[rows])

    def encoder_input(self, include_source):
        """Context window, optionally shifted by one step to end at ``x_t``."""
        if not include_source:
            return self.context
        return np.concatenate([self.context[:, 1:], self.source[:, None, :]], axis=1)


def make_windows(series, context_length, stride=1):
    """All windows with ``t`` from ``P`` to ``T - 2``; ``T - P - 1`` of them at stride 1."""
    values = series.values if isinstance(series, MultivariateSeries) else np.asarray(series, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    p = int(context_length)
    if p < 1:
        raise ContractError(f"context length must be positive, got {context_length}")
    if stride < 1:
        raise ContractError(f"stride must be positive, got {stride}")
    n_total = values.shape[0]
    if n_total < p + 2:
        raise DataError(f"series of length {n_total} is too short for context length {p}")
    ts = np.arange(p, n_total - 1, stride)
    offsets = np.arange(-p, 0)
    return WindowBatch(
        target=values[ts + 1],
        source=values[ts],
        context=values[ts[:, None] + offsets[None, :]],
        index=ts,
    )


def mean_scale(series):
    """Per-dimension divisor ``max(mean |x_d|, 1e-8)``; stored on the series."""
    values = series.values if isinstance(series, MultivariateSeries) else np.asarray(series, dtype=np.float64)
    scale = np.maximum(np.mean(np.abs(values), axis=0), SCALE_FLOOR)
    if isinstance(series, MultivariateSeries):
        series.scale = scale
    return values / scale, scale


def unscale(values, scale):
    return np.asarray(values, dtype=np.float64) * scale
