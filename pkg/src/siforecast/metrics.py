"""Two-sample distances, probabilistic forecast scores and AR refitting."""
from __future__ import annotations

import json
import math
from collections import OrderedDict

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .exceptions import ContractError

MAX_EXACT_WASSERSTEIN = 4096
MEDIAN_HEURISTIC_POINTS = 1000
RBF_BANDWIDTH_FACTORS = (0.5, 1.0, 2.0)
MULTISCALE_BANDWIDTHS = (0.2, 0.5, 0.9, 1.3)


def _points(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ContractError(f"expected an n x d point set, got shape {a.shape}")
    return a


def _paired(a, b):
    a, b = _points(a), _points(b)
    if a.shape != b.shape:
        raise ContractError(
            f"point sets must have equal size and dimension, got {a.shape} and {b.shape}; "
            "subsample upstream"
        )
    return a, b


def subsample(points, n, seed=0):
    """Deterministic subsample of ``n`` rows (all rows if fewer)."""
    points = _points(points)
    if points.shape[0] <= n:
        return points
    idx = np.sort(np.random.default_rng(seed).choice(points.shape[0], n, replace=False))
    return points[idx]


# -- two-sample distances -------------------------------------------------------


def wasserstein(a, b):
    """Exact 1-Wasserstein distance between equal-size empirical measures."""
    a, b = _paired(a, b)
    if a.shape[0] > MAX_EXACT_WASSERSTEIN:
        raise ContractError(
            f"exact assignment is limited to {MAX_EXACT_WASSERSTEIN} points, got {a.shape[0]}; "
            "use subsample() first"
        )
    # ties between optimal matchings make the float sum order dependent; a
    # canonical argument order keeps the distance exactly symmetric
    if b.tobytes() < a.tobytes():
        a, b = b, a
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    return math.fsum(cost[rows, cols]) / a.shape[0]


def wasserstein_1d(u, v):
    u, v = np.sort(np.ravel(u)), np.sort(np.ravel(v))
    if u.shape != v.shape:
        raise ContractError("1-D Wasserstein needs equal sample counts")
    return float(np.mean(np.abs(u - v)))


def random_directions(n_proj, dim, seed=0):
    dirs = np.random.default_rng(seed).standard_normal((n_proj, dim))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def sliced_wasserstein(a, b, n_proj=128, seed=0, directions=None):
    """Average 1-D Wasserstein distance over random unit projections."""
    a, b = _paired(a, b)
    if directions is None:
        directions = random_directions(n_proj, a.shape[1], seed)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, a.shape[1])
    pa = np.sort(a @ directions.T, axis=0)
    pb = np.sort(b @ directions.T, axis=0)
    return float(np.mean(np.abs(pa - pb)))


def _median_distance(a, b):
    k = MEDIAN_HEURISTIC_POINTS
    pooled = np.concatenate([a[:k], b[:k]])
    d = cdist(pooled, pooled)
    off = d[np.triu_indices(pooled.shape[0], k=1)]
    med = float(np.median(off)) if off.size else 1.0
    return med if med > 0.0 else 1.0


def _kernel_sum(sqdist, kernel, bandwidths):
    out = np.zeros_like(sqdist)
    for h in bandwidths:
        if kernel == "rbf":
            out += np.exp(-sqdist / (2.0 * h * h))
        else:
            out += h * h / (h * h + sqdist)
    return out


def mmd(a, b, kernel="rbf", biased=False):
    """Squared maximum mean discrepancy, summed over a bandwidth family.

    ``rbf``: Gaussian kernels at ``{0.5, 1, 2} x`` the median pairwise distance
    of the pooled sample.  ``multiscale``: rational-quadratic kernels
    ``h^2 / (h^2 + d^2)`` for ``h in (0.2, 0.5, 0.9, 1.3)``.

    The default estimator is the unbiased U-statistic (for equal sizes, the
    paired form that is exactly zero when ``a`` and ``b`` are identical);
    ``biased=True`` gives the V-statistic.
    """
    a, b = _points(a), _points(b)
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if kernel == "rbf":
        sigma = _median_distance(a, b)
        bandwidths = [f * sigma for f in RBF_BANDWIDTH_FACTORS]
    elif kernel == "multiscale":
        bandwidths = MULTISCALE_BANDWIDTHS
    else:
        raise ContractError(f"unknown kernel {kernel!r}; valid: ('rbf', 'multiscale')")

    kxx = _kernel_sum(cdist(a, a, "sqeuclidean"), kernel, bandwidths)
    kyy = _kernel_sum(cdist(b, b, "sqeuclidean"), kernel, bandwidths)
    kxy = _kernel_sum(cdist(a, b, "sqeuclidean"), kernel, bandwidths)
    n, m = a.shape[0], b.shape[0]
    # the cross sum is split into kxy and its transpose so swapping a and b
    # only swaps addends, which keeps the estimator exactly symmetric
    cross = (float(np.sum(kxy)), float(np.sum(np.ascontiguousarray(kxy.T))))

    if biased:
        return float(np.sum(kxx) / (n * n) + np.sum(kyy) / (m * m) - (cross[0] + cross[1]) / (n * m))
    if n < 2 or m < 2:
        raise ContractError("the unbiased estimator needs at least two points per sample")
    sxx = float(np.sum(kxx) - np.trace(kxx))
    syy = float(np.sum(kyy) - np.trace(kyy))
    if n == m:
        tr = float(np.trace(kxy))
        return ((sxx + syy) - ((cross[0] - tr) + (cross[1] - tr))) / (n * (n - 1))
    return sxx / (n * (n - 1)) + syy / (m * (m - 1)) - (cross[0] + cross[1]) / (n * m)


# -- forecast scores ----------------------------------------------------------------


def crps(samples, y):
    """Sample CRPS ``mean|x_i - y| - 1/(2 m^2) sum_ij |x_i - x_j|``.

    Computed from the sorted distinct values so duplicated samples are exact.
    """
    x = np.ravel(np.asarray(samples, dtype=np.float64))
    if x.size == 0:
        raise ContractError("CRPS needs at least one sample")
    m = x.size
    values, counts = np.unique(x, return_counts=True)
    first = float(np.sum(counts / m * np.abs(values - y)))
    if values.size == 1:
        return first
    # sum_{i<j} |x_i - x_j| = sum_k gap_k * below_k * above_k
    below = np.cumsum(counts)[:-1]
    gaps = np.diff(values)
    spread = float(np.sum(gaps * below * (m - below))) / (m * m)
    return first - spread


def _forecast_arrays(fs, targets=None):
    if targets is None:
        samples, targets = fs.samples, fs.targets
    else:
        samples = fs
    samples = np.asarray(samples, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples[:, :, None]
    if targets.ndim == 1:
        targets = targets[:, None]
    if samples.ndim != 3 or samples.shape[1:] != targets.shape:
        raise ContractError(
            f"samples {samples.shape} do not match targets {targets.shape} (S x H x D vs H x D)"
        )
    return samples.sum(axis=2), targets.sum(axis=1)


def crps_sum(fs, targets=None):
    """CRPS of the dimension-summed series normalised by the summed |target|.

    Returns ``nan`` when the denominator is zero (metric undefined).
    """
    summed, y = _forecast_arrays(fs, targets)
    denom = float(np.sum(np.abs(y)))
    if denom == 0.0:
        return math.nan
    return sum(crps(summed[:, h], y[h]) for h in range(y.size)) / denom


def _median_forecast(fs, targets):
    summed, y = _forecast_arrays(fs, targets)
    return np.median(summed, axis=0), y


def nd_sum(fs, targets=None):
    med, y = _median_forecast(fs, targets)
    denom = float(np.sum(np.abs(y)))
    return math.nan if denom == 0.0 else float(np.sum(np.abs(med - y)) / denom)


def nrmse_sum(fs, targets=None):
    med, y = _median_forecast(fs, targets)
    denom = float(np.mean(np.abs(y)))
    return math.nan if denom == 0.0 else float(np.sqrt(np.mean((med - y) ** 2)) / denom)


# -- AR refitting ---------------------------------------------------------------------


def fit_ar(series, p):
    """Least-squares AR(p) coefficients without intercept.

    ``series`` is one 1-D series or a ``paths x T`` array; paths are pooled
    into a single design matrix.
    """
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    paths = arr[None, :] if arr.ndim == 1 else arr
    if paths.shape[1] <= 2 * p:
        raise ContractError(f"series of length {paths.shape[1]} is too short for AR({p})")
    design, response = [], []
    for x in paths:
        n = x.size
        design.append(np.stack([x[p - k : n - k] for k in range(1, p + 1)], axis=1))
        response.append(x[p:])
    coeffs, *_ = np.linalg.lstsq(np.concatenate(design), np.concatenate(response), rcond=None)
    return coeffs


def ar_param_error(true_coeffs, fitted):
    true_coeffs = np.atleast_1d(np.asarray(true_coeffs, dtype=np.float64))
    fitted = np.atleast_1d(np.asarray(fitted, dtype=np.float64))
    if true_coeffs.shape != fitted.shape:
        raise ContractError(f"coefficient vectors differ in length: {true_coeffs.shape} vs {fitted.shape}")
    return float(np.mean(np.abs(true_coeffs - fitted)))


# -- reporting ----------------------------------------------------------------------------


class MetricReport:
    """Named scalar results, aggregated over independent runs."""

    def __init__(self):
        self._values = OrderedDict()

    def add(self, name, value):
        self._values.setdefault(name, []).append(float(value))

    def update(self, values):
        for name, value in values.items():
            self.add(name, value)

    def values(self, name):
        return list(self._values[name])

    def summary(self):
        out = OrderedDict()
        for name, vals in self._values.items():
            arr = np.asarray(vals)
            finite = arr[np.isfinite(arr)]
            mean = float(np.mean(finite)) if finite.size == arr.size else None
            std = float(np.std(arr, ddof=1)) if len(vals) >= 2 and mean is not None else None
            entry = OrderedDict(mean=mean, std=std, runs=len(vals))
            if mean is None:
                entry["undefined"] = True
            out[name] = entry
        return out

    def to_json(self):
        return json.dumps(self.summary(), indent=2)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @staticmethod
    def read(path):
        with open(path) as fh:
            return json.load(fh)
