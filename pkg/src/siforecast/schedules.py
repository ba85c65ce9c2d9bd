"""Diffusion-time schedules.

* :class:`InterpolantSchedule` - coefficients of
  ``x_s = alpha(s) x0 + beta(s) x1 + gamma(s) z`` and their derivatives.
* :class:`DdpmSchedule` - discrete noise levels for the DDPM chain.
* :func:`fm_path` - the Gaussian conditional path used by flow matching.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DimensionError

INTERPOLANTS = ("linear", "trig")
GAMMAS = ("sqrt", "quad", "trig")
DERIVATIVE_CLIP = 1e-3

LINEAR_BETA_RANGE = (1e-4, 0.02)
COSINE_OFFSET = 0.008
COSINE_MAX_BETA = 0.999
DEFAULT_SIGMA_MIN = 0.01


def _check_unit_interval(s):
    s = np.asarray(s, dtype=np.float64)
    if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise ContractError("diffusion time must lie in [0, 1]")
    return s


def _gamma(kind, s):
    if kind == "sqrt":
        return np.sqrt(2.0 * s * (1.0 - s))
    if kind == "quad":
        return s * (1.0 - s)
    return np.sin(np.pi * s) ** 2


def _gamma_dot(kind, s):
    if kind == "sqrt":
        return (1.0 - 2.0 * s) / np.sqrt(2.0 * s * (1.0 - s))
    if kind == "quad":
        return 1.0 - 2.0 * s
    return np.pi * np.sin(2.0 * np.pi * s)


@dataclass(frozen=True)
class InterpolantSchedule:
    """``(alpha, beta, gamma)`` for one interpolant / gamma-function pair.

    Derivatives are evaluated at ``s`` clamped to
    ``[DERIVATIVE_CLIP, 1 - DERIVATIVE_CLIP]`` because the ``sqrt`` gamma has
    an unbounded derivative at both endpoints.
    """

    interp: str = "linear"
    gamma: str = "sqrt"

    def __post_init__(self):
        if self.interp not in INTERPOLANTS:
            raise ContractError(f"unknown interpolant {self.interp!r}; valid: {INTERPOLANTS}")
        if self.gamma not in GAMMAS:
            raise ContractError(f"unknown gamma function {self.gamma!r}; valid: {GAMMAS}")

    @property
    def name(self):
        # gamma first, matching the row labels of the synthetic benchmark table
        return f"si({self.gamma},{self.interp})"

    def coefficients(self, s):
        """Return ``(alpha, beta, gamma)`` at ``s``."""
        s = _check_unit_interval(s)
        g = _gamma(self.gamma, s)
        if self.interp == "linear":
            return 1.0 - s, s.copy(), g
        r = np.sqrt(np.maximum(1.0 - g * g, 0.0))
        return r * np.cos(0.5 * np.pi * s), r * np.sin(0.5 * np.pi * s), g

    def derivatives(self, s):
        """Return ``(alpha_dot, beta_dot, gamma_dot)`` at clamped ``s``."""
        s = np.clip(_check_unit_interval(s), DERIVATIVE_CLIP, 1.0 - DERIVATIVE_CLIP)
        g = _gamma(self.gamma, s)
        gd = _gamma_dot(self.gamma, s)
        if self.interp == "linear":
            return -np.ones_like(s), np.ones_like(s), gd
        r = np.sqrt(np.maximum(1.0 - g * g, 0.0))
        # r vanishes only for (trig, trig) at s = 1/2, where r has a symmetric kink
        safe_r = np.where(r > 0.0, r, 1.0)
        rd = np.where(r > 0.0, -g * gd / safe_r, 0.0)
        c, sn = np.cos(0.5 * np.pi * s), np.sin(0.5 * np.pi * s)
        alpha_dot = rd * c - r * 0.5 * np.pi * sn
        beta_dot = rd * sn + r * 0.5 * np.pi * c
        return alpha_dot, beta_dot, gd

    def __call__(self, s):
        return eval_schedule(self, s)


def eval_schedule(sched, s):
    """Return ``(alpha, beta, gamma, alpha_dot, beta_dot, gamma_dot)``."""
    return (*sched.coefficients(s), *sched.derivatives(s))


def _rowwise(s, like):
    # per-sample times broadcast against a batch x dims array
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1 and like.ndim >= 2:
        return s.reshape((-1,) + (1,) * (like.ndim - 1))
    return s


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"operands must share one shape, got {sorted(shapes)}")


def interpolate(sched, s, x0, x1, z):
    x0, x1, z = (np.asarray(a, dtype=np.float64) for a in (x0, x1, z))
    _same_shape(x0, x1, z)
    a, b, g = (_rowwise(c, x0) for c in sched.coefficients(s))
    return a * x0 + b * x1 + g * z


def velocity_target(sched, s, x0, x1, z):
    x0, x1, z = (np.asarray(a, dtype=np.float64) for a in (x0, x1, z))
    _same_shape(x0, x1, z)
    ad, bd, gd = (_rowwise(c, x0) for c in sched.derivatives(s))
    return ad * x0 + bd * x1 + gd * z


@dataclass(frozen=True)
class DdpmSchedule:
    kind: str
    n_steps: int
    betas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    @property
    def name(self):
        return f"ddpm({self.kind})"

    def respaced(self, n_sample_steps):
        """Noise levels for an ancestral chain visiting ``n_sample_steps`` of
        the training steps (evenly strided, always ending at step N).

        Returns ``(timesteps, betas, alpha_bars)`` where ``timesteps`` are the
        1-based training indices visited.
        """
        if not 1 <= n_sample_steps <= self.n_steps:
            raise ContractError(
                f"sampling steps must be in [1, {self.n_steps}], got {n_sample_steps}"
            )
        if n_sample_steps == self.n_steps:
            return np.arange(1, self.n_steps + 1), self.betas.copy(), self.alpha_bars.copy()
        steps = np.unique(np.round(np.linspace(1, self.n_steps, n_sample_steps)).astype(int))
        if n_sample_steps == 1:
            steps = np.array([self.n_steps])
        abar = self.alpha_bars[steps - 1]
        prev = np.concatenate([[1.0], abar[:-1]])
        return steps, 1.0 - abar / prev, abar


def ddpm_schedule(kind, n_steps):
    if n_steps < 1:
        raise ContractError(f"DDPM needs at least one step, got {n_steps}")
    if kind == "linear":
        betas = np.linspace(*LINEAR_BETA_RANGE, n_steps)
    elif kind == "cosine":
        def f(u):
            return np.cos((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * 0.5 * np.pi) ** 2

        target = f(np.arange(n_steps + 1) / n_steps) / f(0.0)
        betas = np.minimum(1.0 - target[1:] / target[:-1], COSINE_MAX_BETA)
    else:
        raise ContractError(f"unknown DDPM schedule {kind!r}; valid: ('linear', 'cosine')")
    alpha_bars = np.cumprod(1.0 - betas)
    return DdpmSchedule(kind, n_steps, betas, alpha_bars)


def fm_path(s, x1, noise, sigma_min=DEFAULT_SIGMA_MIN):
    """Point on the flow-matching path and its conditional vector field."""
    s = _check_unit_interval(s)
    x1 = np.asarray(x1, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    _same_shape(x1, noise)
    s = _rowwise(s, x1)
    shrink = 1.0 - sigma_min
    xs = s * x1 + (1.0 - shrink * s) * noise
    u = (x1 - shrink * xs) / (1.0 - shrink * s)
    return xs, u
