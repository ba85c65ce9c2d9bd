"""Fixed-step SDE/ODE integration shared by all samplers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractError, SolverDivergenceError


@dataclass(frozen=True)
class SolverConfig:
    """Integration settings.

    ``epsilon`` is the constant diffusion scale of the interpolant SDEs and
    ``clip_delta`` keeps grids away from the ``1/gamma`` singularity at the
    endpoints.
    """

    steps: int = 100
    epsilon: float = 0.5
    clip_delta: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ContractError(f"solver steps must be a positive integer, got {self.steps}")
        if not self.epsilon >= 0.0:
            raise ContractError(f"epsilon must be non-negative, got {self.epsilon}")
        if not 0.0 < self.clip_delta <= 0.1:
            raise ContractError(f"clip_delta must be in (0, 0.1], got {self.clip_delta}")

    def grid(self):
        return np.linspace(self.clip_delta, 1.0 - self.clip_delta, self.steps + 1)


class PathNoise:
    """Gaussian draws where row ``i`` always comes from its own seeded stream.

    Permuting the per-path seeds permutes the rows of every draw, which keeps
    batched sampling independent of how paths are grouped.
    """

    def __init__(self, seeds):
        self.seeds = [int(s) for s in seeds]
        self._streams = [np.random.default_rng(s) for s in self.seeds]

    @classmethod
    def from_root(cls, root_seed, n_paths):
        children = np.random.SeedSequence(root_seed).spawn(n_paths)
        return cls(int(c.generate_state(1, dtype=np.uint64)[0]) for c in children)

    def __len__(self):
        return len(self._streams)

    def standard_normal(self, shape):
        shape = tuple(np.atleast_1d(shape))
        if shape[0] != len(self._streams):
            raise ContractError(f"draw of shape {shape} for {len(self._streams)} paths")
        return np.stack([g.standard_normal(shape[1:]) for g in self._streams])


def as_rng(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    return rng


def euler_maruyama(drift_fn, diffusion_fn, x_init, grid, rng=None, return_path=True):
    """Integrate ``dx = drift(s, x) ds + diffusion(s, x) dW`` on ``grid``.

    ``x_{k+1} = x_k + drift * ds + diffusion * sqrt(ds) * xi_k``.  Noise is
    skipped for steps whose diffusion is identically zero, so pure ODEs
    consume no randomness.  Returns the ``(len(grid), *x.shape)`` path, or only
    the final state when ``return_path`` is false.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ContractError("integration grid must be strictly increasing with >= 2 points")
    rng = as_rng(rng)
    x = np.array(x_init, dtype=np.float64, copy=True)
    path = [x.copy()] if return_path else None
    for k in range(grid.size - 1):
        s, ds = grid[k], grid[k + 1] - grid[k]
        drift = np.asarray(drift_fn(s, x), dtype=np.float64)
        diffusion = np.asarray(diffusion_fn(s, x), dtype=np.float64)
        if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(diffusion))):
            raise SolverDivergenceError(k)
        x = x + drift * ds
        if np.any(diffusion != 0.0):
            x = x + diffusion * np.sqrt(ds) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise SolverDivergenceError(k)
        if return_path:
            path.append(x.copy())
    return np.stack(path) if return_path else x
