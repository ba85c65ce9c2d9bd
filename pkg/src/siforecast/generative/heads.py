"""Generative heads: DDPM, score-based (VP-SDE), flow matching and
stochastic interpolants, all behind ``loss`` / ``sample``.

Every field network is called as ``net(x, s, cond)`` and returns a
``batch x dims`` Tensor.  Module-level functions hold the actual maths so
tests can drive them with oracle networks.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from ..exceptions import ContractError, SolverDivergenceError
from ..numerics import FieldNet, FieldNetSpec, ParamStore, Tensor, concat, no_grad
from ..schedules import DEFAULT_SIGMA_MIN, InterpolantSchedule, ddpm_schedule, fm_path
from .solvers import SolverConfig, as_rng, euler_maruyama

METHODS = ("ddpm", "sgm", "fm", "si")
DDPM_TRAIN_STEPS = 1000
SGM_BETA_MIN = 0.1
SGM_BETA_MAX = 20.0
TIME_PROPOSAL = (0.1, 0.1)


def _field(net, x, s, cond):
    with no_grad():
        out = net(x, s, cond)
    return out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)


def _check_batch(x1):
    x1 = np.asarray(x1, dtype=np.float64)
    if x1.ndim != 2 or x1.shape[0] == 0:
        raise ContractError(f"expected a non-empty batch x dims array, got shape {x1.shape}")
    return x1


def _sq_norm_mean(diff, weights=None):
    per_row = diff.square().sum(axis=1)
    if weights is not None:
        per_row = per_row * weights
    return per_row.mean()


class GenerativeHead:
    """Shared state for every head: field nets in one ParamStore."""

    method = None
    net_names = ("eps",)

    def __init__(self, data_dim, cond_dim=0, hidden_dim=128, n_blocks=4, time_dim=32,
                 solver=None, store=None, seed=0):
        self.data_dim = data_dim
        self.cond_dim = cond_dim
        self.solver = solver or SolverConfig()
        self.store = store if store is not None else ParamStore()
        self.net_spec = FieldNetSpec(data_dim, hidden_dim, n_blocks, cond_dim, time_dim)
        self.nets = {
            name: FieldNet(self.net_spec, self.store, prefix=f"head.{name}", seed=seed + k)
            for k, name in enumerate(self.net_names)
        }

    @property
    def uses_source(self):
        return False

    @property
    def name(self):
        return self.method

    def loss(self, x1, cond=None, x0=None, rng=None):
        raise NotImplementedError

    def sample(self, n, cond=None, x0=None, rng=None, solver=None):
        raise NotImplementedError


# -- DDPM --------------------------------------------------------------------


class DDPMHead(GenerativeHead):
    method = "ddpm"

    def __init__(self, data_dim, schedule="linear", n_train_steps=DDPM_TRAIN_STEPS, **kwargs):
        super().__init__(data_dim, **kwargs)
        self.schedule = ddpm_schedule(schedule, n_train_steps)

    @property
    def name(self):
        return self.schedule.name

    def loss(self, x1, cond=None, x0=None, rng=None):
        return ddpm_loss(self, x1, cond, rng)

    def sample(self, n, cond=None, x0=None, rng=None, solver=None):
        return ddpm_sample(self, n, cond, rng, solver)


def ddpm_loss(head, x1, cond=None, rng=None, steps=None, eps=None):
    """Noise-prediction loss ``E ||eps_theta(x_n, n) - eps||^2``."""
    x1 = _check_batch(x1)
    rng = as_rng(rng)
    sched = head.schedule
    if steps is None:
        steps = rng.integers(1, sched.n_steps + 1, size=x1.shape[0])
    if eps is None:
        eps = rng.standard_normal(x1.shape)
    abar = sched.alpha_bars[np.asarray(steps) - 1][:, None]
    xn = np.sqrt(abar) * x1 + np.sqrt(1.0 - abar) * eps
    pred = head.nets["eps"](xn, np.asarray(steps) / sched.n_steps, cond)
    return _sq_norm_mean(pred - eps)


def ddpm_sample(head, n, cond=None, rng=None, solver=None):
    """Ancestral sampling over a respaced chain of ``solver.steps`` steps."""
    rng = as_rng(rng)
    solver = solver or head.solver
    sched = head.schedule
    steps, betas, abars = sched.respaced(min(solver.steps, sched.n_steps))
    x = rng.standard_normal((n, head.data_dim))
    for k in range(len(steps) - 1, -1, -1):
        eps = _field(head.nets["eps"], x, steps[k] / sched.n_steps, cond)
        x = (x - betas[k] / np.sqrt(1.0 - abars[k]) * eps) / np.sqrt(1.0 - betas[k])
        if k > 0:
            var = (1.0 - abars[k - 1]) / (1.0 - abars[k]) * betas[k]
            x = x + np.sqrt(var) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise SolverDivergenceError(len(steps) - 1 - k)
    return x


# -- score-based (variance preserving) ------------------------------------------


def vp_beta(s):
    return SGM_BETA_MIN + s * (SGM_BETA_MAX - SGM_BETA_MIN)


def vp_mean_coeff(s):
    integral = SGM_BETA_MIN * s + 0.5 * (SGM_BETA_MAX - SGM_BETA_MIN) * s * s
    return np.exp(-0.5 * integral)


class SGMHead(GenerativeHead):
    method = "sgm"

    def loss(self, x1, cond=None, x0=None, rng=None):
        return sgm_loss(self, x1, cond, rng)

    def sample(self, n, cond=None, x0=None, rng=None, solver=None):
        return sgm_sample(self, n, cond, rng, solver)


def sgm_loss(head, x1, cond=None, rng=None, s=None, eps=None):
    """Denoising score matching on the VP forward SDE, weighted by the
    perturbation variance ``1 - m(s)^2``."""
    x1 = _check_batch(x1)
    rng = as_rng(rng)
    delta = head.solver.clip_delta
    if s is None:
        s = rng.uniform(delta, 1.0, size=x1.shape[0])
    if eps is None:
        eps = rng.standard_normal(x1.shape)
    s = np.asarray(s, dtype=np.float64)
    m = vp_mean_coeff(s)[:, None]
    sigma = np.sqrt(1.0 - m * m)
    xs = m * x1 + sigma * eps
    score = head.nets["eps"](xs, s, cond)
    # sigma^2 ||score + eps / sigma||^2 == ||sigma * score + eps||^2
    return _sq_norm_mean(score * sigma + eps)


def sgm_sample(head, n, cond=None, rng=None, solver=None, probability_flow=False):
    """Reverse-time Euler-Maruyama from ``s = 1`` down to ``s = clip_delta``.

    Integrates in ``u = 1 - s`` so the grid is increasing.
    """
    rng = as_rng(rng)
    solver = solver or head.solver
    net = head.nets["eps"]
    x = rng.standard_normal((n, head.data_dim))
    grid = np.linspace(0.0, 1.0 - solver.clip_delta, solver.steps + 1)
    weight = 0.5 if probability_flow else 1.0

    def drift(u, x):
        s = 1.0 - u
        beta = vp_beta(s)
        return 0.5 * beta * x + weight * beta * _field(net, x, s, cond)

    def diffusion(u, x):
        return 0.0 if probability_flow else np.sqrt(vp_beta(1.0 - u))

    return euler_maruyama(drift, diffusion, x, grid, rng, return_path=False)


# -- flow matching ---------------------------------------------------------------


class FMHead(GenerativeHead):
    method = "fm"

    def __init__(self, data_dim, sigma_min=DEFAULT_SIGMA_MIN, **kwargs):
        super().__init__(data_dim, **kwargs)
        self.sigma_min = sigma_min

    def loss(self, x1, cond=None, x0=None, rng=None):
        return fm_loss(self, x1, cond, rng)

    def sample(self, n, cond=None, x0=None, rng=None, solver=None):
        return fm_sample(self, n, cond, rng, solver)


def fm_loss(head, x1, cond=None, rng=None, s=None, eps=None):
    x1 = _check_batch(x1)
    rng = as_rng(rng)
    if s is None:
        s = rng.uniform(0.0, 1.0, size=x1.shape[0])
    if eps is None:
        eps = rng.standard_normal(x1.shape)
    xs, u = fm_path(s, x1, eps, head.sigma_min)
    return _sq_norm_mean(head.nets["eps"](xs, s, cond) - u)


def fm_sample(head, n, cond=None, rng=None, solver=None):
    """Euler integration of the learned vector field from noise at ``s = 0``."""
    rng = as_rng(rng)
    solver = solver or head.solver
    net = head.nets["eps"]
    x = rng.standard_normal((n, head.data_dim))
    grid = np.linspace(0.0, 1.0, solver.steps + 1)
    return euler_maruyama(
        lambda s, x: _field(net, x, s, cond), lambda s, x: 0.0, x, grid, rng, return_path=False
    )


# -- stochastic interpolants -------------------------------------------------


class SIHead(GenerativeHead):
    """Two nets: velocity ``b`` and the noise expectation ``z`` (E[z | x_s]).

    The score is recovered as ``-z / gamma(s)``.  In vanilla mode the source
    endpoint is replaced by standard Gaussian draws.
    """

    method = "si"
    net_names = ("b", "z")

    def __init__(self, data_dim, interp="linear", gamma="sqrt", vanilla=False,
                 antithetic=True, **kwargs):
        super().__init__(data_dim, **kwargs)
        self.schedule = InterpolantSchedule(interp, gamma)
        self.vanilla = vanilla
        self.antithetic = antithetic

    @property
    def uses_source(self):
        return not self.vanilla

    @property
    def name(self):
        return self.schedule.name

    def source(self, x0, n, rng):
        if self.vanilla or x0 is None:
            return as_rng(rng).standard_normal((n, self.data_dim))
        return np.asarray(x0, dtype=np.float64)

    def loss(self, x1, cond=None, x0=None, rng=None):
        rng = as_rng(rng)
        x1 = _check_batch(x1)
        loss_b, loss_s = si_loss(self, self.source(x0, x1.shape[0], rng), x1, cond, rng)
        return loss_b + loss_s

    def sample(self, n, cond=None, x0=None, rng=None, solver=None):
        rng = as_rng(rng)
        return si_sample_forward(self, self.source(x0, n, rng), cond, solver, rng)


def importance_times(n, rng, clip_delta):
    """Diffusion times drawn from Beta(0.1, 0.1), clipped, with weights ``1/pdf``."""
    a, b = TIME_PROPOSAL
    s = np.clip(rng.beta(a, b, size=n), clip_delta, 1.0 - clip_delta)
    return s, 1.0 / stats.beta.pdf(s, a, b)


def si_loss(head, x0, x1, cond=None, rng=None, s=None, z=None, weights=None,
            antithetic=None):
    """Quadratic objectives for the velocity and the noise expectation.

    ``loss_b = E w [ 1/2 |b|^2 - (a' x0 + b' x1 + g' z) . b ]``
    ``loss_s = E w [ 1/2 |zhat|^2 - z . zhat ]``

    With antithetic pairing both ``z`` and ``-z`` are evaluated and averaged.
    """
    x0, x1 = _check_batch(x0), _check_batch(x1)
    rng = as_rng(rng)
    antithetic = head.antithetic if antithetic is None else antithetic
    n = x1.shape[0]
    delta = head.solver.clip_delta
    if s is None:
        s, drawn_weights = importance_times(n, rng, delta)
        weights = drawn_weights if weights is None else weights
    s = np.asarray(s, dtype=np.float64)
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if z is None:
        z = rng.standard_normal(x1.shape)

    sched = head.schedule
    alpha, beta, gamma = (c[:, None] for c in sched.coefficients(s))
    ad, bd, gd = (c[:, None] for c in sched.derivatives(s))
    assert np.all(gamma > 0.0), "gamma vanished inside the clipped time range"

    signs = (1.0, -1.0) if antithetic else (1.0,)
    xs = np.concatenate([alpha * x0 + beta * x1 + sg * gamma * z for sg in signs])
    target = np.concatenate([ad * x0 + bd * x1 + sg * gd * z for sg in signs])
    noise = np.concatenate([sg * z for sg in signs])
    s_all = np.tile(s, len(signs))
    w_all = np.tile(weights, len(signs))
    cond_all = None
    if cond is not None:
        cond_all = concat([cond] * len(signs), axis=0) if len(signs) > 1 else cond

    b_hat = head.nets["b"](xs, s_all, cond_all)
    z_hat = head.nets["z"](xs, s_all, cond_all)
    loss_b = ((b_hat.square() * 0.5 - b_hat * target).sum(axis=1) * w_all).mean()
    loss_s = ((z_hat.square() * 0.5 - z_hat * noise).sum(axis=1) * w_all).mean()
    return loss_b, loss_s


def _si_fields(head, cond):
    sched = head.schedule

    def fields(s, x):
        b = _field(head.nets["b"], x, s, cond)
        zhat = _field(head.nets["z"], x, s, cond)
        gamma = float(sched.coefficients(s)[2])
        return b, -zhat / gamma

    return fields


def si_sample_forward(head, x0, cond=None, solver=None, rng=None, return_path=False):
    """Forward SDE ``dx = [b + eps * score] ds + sqrt(2 eps) dW`` from ``x0``."""
    solver = solver or head.solver
    fields = _si_fields(head, cond)
    eps = solver.epsilon

    def drift(s, x):
        b, score = fields(s, x)
        return b + eps * score if eps else b

    return euler_maruyama(
        drift, lambda s, x: np.sqrt(2.0 * eps), x0, solver.grid(), as_rng(rng), return_path
    )


def si_sample_backward(head, x1, cond=None, solver=None, rng=None, return_path=False):
    """Backward SDE ``dx = [b - eps * score] ds + sqrt(2 eps) dW^B`` from ``x1``,
    integrated in reversed time ``u = 1 - s``."""
    solver = solver or head.solver
    fields = _si_fields(head, cond)
    eps = solver.epsilon

    def drift(u, x):
        b, score = fields(1.0 - u, x)
        return -(b - eps * score)

    return euler_maruyama(
        drift, lambda u, x: np.sqrt(2.0 * eps), x1, solver.grid(), as_rng(rng), return_path
    )


def make_head(method, data_dim, cond_dim=0, *, ddpm_schedule_kind="linear",
              interp="linear", gamma="sqrt", vanilla=False, sigma_min=DEFAULT_SIGMA_MIN,
              **kwargs):
    """Build a head by method name; extra keyword arguments size the nets."""
    if method == "ddpm":
        return DDPMHead(data_dim, schedule=ddpm_schedule_kind, cond_dim=cond_dim, **kwargs)
    if method == "sgm":
        return SGMHead(data_dim, cond_dim=cond_dim, **kwargs)
    if method == "fm":
        return FMHead(data_dim, sigma_min=sigma_min, cond_dim=cond_dim, **kwargs)
    if method == "si":
        return SIHead(data_dim, interp=interp, gamma=gamma, vanilla=vanilla,
                      cond_dim=cond_dim, **kwargs)
    raise ContractError(f"unknown generative method {method!r}; valid: {METHODS}")
