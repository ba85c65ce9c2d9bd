"""Unconditional generative model with a scikit-learn style interface."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import ContractError
from ..numerics import ParamStore, train_loop
from .heads import METHODS, make_head
from .solvers import SolverConfig

# learning rates used when ``lr`` is left unset
DEFAULT_LR = {"si": 1e-3, "ddpm": 1e-3, "sgm": 1e-3, "fm": 1e-3}


def resolve_lr(method, lr):
    return DEFAULT_LR[method] if lr is None else float(lr)


def check_method(method):
    if method not in METHODS:
        raise ContractError(f"unknown generative method {method!r}; valid: {METHODS}")


class GenerativeModel(BaseEstimator):
    """Train one generative head on an ``n x d`` point cloud and draw samples.

    For the interpolant head the source endpoint is standard Gaussian noise,
    so every method maps noise to data.
    """

    def __init__(self, method="fm", interp="linear", gamma="sqrt", ddpm_schedule="linear",
                 hidden_dim=128, n_blocks=4, time_dim=32, n_iter=5000, batch_size=256,
                 lr=None, lr_schedule="cosine", max_grad_norm=None, epsilon=0.5,
                 solver_steps=100, clip_delta=1e-3, random_state=0):
        self.method = method
        self.interp = interp
        self.gamma = gamma
        self.ddpm_schedule = ddpm_schedule
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
        self.random_state = random_state

    def solver(self):
        return SolverConfig(self.solver_steps, self.epsilon, self.clip_delta, self.random_state)

    def build(self, data_dim):
        """Create the head with freshly initialised parameters."""
        check_method(self.method)
        self.store_ = ParamStore()
        self.head_ = make_head(
            self.method, data_dim, ddpm_schedule_kind=self.ddpm_schedule, interp=self.interp,
            gamma=self.gamma, hidden_dim=self.hidden_dim, n_blocks=self.n_blocks,
            time_dim=self.time_dim, solver=self.solver(), store=self.store_,
            seed=self.random_state,
        )
        self.n_features_in_ = data_dim
        return self

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.build(X.shape[1])
        rng = np.random.default_rng(self.random_state)
        n = X.shape[0]

        def loss_fn():
            rows = rng.integers(0, n, size=min(self.batch_size, n))
            return self.head_.loss(X[rows], rng=rng)

        self.loss_trace_ = train_loop(
            self.store_, loss_fn, self.n_iter, resolve_lr(self.method, self.lr),
            self.max_grad_norm, schedule=self.lr_schedule,
        )
        return self

    def sample(self, n, random_state=None):
        check_is_fitted(self, "head_")
        seed = self.random_state + 1 if random_state is None else random_state
        return self.head_.sample(int(n), rng=np.random.default_rng(seed), solver=self.solver())

    @property
    def schedule_name(self):
        check_is_fitted(self, "head_")
        return self.head_.name
