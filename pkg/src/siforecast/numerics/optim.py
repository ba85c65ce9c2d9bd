"""Parameter storage and the Adam update."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..exceptions import ContractError, TrainingDivergenceError
from .tensor import Tensor


class ParamStore:
    """Named trainable tensors plus Adam state.

    Moment buffers are created lazily by the first :func:`adam_step`, so
    ``m`` and ``v`` are empty until the optimizer has stepped.
    """

    def __init__(self):
        self.params = OrderedDict()
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name, data):
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def n_values(self):
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self.params.items())

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ContractError(
                f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}"
            )
        for name, p in self.params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ContractError(
                    f"shape mismatch for {name!r}: {value.shape} vs {p.shape}"
                )
            p.data = value.copy()

    def grad_norm(self):
        return float(np.sqrt(sum(float(np.sum(p.grad**2)) for p in self.params.values())))


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8, max_grad_norm=None):
    """Apply one bias-corrected Adam update in place and clear the gradients."""
    missing = [name for name, p in store if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for parameters: {', '.join(missing)}")

    scale = 1.0
    if max_grad_norm is not None:
        norm = store.grad_norm()
        if norm > max_grad_norm:
            scale = max_grad_norm / norm

    store.step += 1
    t = store.step
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name, p in store:
        g = p.grad * scale
        if name not in store.m:
            store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        p.grad = None
    return store


LR_SCHEDULES = ("constant", "cosine")


def lr_at(lr, it, n_iter, schedule="constant"):
    """Step size at iteration ``it``; ``cosine`` anneals from ``lr`` to zero."""
    if schedule == "constant":
        return lr
    if schedule == "cosine":
        return 0.5 * lr * (1.0 + np.cos(np.pi * it / max(n_iter, 1)))
    raise ContractError(f"unknown learning-rate schedule {schedule!r}; valid: {LR_SCHEDULES}")


def train_loop(store, loss_fn, n_iter, lr, max_grad_norm=None, callback=None,
               schedule="constant"):
    """Run ``n_iter`` Adam steps on ``loss_fn()`` and return the loss trace.

    ``loss_fn`` builds a fresh scalar Tensor each call.  A non-finite loss
    raises :class:`TrainingDivergenceError` before any update is applied.
    """
    n_iter = int(n_iter)
    lr_at(lr, 0, n_iter, schedule)
    trace = np.empty(n_iter)
    for it in range(n_iter):
        store.zero_grad()
        loss = loss_fn()
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDivergenceError(it)
        loss.backward()
        adam_step(store, lr_at(lr, it, n_iter, schedule), max_grad_norm=max_grad_norm)
        trace[it] = value
        if callback is not None:
            callback(it, value)
    return trace
