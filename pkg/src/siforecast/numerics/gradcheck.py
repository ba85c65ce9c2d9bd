"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

import numpy as np


def numerical_grad(fn, tensor, h=1e-5):
    """Central differences of scalar ``fn()`` with respect to ``tensor.data``."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data)
        flat[i] = orig - h
        down = float(fn().data)
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``."""
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def check_gradients(fn, tensors, h=1e-5):
    """Return the worst relative error over ``tensors``.

    ``fn`` must rebuild the forward graph on each call and return a scalar
    Tensor.  Gradients in ``tensors`` are overwritten.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        worst = max(worst, relative_error(a, numerical_grad(fn, t, h)))
    for t in tensors:
        t.grad = None
    return worst
