"""The fixed layer vocabulary: dense maps, time features, residual field
networks and an LSTM history encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractError, DimensionError
from .optim import ParamStore
from .tensor import Tensor, as_tensor, concat

MAX_TIME_FREQUENCY = 1000.0


def dense_forward(x, weights, bias):
    """Affine map ``x @ weights + bias`` for a ``batch x in`` input."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"input of shape {x.shape} does not match weights of shape {weights.shape}"
        )
    if bias.shape != (weights.shape[1],):
        raise DimensionError(
            f"bias of shape {bias.shape} does not match weights of shape {weights.shape}"
        )
    return x @ weights + bias


def time_embed(s, dim):
    """Interleaved ``[sin(f_k s), cos(f_k s)]`` features.

    Frequencies are geometrically spaced on ``[1, MAX_TIME_FREQUENCY]``.
    A scalar ``s`` gives a ``(dim,)`` tensor, a vector gives ``(len(s), dim)``.
    """
    if dim <= 0 or dim % 2:
        raise ContractError(f"time embedding dimension must be even and positive, got {dim}")
    s_arr = np.asarray(s, dtype=np.float64)
    freqs = np.geomspace(1.0, MAX_TIME_FREQUENCY, dim // 2)
    phase = s_arr[..., None] * freqs
    out = np.empty(s_arr.shape + (dim,))
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return Tensor(out)


def _uniform_fan_in(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    def __init__(self, store, name, n_in, n_out, rng):
        self.weight = store.add(f"{name}.weight", _uniform_fan_in(rng, n_in, (n_in, n_out)))
        self.bias = store.add(f"{name}.bias", np.zeros(n_out))

    def __call__(self, x):
        return dense_forward(x, self.weight, self.bias)


@dataclass(frozen=True)
class FieldNetSpec:
    data_dim: int
    hidden_dim: int = 128
    n_blocks: int = 4
    cond_dim: int = 0
    time_dim: int = 32


class FieldNet:
    """Residual MLP mapping ``(state, diffusion time, condition)`` to a field value.

    The input layer sees ``[state, time features, condition]``; each residual
    block additionally receives a learned projection of ``[time features,
    condition]`` added to its input.  Blocks use SiLU activations.
    """

    def __init__(self, spec, store=None, prefix="field", seed=0):
        self.spec = spec
        self.store = store if store is not None else ParamStore()
        rng = np.random.default_rng(seed)
        h = spec.hidden_dim
        n_in = spec.data_dim + spec.time_dim + spec.cond_dim
        self.inp = Dense(self.store, f"{prefix}.in", n_in, h, rng)
        self.blocks = []
        for k in range(spec.n_blocks):
            self.blocks.append(
                (
                    Dense(self.store, f"{prefix}.block{k}.ctx", spec.time_dim + spec.cond_dim, h, rng),
                    Dense(self.store, f"{prefix}.block{k}.fc1", h, h, rng),
                    Dense(self.store, f"{prefix}.block{k}.fc2", h, h, rng),
                )
            )
        self.out = Dense(self.store, f"{prefix}.out", h, spec.data_dim, rng)

    def __call__(self, x, s, cond=None):
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.spec.data_dim:
            raise DimensionError(
                f"state of shape {x.shape} does not match data dim {self.spec.data_dim}"
            )
        batch = x.shape[0]
        s = np.broadcast_to(np.asarray(s, dtype=np.float64), (batch,))
        temb = time_embed(s, self.spec.time_dim)
        if self.spec.cond_dim:
            if cond is None:
                raise ContractError("conditional field net called without a condition")
            cond = as_tensor(cond)
            if cond.shape != (batch, self.spec.cond_dim):
                raise DimensionError(
                    f"condition of shape {cond.shape} does not match "
                    f"({batch}, {self.spec.cond_dim})"
                )
            context = concat([temb, cond])
        else:
            context = temb
        hidden = self.inp(concat([x, context]))
        for ctx, fc1, fc2 in self.blocks:
            u = hidden + ctx(context)
            hidden = hidden + fc2(fc1(u.silu()).silu())
        return self.out(hidden.silu())


@dataclass(frozen=True)
class RnnEncoderSpec:
    input_dim: int
    hidden_dim: int = 128
    n_layers: int = 1
    cell: str = "lstm"


class RnnEncoder:
    """Stacked LSTM returning the last hidden state of the top layer."""

    def __init__(self, spec, store=None, prefix="encoder", seed=0):
        if spec.cell != "lstm":
            raise ContractError(f"unsupported recurrent cell {spec.cell!r}")
        self.spec = spec
        self.store = store if store is not None else ParamStore()
        rng = np.random.default_rng(seed)
        h = spec.hidden_dim
        self.layers = []
        for k in range(spec.n_layers):
            n_in = spec.input_dim if k == 0 else h
            wx = self.store.add(f"{prefix}.l{k}.wx", _uniform_fan_in(rng, h, (n_in, 4 * h)))
            wh = self.store.add(f"{prefix}.l{k}.wh", _uniform_fan_in(rng, h, (h, 4 * h)))
            b = self.store.add(f"{prefix}.l{k}.b", np.zeros(4 * h))
            self.layers.append((wx, wh, b))

    def cell(self, layer, x, h, c):
        """One LSTM step; gate order is input, forget, candidate, output."""
        wx, wh, b = self.layers[layer]
        n = self.spec.hidden_dim
        gates = as_tensor(x) @ wx + h @ wh + b
        i = gates[:, :n].sigmoid()
        f = gates[:, n : 2 * n].sigmoid()
        g = gates[:, 2 * n : 3 * n].tanh()
        o = gates[:, 3 * n :].sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
        return h, c

    def encode(self, seqs):
        """Encode a ``batch x T x input_dim`` array into ``batch x hidden``."""
        seqs = np.asarray(seqs.data if isinstance(seqs, Tensor) else seqs, dtype=np.float64)
        if seqs.ndim != 3 or seqs.shape[2] != self.spec.input_dim:
            raise DimensionError(
                f"sequence batch of shape {seqs.shape} does not match input dim "
                f"{self.spec.input_dim}"
            )
        if seqs.shape[1] < 1:
            raise ContractError("cannot encode an empty sequence")
        batch, steps, _ = seqs.shape
        inputs = [seqs[:, t, :] for t in range(steps)]
        for layer in range(self.spec.n_layers):
            h = Tensor(np.zeros((batch, self.spec.hidden_dim)))
            c = Tensor(np.zeros((batch, self.spec.hidden_dim)))
            outputs = []
            for x in inputs:
                h, c = self.cell(layer, x, h, c)
                outputs.append(h)
            inputs = outputs
        return h


def lstm_encode(seq, encoder):
    """Encode a single ``T x dims`` sequence into a ``hidden`` vector."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise DimensionError(f"expected a T x dims sequence, got shape {seq.shape}")
    if seq.shape[0] < 1:
        raise ContractError("cannot encode an empty sequence")
    return encoder.encode(seq[None])[0]
