"""Dense-network building blocks with explicit backward functions.

Every ``forward`` returns ``(output, cache)`` and every ``backward`` takes the
upstream gradient plus that cache, accumulates parameter gradients into the
:class:`ParamSet` and returns the gradient with respect to the input. Layers
only hold parameter *names*, so one layer object can run against any
``ParamSet`` (for example a read-only trained one shared across threads).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..exceptions import ConfigurationError, InputError
from .params import ParamSet

ACTIVATIONS = ("relu", "sigmoid", "tanh", "softplus", "identity")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def activation(x: np.ndarray, kind: str) -> tuple[np.ndarray, tuple[str, np.ndarray, np.ndarray]]:
    """Apply an elementwise nonlinearity; returns ``(y, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        y = np.maximum(x, 0.0)
    elif kind == "sigmoid":
        y = sigmoid(x)
    elif kind == "tanh":
        y = np.tanh(x)
    elif kind == "softplus":
        y = softplus(x)
    elif kind == "identity":
        y = x.copy()
    else:
        raise ConfigurationError(f"unsupported activation {kind!r}")
    return y, (kind, x, y)


def activation_backward(dy: np.ndarray, cache: tuple[str, np.ndarray, np.ndarray]) -> np.ndarray:
    kind, x, y = cache
    if kind == "relu":
        return dy * (x > 0)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "softplus":
        return dy * sigmoid(x)
    return dy


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


@dataclass
class ForwardContext:
    """Per-call switches for the stochastic and stateful parts of a forward pass.

    Randomness is keyed on ``(seed, step, tag)`` so repeating a call with the
    same context reproduces every dropout mask and noise draw exactly.
    """

    train: bool = False
    seed: int = 0
    step: int = 0
    update_stats: bool = True
    dropout: bool = True
    extras: dict[str, Any] = field(default_factory=dict)

    def rng(self, tag: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.step, tag])


class Dense:
    """Affine map ``y = x @ W + b``; ``bias=False`` drops ``b`` (e.g. ahead of batch norm)."""

    def __init__(self, name: str, n_in: int, n_out: int, bias: bool = True) -> None:
        self.name = name
        self.n_in = n_in
        self.n_out = n_out
        self.w = f"{name}.W"
        self.b = f"{name}.b" if bias else None

    def init(self, params: ParamSet, rng: np.random.Generator) -> None:
        params.add(self.w, glorot_uniform(rng, self.n_in, self.n_out))
        if self.b is not None:
            params.add(self.b, np.zeros(self.n_out))

    def forward(self, params: ParamSet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        W = params[self.w]
        if x.ndim != 2 or x.shape[1] != W.shape[0]:
            raise ConfigurationError(
                f"{self.name}: input of shape {x.shape} does not match weight {W.shape}"
            )
        out = x @ W
        if self.b is not None:
            out = out + params[self.b]
        return out, x

    def backward(self, params: ParamSet, dy: np.ndarray, cache: np.ndarray) -> np.ndarray:
        x = cache
        params.accumulate(self.w, x.T @ dy)
        if self.b is not None:
            params.accumulate(self.b, dy.sum(axis=0))
        return dy @ params[self.w].T


def dense(x, W, b) -> np.ndarray:
    """Stateless affine map, mostly for quick checks."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    W = np.asarray(W, dtype=np.float64)
    if x.shape[1] != W.shape[0]:
        raise ConfigurationError(f"shape mismatch: x{x.shape} @ W{W.shape}")
    return x @ W + np.asarray(b, dtype=np.float64)


class BatchNorm:
    """Per-column batch normalization with running statistics.

    Train mode uses the biased batch variance; running stats follow
    ``run = 0.9 * run + 0.1 * batch``.
    """

    def __init__(self, name: str, dim: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> None:
        self.name = name
        self.dim = dim
        self.eps = eps
        self.momentum = momentum
        self.scale = f"{name}.scale"
        self.shift = f"{name}.shift"
        self.running_mean = f"{name}.running_mean"
        self.running_var = f"{name}.running_var"

    def init(self, params: ParamSet, rng: np.random.Generator | None = None) -> None:
        params.add(self.scale, np.ones(self.dim))
        params.add(self.shift, np.zeros(self.dim))
        params.add_buffer(self.running_mean, np.zeros(self.dim))
        params.add_buffer(self.running_var, np.ones(self.dim))

    def forward(self, params: ParamSet, x: np.ndarray, ctx: ForwardContext):
        x = np.asarray(x, dtype=np.float64)
        if ctx.train:
            if x.shape[0] < 2:
                raise InputError("batch norm in train mode needs a batch of at least 2 rows")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            if ctx.update_stats:
                rm = params.buffers[self.running_mean]
                rv = params.buffers[self.running_var]
                rm *= self.momentum
                rm += (1.0 - self.momentum) * mean
                rv *= self.momentum
                rv += (1.0 - self.momentum) * var
        else:
            mean = params.buffers[self.running_mean]
            var = params.buffers[self.running_var]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        y = params[self.scale] * xhat + params[self.shift]
        return y, (xhat, inv_std, ctx.train)

    def backward(self, params: ParamSet, dy: np.ndarray, cache) -> np.ndarray:
        xhat, inv_std, train = cache
        params.accumulate(self.scale, (dy * xhat).sum(axis=0))
        params.accumulate(self.shift, dy.sum(axis=0))
        dxhat = dy * params[self.scale]
        if not train:
            return dxhat * inv_std
        n = dy.shape[0]
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


def batch_norm(x, scale, shift, running_mean=None, running_var=None, mode: str = "train",
               eps: float = BN_EPS) -> np.ndarray:
    """Functional batch norm used by the hand-checked examples."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if mode == "train":
        if x.shape[0] < 2:
            raise InputError("batch norm in train mode needs a batch of at least 2 rows")
        mean, var = x.mean(axis=0), x.var(axis=0)
    else:
        mean, var = np.asarray(running_mean, float), np.asarray(running_var, float)
    return np.asarray(scale) * (x - mean) / np.sqrt(var + eps) + np.asarray(shift)


class Embedding:
    """Row-gather from a trainable table; backward scatter-adds."""

    def __init__(self, name: str, n_rows: int, dim: int) -> None:
        self.name = name
        self.n_rows = n_rows
        self.dim = dim
        self.table = f"{name}.table"

    def init(self, params: ParamSet, rng: np.random.Generator) -> None:
        params.add(self.table, rng.normal(0.0, 0.01, size=(self.n_rows, self.dim)))

    def forward(self, params: ParamSet, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out, idx = embedding_lookup(params[self.table], idx)
        return out, idx

    def backward(self, params: ParamSet, dy: np.ndarray, cache: np.ndarray) -> None:
        grad = params.grads[self.table]
        np.add.at(grad, cache, dy)


def embedding_lookup(table: np.ndarray, indices) -> tuple[np.ndarray, np.ndarray]:
    table = np.asarray(table, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise InputError(f"embedding index out of range for a table with {table.shape[0]} rows")
    return table[idx], idx


def embedding_backward(table_shape: tuple[int, int], idx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    grad = np.zeros(table_shape)
    np.add.at(grad, np.asarray(idx, dtype=np.int64), dy)
    return grad


def dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    """Inverted-dropout mask: kept units are scaled by ``1 / (1 - rate)``."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


class MLP:
    """Stack of Dense layers with a shared hidden activation.

    ``dropout`` applies after every hidden activation when the context allows it.
    """

    def __init__(self, name: str, sizes: list[int], hidden_activation: str = "relu",
                 output_activation: str = "identity", dropout: float = 0.0) -> None:
        if len(sizes) < 2:
            raise ConfigurationError(f"{name}: an MLP needs at least input and output sizes")
        self.name = name
        self.sizes = list(sizes)
        self.layers = [Dense(f"{name}.{i}", a, b) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.dropout = dropout

    def init(self, params: ParamSet, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.init(params, rng)

    def forward(self, params: ParamSet, x: np.ndarray, ctx: ForwardContext | None = None,
                dropout_tag: int = 0):
        caches = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x, dc = layer.forward(params, x)
            kind = self.output_activation if i == last else self.hidden_activation
            x, ac = activation(x, kind)
            mask = None
            if (i < last and self.dropout > 0 and ctx is not None and ctx.train and ctx.dropout):
                mask = dropout_mask(ctx.rng(dropout_tag * 100 + i), x.shape, self.dropout)
                x = x * mask
            caches.append((dc, ac, mask))
        return x, caches

    def backward(self, params: ParamSet, dy: np.ndarray, caches) -> np.ndarray:
        for layer, (dc, ac, mask) in zip(reversed(self.layers), reversed(caches)):
            if mask is not None:
                dy = dy * mask
            dy = activation_backward(dy, ac)
            dy = layer.backward(params, dy, dc)
        return dy

    def weight_names(self) -> list[str]:
        return [layer.w for layer in self.layers]
