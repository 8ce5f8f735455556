"""Cascaded ordinal decomposition: K-1 exceedance heads chained into a bucket distribution."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, InputError
from .nn import MLP, ForwardContext, ParamSet, linear_schedule, sigmoid, softplus


@dataclass
class CascadeConfig:
    """Per-level head settings. The list defaults are tuned for K=4 only."""

    trunk_hidden: int = 32
    trunk_output: int = 32
    head_width: int = 32
    depths: tuple[int, ...] = (2, 1, 2)
    l2: tuple[float, ...] = (0.01, 0.01, 0.008)
    dropout: tuple[float, ...] = (0.2, 0.1, 0.1)
    stage_weights: tuple[float, ...] = (5.0, 2.5, 3.0)
    negative_weights: tuple[float, ...] = (3.0, 5.0, 8.0)
    threshold: float = 0.5

    def validate(self, n_buckets: int) -> None:
        levels = n_buckets - 1
        for name in ("depths", "l2", "dropout", "stage_weights", "negative_weights"):
            if len(getattr(self, name)) != levels:
                raise ConfigurationError(
                    f"cascade.{name} has {len(getattr(self, name))} entries but K={n_buckets} "
                    f"needs {levels}; set every per-level list explicitly")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError("decision threshold must lie in (0, 1)")
        if any(w <= 0 for w in self.stage_weights) or any(w <= 0 for w in self.negative_weights):
            raise ConfigurationError("stage and negative weights must be positive")
        if any(d < 0 for d in self.depths):
            raise ConfigurationError("head depth must be non-negative")
        if any(not 0.0 <= r < 1.0 for r in self.dropout):
            raise ConfigurationError("dropout rates must lie in [0, 1)")


@dataclass
class CascadeOutput:
    logits: np.ndarray
    marginals: np.ndarray
    bucket_dist: np.ndarray
    predicted_bucket: np.ndarray
    h_shared: np.ndarray | None = field(default=None, repr=False)
    caches: list = field(default_factory=list, repr=False)
    trunk_cache: object = field(default=None, repr=False)


def _survival(p: np.ndarray) -> np.ndarray:
    n, m = p.shape
    surv = np.ones((n, m + 1))
    surv[:, 1:] = np.cumprod(p, axis=1)
    return surv


def bucket_distribution(p) -> np.ndarray:
    """Chain exceedance probabilities into a K-way distribution.

    ``P(1) = 1 - p_1``, ``P(k) = (1 - p_k) * prod_{j<k} p_j`` and
    ``P(K) = prod_{j<K} p_j``. Accepts one vector or a batch of rows.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    surv = _survival(p)
    out = surv.copy()
    out[:, :-1] *= 1.0 - p
    return out[0] if single else out


def bucket_distribution_backward(p: np.ndarray, d_dist: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``p`` given the upstream gradient on the distribution.

    Products that skip ``p_j`` are rebuilt directly rather than divided out so
    that tiny marginals stay exact.
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    d_dist = np.atleast_2d(d_dist)
    n, m = p.shape
    surv = _survival(p)
    grad = np.empty_like(p)
    for j in range(m):
        p_wo = p.copy()
        p_wo[:, j] = 1.0
        surv_wo = _survival(p_wo)
        # k > j: P(k) depends on p_j through the survival product
        g = d_dist[:, m] * surv_wo[:, m]
        if j + 1 < m:
            g = g + np.sum(d_dist[:, j + 1:m] * surv_wo[:, j + 1:m] * (1.0 - p[:, j + 1:m]), axis=1)
        g = g - d_dist[:, j] * surv[:, j]
        grad[:, j] = g
    return grad


def predict_bucket(p, threshold: float = 0.5) -> np.ndarray:
    """Sequential traversal: the first stage with ``p_k <= threshold`` stops the sample."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    fail = p <= threshold
    first = np.argmax(fail, axis=1) + 1
    out = np.where(fail.any(axis=1), first, p.shape[1] + 1)
    return out[0] if single else out


def bce_with_logits(targets: np.ndarray, logits: np.ndarray) -> np.ndarray:
    return softplus(logits) - targets * logits


def cascade_loss_terms(logits, y, thresholds, stage_weights, negative_weights):
    """Per-sample, per-level contributions to :func:`cascade_loss` and the logit gradient.

    Every sample supervises every level with target ``y > tau_k``; negatives at
    level k are up-weighted by ``negative_weights[k]``.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, m = z.shape
    if n == 0:
        raise InputError("cascade loss needs a non-empty batch")
    tau = np.asarray(thresholds, dtype=np.float64)[:m]
    t = (y[:, None] > tau[None, :]).astype(np.float64)
    s = np.where(t == 0.0, np.asarray(negative_weights, dtype=np.float64)[None, :m], 1.0)
    w = np.asarray(stage_weights, dtype=np.float64)[None, :m]
    terms = w * s * bce_with_logits(t, z) / n
    grad = w * s * (sigmoid(z) - t) / n
    return terms, grad


def cascade_loss(logits, y, thresholds, stage_weights, negative_weights):
    """Weighted teacher-forced BCE summed over levels; returns ``(loss, dL/dlogits)``."""
    terms, grad = cascade_loss_terms(logits, y, thresholds, stage_weights, negative_weights)
    return float(terms.sum()), grad


def empirical_bucket_freq(true_buckets, n_buckets: int) -> np.ndarray:
    b = np.asarray(true_buckets, dtype=np.int64).reshape(-1)
    return np.bincount(b - 1, minlength=n_buckets)[:n_buckets] / max(len(b), 1)


def smoothed_kl(q_true, q_pred, eps: float = 1e-8) -> float:
    """``KL(q_true || q_pred)`` after adding ``eps`` and renormalizing both."""
    a = np.asarray(q_true, dtype=np.float64) + eps
    b = np.asarray(q_pred, dtype=np.float64) + eps
    a, b = a / a.sum(), b / b.sum()
    return float(np.sum(a * np.log(a / b)))


def distill_loss(logits, true_buckets, temperature: float, eps: float = 1e-8):
    """Batch-level KL between empirical and predicted bucket frequencies.

    The predicted distribution is the batch mean of the chained distribution
    built from ``sigmoid(logits / temperature)``. Returns ``(loss, dL/dlogits)``.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    n, m = z.shape
    k = m + 1
    if n == 0:
        raise InputError("distillation loss needs a non-empty batch")
    if n < k:
        warnings.warn(f"distillation batch of {n} is smaller than K={k}", RuntimeWarning, stacklevel=2)
    p = sigmoid(z / temperature)
    dist = bucket_distribution(p)
    q_pred = dist.mean(axis=0)
    q_true = empirical_bucket_freq(true_buckets, k)
    norm = 1.0 + k * eps
    a = (q_true + eps) / norm
    b = (q_pred + eps) / norm
    loss = float(np.sum(a * np.log(a / b)))
    d_qpred = -(a / b) / norm
    d_dist = np.broadcast_to(d_qpred / n, dist.shape)
    dp = bucket_distribution_backward(p, d_dist)
    grad = dp * p * (1.0 - p) / temperature
    return loss, grad


def temperature_schedule(step: int, total_steps: int, start: float = 2.0, end: float = 1.0) -> float:
    return linear_schedule(step, total_steps, start, end)


class CascadeModule:
    """Shared cascade trunk followed by one classifier head per threshold."""

    def __init__(self, n_in: int, n_buckets: int, cfg: CascadeConfig) -> None:
        cfg.validate(n_buckets)
        self.cfg = cfg
        self.n_buckets = n_buckets
        self.trunk = MLP("cascade.trunk", [n_in, cfg.trunk_hidden, cfg.trunk_output],
                         hidden_activation="relu", output_activation="identity")
        self.heads = [
            MLP(f"cascade.head{i}", [cfg.trunk_output] + [cfg.head_width] * depth + [1],
                hidden_activation="relu", output_activation="identity", dropout=rate)
            for i, (depth, rate) in enumerate(zip(cfg.depths, cfg.dropout))
        ]

    @property
    def output_dim(self) -> int:
        return self.cfg.trunk_output

    def init(self, params: ParamSet, rng: np.random.Generator) -> None:
        self.trunk.init(params, rng)
        for head in self.heads:
            head.init(params, rng)

    def forward(self, params: ParamSet, h: np.ndarray, ctx: ForwardContext) -> CascadeOutput:
        h_shared, trunk_cache = self.trunk.forward(params, h, ctx)
        logits, caches = self.heads_forward(params, h_shared, ctx)
        marginals = sigmoid(logits)
        return CascadeOutput(logits, marginals, bucket_distribution(marginals),
                             predict_bucket(marginals, self.cfg.threshold), h_shared, caches,
                             trunk_cache)

    def heads_forward(self, params: ParamSet, h_shared: np.ndarray, ctx: ForwardContext):
        """Logits of every level for a given trunk output; returns ``(logits, caches)``."""
        zs, caches = [], []
        for i, head in enumerate(self.heads):
            z, cache = head.forward(params, h_shared, ctx, dropout_tag=10 + i)
            zs.append(z[:, 0])
            caches.append(cache)
        return np.stack(zs, axis=1), caches

    def heads_backward(self, params: ParamSet, d_logits: np.ndarray, caches: list) -> np.ndarray:
        dh = 0.0
        for i, head in enumerate(self.heads):
            dh = dh + head.backward(params, d_logits[:, i:i + 1], caches[i])
        return dh

    def trunk_backward(self, params: ParamSet, d_shared: np.ndarray, out: CascadeOutput) -> np.ndarray:
        return self.trunk.backward(params, d_shared, out.trunk_cache)

    def l2_penalty(self, params: ParamSet, accumulate: bool = True) -> float:
        total = 0.0
        for coef, head in zip(self.cfg.l2, self.heads):
            if coef == 0:
                continue
            for name in head.weight_names():
                W = params[name]
                total += coef * float(np.sum(W * W))
                if accumulate:
                    params.accumulate(name, 2.0 * coef * W)
        return total
