"""Context-aware feature alignment and the dual-residual intra-bucket regressor."""

from __future__ import annotations

import numpy as np

from .buckets import BucketSpec
from .nn import (
    BatchNorm,
    Dense,
    Embedding,
    ForwardContext,
    ParamSet,
    activation,
    activation_backward,
    linear_schedule,
    sigmoid,
)


class AlignModule:
    """GLU-style gate over ``[h, p_cascade, E(b_hat)]``.

    Only ``h`` and the bucket embedding receive gradient; the marginals arrive
    detached and the predicted bucket is discrete.
    """

    def __init__(self, n_in: int, n_buckets: int, embed_dim: int, out_dim: int) -> None:
        self.n_in = n_in
        self.n_buckets = n_buckets
        self.embedding = Embedding("align.bucket_embedding", n_buckets, embed_dim)
        base = n_in + (n_buckets - 1) + embed_dim
        self.gate = Dense("align.gate", base, out_dim)
        self.content = Dense("align.content", base, out_dim)
        self.out_dim = out_dim

    def init(self, params: ParamSet, rng: np.random.Generator) -> None:
        self.embedding.init(params, rng)
        self.gate.init(params, rng)
        self.content.init(params, rng)

    def forward(self, params: ParamSet, h, p_cascade, b_hat):
        emb, emb_cache = self.embedding.forward(params, np.asarray(b_hat) - 1)
        h_base = np.concatenate([h, np.asarray(p_cascade, dtype=np.float64), emb], axis=1)
        g_pre, g_cache = self.gate.forward(params, h_base)
        c_pre, c_cache = self.content.forward(params, h_base)
        g = sigmoid(g_pre)
        c, c_act = activation(c_pre, "relu")
        return g * c, (emb_cache, g_cache, c_cache, g, c, c_act)

    def backward(self, params: ParamSet, d_out: np.ndarray, cache) -> np.ndarray:
        emb_cache, g_cache, c_cache, g, c, c_act = cache
        d_gpre = d_out * c * g * (1.0 - g)
        d_cpre = activation_backward(d_out * g, c_act)
        d_base = self.gate.backward(params, d_gpre, g_cache) + self.content.backward(params, d_cpre, c_cache)
        start = self.n_in + self.n_buckets - 1
        self.embedding.backward(params, d_base[:, start:], emb_cache)
        return d_base[:, : self.n_in]


class ResidualModule:
    """Projection, a batch-normalized identity block, a projected-skip block and a tanh head."""

    def __init__(self, n_in: int, proj_dim: int, res_dim: int) -> None:
        self.proj = Dense("residual.proj", n_in, proj_dim)
        # batch norm follows, so a bias here would have no effect
        self.block1 = Dense("residual.block1", proj_dim, proj_dim, bias=False)
        self.bn = BatchNorm("residual.bn1", proj_dim)
        self.block2 = Dense("residual.block2", proj_dim, res_dim)
        self.skip = Dense("residual.skip", proj_dim, res_dim)
        self.head = Dense("residual.head", res_dim, 1)

    def init(self, params: ParamSet, rng: np.random.Generator) -> None:
        for layer in (self.proj, self.block1, self.bn, self.block2, self.skip, self.head):
            layer.init(params, rng)

    def forward(self, params: ParamSet, x: np.ndarray, ctx: ForwardContext):
        h0, c_proj = self.proj.forward(params, x)
        a0, c_a0 = activation(h0, "relu")
        r1, c_b1 = self.block1.forward(params, a0)
        bn, c_bn = self.bn.forward(params, r1, ctx)
        h1, c_h1 = activation(bn + h0, "relu")
        a1, c_a1 = activation(h1, "relu")
        r2, c_b2 = self.block2.forward(params, a1)
        sk, c_sk = self.skip.forward(params, h1)
        h2, c_h2 = activation(r2 + sk, "relu")
        out, c_head = self.head.forward(params, h2)
        v, c_tanh = activation(out, "tanh")
        return v[:, 0], (c_proj, c_a0, c_b1, c_bn, c_h1, c_a1, c_b2, c_sk, c_h2, c_head, c_tanh)

    def backward(self, params: ParamSet, d_v: np.ndarray, cache) -> np.ndarray:
        c_proj, c_a0, c_b1, c_bn, c_h1, c_a1, c_b2, c_sk, c_h2, c_head, c_tanh = cache
        d = activation_backward(d_v[:, None], c_tanh)
        d_h2 = self.head.backward(params, d, c_head)
        d_sum2 = activation_backward(d_h2, c_h2)
        d_h1 = self.skip.backward(params, d_sum2, c_sk)
        d_h1 = d_h1 + activation_backward(self.block2.backward(params, d_sum2, c_b2), c_a1)
        d_sum1 = activation_backward(d_h1, c_h1)
        d_h0 = d_sum1 + activation_backward(
            self.block1.backward(params, self.bn.backward(params, d_sum1, c_bn), c_b1), c_a0)
        return self.proj.backward(params, d_h0, c_proj)


def smooth_target(v_target, true_bucket, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Replace zero-bucket targets by ``Uniform(-theta, theta)`` draws."""
    v = np.asarray(v_target, dtype=np.float64)
    b = np.asarray(true_bucket)
    noise = rng.uniform(-theta, theta, size=v.shape)
    return np.where(b == 1, noise, v)


def theta_schedule(step: int, total: int, start: float = 1.0, end: float = 0.1) -> float:
    theta = linear_schedule(step, total, start, end)
    return float(np.clip(theta, min(start, end), max(start, end)))


def residual_loss(v_pred, v_target, beta: float = 0.5):
    """Value-weighted MSE ``mean((v_pred - v)^2 * sigmoid(beta * v))``; returns ``(loss, dL/dv_pred)``."""
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v = np.asarray(v_target, dtype=np.float64)
    weight = sigmoid(beta * v)
    diff = v_pred - v
    n = max(v.size, 1)
    return float(np.mean(diff * diff * weight)) if v.size else 0.0, 2.0 * diff * weight / n


def denormalize(v_norm, spec: BucketSpec, b_hat) -> np.ndarray:
    """``v * r_b + c_b`` floored at zero; the zero bucket always yields exactly 0."""
    v = np.asarray(v_norm, dtype=np.float64)
    b = np.asarray(b_hat)
    value = np.maximum(v * spec.half_range(b) + spec.center(b), 0.0)
    return np.where(b == 1, 0.0, value)
