"""Attention-guided augmentation and the dual-head whale predictor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MLP, Dense, ForwardContext, ParamSet, activation, activation_backward, sigmoid


@dataclass
class HighValueLossConfig:
    beta_focal: float = 2.0
    lambda_reg: float = 0.5
    denominator_floor: float = 1.0


def feature_stats(h) -> tuple[np.ndarray, tuple]:
    """Per-row ``[mean, std, max, min]`` across the feature axis (population std)."""
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    mean = h.mean(axis=1)
    std = h.std(axis=1)
    imax = np.argmax(h, axis=1)
    imin = np.argmin(h, axis=1)
    rows = np.arange(h.shape[0])
    stats = np.stack([mean, std, h[rows, imax], h[rows, imin]], axis=1)
    return stats, (h, mean, std, imax, imin)


def feature_stats_backward(d_stats: np.ndarray, cache) -> np.ndarray:
    h, mean, std, imax, imin = cache
    n, d = h.shape
    rows = np.arange(n)
    dh = np.repeat(d_stats[:, 0:1] / d, d, axis=1)
    safe = np.where(std > 0, std, 1.0)
    dh += np.where(std[:, None] > 0, d_stats[:, 1:2] * (h - mean[:, None]) / (d * safe[:, None]), 0.0)
    dh[rows, imax] += d_stats[:, 2]
    dh[rows, imin] += d_stats[:, 3]
    return dh


class AttentionModule:
    """``sigmoid(MLP([h; stats(h); b_embed]))`` with one hidden relu layer."""

    def __init__(self, feature_dim: int, embed_dim: int, hidden: int) -> None:
        self.feature_dim = feature_dim
        self.embed_dim = embed_dim
        self.mlp = MLP("augment.attention", [feature_dim + 4 + embed_dim, hidden, feature_dim],
                       hidden_activation="relu", output_activation="sigmoid")

    def init(self, params: ParamSet, rng: np.random.Generator) -> None:
        self.mlp.init(params, rng)

    def forward(self, params: ParamSet, h, b_embed):
        stats, s_cache = feature_stats(h)
        x = np.concatenate([h, stats, b_embed], axis=1)
        w, caches = self.mlp.forward(params, x)
        return w, (s_cache, caches)

    def backward(self, params: ParamSet, d_w, cache):
        """Returns ``(dL/dh, dL/db_embed)``."""
        s_cache, caches = cache
        dx = self.mlp.backward(params, d_w, caches)
        d = self.feature_dim
        dh = dx[:, :d] + feature_stats_backward(dx[:, d:d + 4], s_cache)
        return dh, dx[:, d + 4:]


def attention_weights(h, stats, b_embed, params: ParamSet, module: AttentionModule) -> np.ndarray:
    x = np.concatenate([h, stats, b_embed], axis=1)
    w, _ = module.mlp.forward(params, x)
    return w


def augment(h, w, sigma: float, rng: np.random.Generator | None, train: bool):
    """``h + eps * w`` with ``eps ~ N(0, sigma^2)`` in training; identity otherwise.

    Returns ``(h_aug, eps)``; ``eps`` is the frozen noise needed by the backward pass.
    """
    h = np.asarray(h, dtype=np.float64)
    if not train or sigma == 0 or rng is None:
        return h.copy(), np.zeros_like(h)
    eps = rng.normal(0.0, sigma, size=h.shape)
    return h + eps * w, eps


class DualHead:
    """Shared relu trunk with a softplus regression head and a sigmoid confidence head.

    ``scale`` multiplies the softplus output so the regression head starts in the
    value range of the top bucket instead of near ``ln 2``.
    """

    def __init__(self, n_in: int, hidden: tuple[int, ...]) -> None:
        self.trunk = MLP("dual.trunk", [n_in, *hidden], hidden_activation="relu",
                         output_activation="relu")
        self.reg = Dense("dual.reg", hidden[-1], 1)
        self.conf = Dense("dual.conf", hidden[-1], 1)

    def init(self, params: ParamSet, rng: np.random.Generator) -> None:
        self.trunk.init(params, rng)
        self.reg.init(params, rng)
        self.conf.init(params, rng)

    def forward(self, params: ParamSet, h_aug, scale: float = 1.0):
        t, t_cache = self.trunk.forward(params, h_aug)
        r, r_cache = self.reg.forward(params, t)
        sp, sp_cache = activation(r, "softplus")
        c, c_cache = self.conf.forward(params, t)
        v_high = scale * sp[:, 0]
        conf_logit = c[:, 0]
        return v_high, conf_logit, (t_cache, r_cache, sp_cache, c_cache, scale)

    def backward(self, params: ParamSet, d_v, d_conf_logit, cache) -> np.ndarray:
        t_cache, r_cache, sp_cache, c_cache, scale = cache
        d_r = activation_backward(scale * d_v[:, None], sp_cache)
        d_t = self.reg.backward(params, d_r, r_cache) + self.conf.backward(params, d_conf_logit[:, None], c_cache)
        return self.trunk.backward(params, d_t, t_cache)


def dual_head(h_aug, params: ParamSet, head: DualHead, scale: float = 1.0):
    v_high, logit, _ = head.forward(params, np.atleast_2d(h_aug), scale)
    return v_high, sigmoid(logit)


def focal_term(p_conf, beta_focal: float = 2.0) -> np.ndarray:
    p = np.asarray(p_conf, dtype=np.float64)
    return -((1.0 - p) ** beta_focal) * np.log(p)


def relative_term(v_high, y, floor: float = 1.0) -> np.ndarray:
    v_high = np.asarray(v_high, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.abs(v_high - y) / np.maximum(y, floor)


def high_value_terms(v_high, y, conf_logit, cfg: HighValueLossConfig):
    """Per-sample whale loss and its gradients w.r.t. ``v_high`` and the confidence logit.

    The focal term is evaluated through the logit (``log p = -softplus(-z)``) so
    that saturated confidences stay finite.
    """
    z = np.asarray(conf_logit, dtype=np.float64)
    p = sigmoid(z)
    q = sigmoid(-z)
    log_p = -(np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z))))
    beta = cfg.beta_focal
    focal = -(q**beta) * log_p
    # d/dz [-(1-p)^b log p] with dp/dz = p q
    if beta == 0:
        d_focal = -q
    else:
        d_focal = beta * q**beta * p * log_p - q ** (beta + 1.0)
    v_high = np.asarray(v_high, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    denom = np.maximum(y, cfg.denominator_floor)
    rel = np.abs(v_high - y) / denom
    d_v = cfg.lambda_reg * np.sign(v_high - y) / denom
    return focal + cfg.lambda_reg * rel, d_v, d_focal


def high_value_loss(v_high, y, p_conf, cfg: HighValueLossConfig | None = None) -> float:
    """Mean over the supplied (top-bucket) samples of focal + ``lambda_reg`` * relative error."""
    cfg = cfg or HighValueLossConfig()
    v_high = np.asarray(v_high, dtype=np.float64)
    if v_high.size == 0:
        return 0.0
    per = focal_term(p_conf, cfg.beta_focal) + cfg.lambda_reg * relative_term(v_high, y, cfg.denominator_floor)
    return float(np.mean(per))


def augment_forward(params: ParamSet, attention: AttentionModule, head: DualHead, h, b_embed,
                    sigma: float, ctx: ForwardContext, rng: np.random.Generator | None, scale: float):
    """Attention weights, perturbation and dual head for the rows in ``h``."""
    w, a_cache = attention.forward(params, h, b_embed)
    h_aug, eps = augment(h, w, sigma, rng, ctx.train)
    v_high, conf_logit, d_cache = head.forward(params, h_aug, scale)
    return v_high, conf_logit, (a_cache, eps, d_cache)


def augment_backward(params: ParamSet, attention: AttentionModule, head: DualHead, d_v, d_conf, cache):
    """Backward through the dual head and attention; returns ``dL/dh`` (for checks only)."""
    a_cache, eps, d_cache = cache
    d_haug = head.backward(params, d_v, d_conf, d_cache)
    dh_att, _ = attention.backward(params, d_haug * eps, a_cache)
    return d_haug + dh_att
