"""The composed network: encoder, cascade, alignment/residual and whale modules.

``CascadeOrdinalNet.run`` performs one forward pass and, in training, the composite loss
and the full backward pass. Gradient boundaries:

* distillation reaches the cascade heads only (their input is treated as detached);
* the alignment gate sees detached marginals and a discrete bucket index;
* the whale branch consumes a detached encoder output, so its loss trains only
  the attention MLP and the dual head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .alignment import (
    AlignModule,
    ResidualModule,
    denormalize,
    residual_loss,
    smooth_target,
)
from .buckets import BucketSpec, assign_bucket, normalize_label
from .cascade import CascadeConfig, CascadeModule, CascadeOutput, cascade_loss_terms, distill_loss
from .exceptions import ConfigurationError, NumericalError
from .high_value import (
    AttentionModule,
    DualHead,
    HighValueLossConfig,
    augment_backward,
    augment_forward,
    high_value_terms,
)
from .nn import MLP, Dense, Embedding, ForwardContext, ParamSet, activation, activation_backward, sigmoid

# RNG tags for ForwardContext.rng
TAG_SMOOTHING = 1
TAG_AUGMENT = 2

STAGES = ("baseline", "+cascade", "+distill", "+residual", "+aug")

LOSS_COMPONENTS = ("cascade", "distill", "residual", "high_value")


@dataclass
class ModelConfig:
    n_buckets: int = 4
    encoder_hidden: tuple[int, ...] = (64, 48, 32)
    embedding_cap: int = 50
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    bucket_embedding_dim: int = 8
    align_dim: int = 32
    residual_dims: tuple[int, int] = (32, 16)
    attention_hidden: int = 32
    dual_head_hidden: tuple[int, ...] = (48, 32)
    noise_std: float = 0.1
    gamma: float = 0.8
    alpha_cascade: float = 3.0
    alpha_residual: float = 3.0
    alpha_distill: float = 0.2
    beta: float = 0.5
    beta_focal: float = 2.0
    lambda_reg: float = 0.5
    lr: float = 5e-4
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    batch_size: int = 1024
    epochs: int = 10
    seed: int = 0
    temperature_start: float = 2.0
    temperature_end: float = 1.0
    theta_start: float = 1.0
    theta_end: float = 0.1
    top_quantile: float = 0.995
    use_cascade: bool = True
    use_distill: bool = True
    use_residual: bool = True
    use_augment: bool = True
    whale_head_override: bool = True

    def validate(self) -> None:
        if self.use_distill and not self.use_cascade:
            raise ConfigurationError("distillation requires the cascade")
        if self.use_residual and not self.use_cascade:
            raise ConfigurationError("residual learning requires the cascade")
        if self.use_augment and not self.use_residual:
            raise ConfigurationError("high-value augmentation requires residual learning")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if min(self.alpha_cascade, self.alpha_residual, self.alpha_distill) < 0:
            raise ConfigurationError("loss weights alpha must be non-negative")
        if self.beta_focal < 0 or self.lambda_reg < 0:
            raise ConfigurationError("beta_focal and lambda_reg must be non-negative")
        if self.batch_size < 2 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 2 and epochs >= 0")
        if self.n_buckets < 2:
            raise ConfigurationError("need at least 2 buckets")
        if len(self.residual_dims) != 2 or not self.encoder_hidden or not self.dual_head_hidden:
            raise ConfigurationError("residual_dims needs (proj, res); hidden size lists must be non-empty")
        self.cascade.validate(self.n_buckets)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        cascade = d.pop("cascade", None)
        if isinstance(cascade, dict):
            cknown = {f.name for f in fields(CascadeConfig)}
            bad = set(cascade) - cknown
            if bad:
                raise ConfigurationError(f"unknown cascade config keys: {sorted(bad)}")
            cascade = CascadeConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cascade.items()})
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        cfg = cls(**d) if cascade is None else cls(cascade=cascade, **d)
        return cfg

    def with_stage(self, stage: str) -> ModelConfig:
        """Flags for one row of the incremental ablation ladder."""
        if stage not in STAGES:
            raise ConfigurationError(f"unknown ablation stage {stage!r}; expected one of {STAGES}")
        level = STAGES.index(stage)
        d = self.to_dict()
        d.update(use_cascade=level >= 1, use_distill=level >= 2, use_residual=level >= 3,
                 use_augment=level >= 4)
        return ModelConfig.from_dict(d)


def large_scale_config(**overrides) -> ModelConfig:
    """Hyperparameters at the published production scale."""
    cfg = ModelConfig(encoder_hidden=(400, 300, 200),
                      cascade=CascadeConfig(trunk_hidden=200, trunk_output=200, head_width=100),
                      residual_dims=(200, 100), attention_hidden=100, dual_head_hidden=(300, 200),
                      align_dim=200, batch_size=100_000, lr=5e-4)
    d = cfg.to_dict()
    d.update(overrides)
    return ModelConfig.from_dict(d)


def embedding_dim(cardinality: int, cap: int = 50) -> int:
    return max(1, int(math.ceil(min(cap, cardinality / 2))))


@dataclass
class Batch:
    numeric: np.ndarray
    categorical: np.ndarray

    def __len__(self) -> int:
        return self.numeric.shape[0]

    def take(self, rows) -> Batch:
        return Batch(self.numeric[rows], self.categorical[rows])


@dataclass
class PredictionBundle:
    """Per-sample outputs of every head plus the routing decision."""

    h_shared: np.ndarray
    cascade: CascadeOutput | None
    v_norm: np.ndarray
    v_final: np.ndarray
    v_high: np.ndarray
    p_conf: np.ndarray
    route: np.ndarray

    @property
    def predicted_bucket(self) -> np.ndarray | None:
        return None if self.cascade is None else self.cascade.predicted_bucket

    @property
    def nonzero_prob(self) -> np.ndarray | None:
        return None if self.cascade is None else self.cascade.marginals[:, 0]


class CascadeOrdinalNet:
    """Fixed network graph for one configuration; parameters live in a ``ParamSet``."""

    def __init__(self, cfg: ModelConfig, n_numeric: int, cardinalities: list[int],
                 spec: BucketSpec | None, baseline_scale: float = 1.0) -> None:
        cfg.validate()
        if spec is not None and spec.n_buckets != cfg.n_buckets:
            raise ConfigurationError("bucket spec and model disagree on K")
        self.cfg = cfg
        self.spec = spec
        self.n_numeric = n_numeric
        self.cardinalities = list(cardinalities)
        self.baseline_scale = float(baseline_scale)
        self.whale_scale = float(max(spec.centers[-1], 1.0)) if spec is not None else 1.0
        self.cat_embeddings = [Embedding(f"encoder.cat{j}", card, embedding_dim(card, cfg.embedding_cap))
                               for j, card in enumerate(self.cardinalities)]
        n_in = n_numeric + sum(e.dim for e in self.cat_embeddings)
        if n_in == 0:
            raise ConfigurationError("model needs at least one input feature")
        self.encoder = MLP("encoder.mlp", [n_in, *cfg.encoder_hidden], hidden_activation="relu",
                           output_activation="relu")
        d_h = cfg.encoder_hidden[-1]
        self.hidden_dim = d_h
        self.loss_cfg = HighValueLossConfig(cfg.beta_focal, cfg.lambda_reg, 1.0)
        self.baseline_head = self.cascade = self.align = self.residual = None
        self.attention = self.dual = None
        if not cfg.use_cascade:
            self.baseline_head = Dense("baseline.head", d_h, 1)
        else:
            if spec is None:
                raise ConfigurationError("a cascade model needs a fitted bucket spec")
            self.cascade = CascadeModule(d_h, cfg.n_buckets, cfg.cascade)
        if cfg.use_residual:
            self.align = AlignModule(d_h, cfg.n_buckets, cfg.bucket_embedding_dim, cfg.align_dim)
            self.residual = ResidualModule(cfg.align_dim, *cfg.residual_dims)
        if cfg.use_augment:
            self.attention = AttentionModule(d_h, cfg.bucket_embedding_dim, cfg.attention_hidden)
            self.dual = DualHead(d_h, tuple(cfg.dual_head_hidden))

    # construction order fixes the parameter order, and each module draws from its own stream
    def init_params(self, seed: int | None = None) -> ParamSet:
        seed = self.cfg.seed if seed is None else seed
        params = ParamSet()
        streams = [("encoder", [*self.cat_embeddings, self.encoder]),
                   ("baseline", [self.baseline_head]), ("cascade", [self.cascade]),
                   ("align", [self.align]), ("residual", [self.residual]),
                   ("attention", [self.attention]), ("dual", [self.dual])]
        for i, (_, modules) in enumerate(streams):
            rng = np.random.default_rng([seed, 1000 + i])
            for module in modules:
                if module is not None:
                    module.init(params, rng)
        return params

    # -- pieces ---------------------------------------------------------------
    def encode(self, params: ParamSet, batch: Batch, ctx: ForwardContext):
        parts = [np.asarray(batch.numeric, dtype=np.float64)] if self.n_numeric else []
        emb_caches = []
        for j, emb in enumerate(self.cat_embeddings):
            e, c = emb.forward(params, batch.categorical[:, j])
            parts.append(e)
            emb_caches.append(c)
        x = np.concatenate(parts, axis=1)
        h, mlp_cache = self.encoder.forward(params, x, ctx)
        return h, (emb_caches, mlp_cache)

    def encode_backward(self, params: ParamSet, dh: np.ndarray, cache) -> None:
        emb_caches, mlp_cache = cache
        dx = self.encoder.backward(params, dh, mlp_cache)
        offset = self.n_numeric
        for emb, c in zip(self.cat_embeddings, emb_caches):
            emb.backward(params, dx[:, offset:offset + emb.dim], c)
            offset += emb.dim

    def whale_embedding(self, params: ParamSet, b_hat: np.ndarray) -> np.ndarray:
        # detached copy of the alignment bucket embedding
        return params[self.align.embedding.table][np.asarray(b_hat) - 1].copy()

    # -- full pass --------------------------------------------------------------
    def run(self, params: ParamSet, batch: Batch, ctx: ForwardContext, y=None, theta: float = 0.0,
            temperature: float = 1.0, backward: bool = False, components=LOSS_COMPONENTS):
        """Forward pass; with labels also the composite loss and optional backward.

        Returns ``(bundle, total_loss, breakdown)``; the last two are ``None``
        without labels. ``components`` restricts which loss terms contribute,
        which the gradient checks use to isolate one term at a time.
        """
        cfg = self.cfg
        n = len(batch)
        h, enc_cache = self.encode(params, batch, ctx)
        zeros = np.zeros(n)
        has_labels = y is not None
        if has_labels:
            y = np.asarray(y, dtype=np.float64)

        if self.cascade is None:
            return self._run_baseline(params, h, enc_cache, y, ctx, backward)

        casc = self.cascade.forward(params, h, ctx)
        K = cfg.n_buckets
        held = ctx.extras.get("detached")

        def hold(key, value):
            # gradient checks pin detached inputs so finite differences see the same graph
            return value if held is None else held.setdefault(key, value)

        b_hat = hold("b_hat", casc.predicted_bucket)
        v_norm = zeros.copy()
        if self.residual is not None:
            h_al, al_cache = self.align.forward(params, h, hold("marginals", casc.marginals.copy()), b_hat)
            v_norm, res_cache = self.residual.forward(params, h_al, ctx)

        v_high = np.full(n, np.nan)
        conf_logit = np.full(n, np.nan)
        if self.dual is not None:
            aug_rng = ctx.rng(TAG_AUGMENT) if ctx.train else None
            v_high, conf_logit, aug_cache = augment_forward(
                params, self.attention, self.dual, hold("h_whale", h.copy()),
                hold("whale_embed", self.whale_embedding(params, b_hat)),
                cfg.noise_std, ctx, aug_rng, self.whale_scale)

        v_final = denormalize(v_norm, self.spec, b_hat)
        route = np.where(b_hat == 1, "zero", "residual").astype(object)
        if self.dual is not None and cfg.whale_head_override:
            whale = b_hat == K
            v_final = np.where(whale, v_high, v_final)
            route[whale] = "whale"
        bundle = PredictionBundle(casc.h_shared, casc, v_norm, v_final, v_high,
                                  sigmoid(conf_logit), route.astype(str))
        if not has_labels:
            return bundle, None, None

        # -- losses --------------------------------------------------------------
        spec = self.spec
        true_b = assign_bucket(y, spec)
        use = set(components)
        br = dict.fromkeys(LOSS_COMPONENTS, 0.0)
        c_terms, dz_c = cascade_loss_terms(casc.logits, y, spec.thresholds, cfg.cascade.stage_weights,
                                           cfg.cascade.negative_weights)
        br["cascade"] = float(c_terms.sum())
        dz_d = None
        if cfg.use_distill:
            # the distillation heads read a detached trunk output
            z_d, d_caches = casc.logits, casc.caches
            if held is not None:
                z_d, d_caches = self.cascade.heads_forward(params, hold("h_distill", casc.h_shared.copy()), ctx)
            br["distill"], dz_d = distill_loss(z_d, true_b, temperature)
        dv = None
        if self.residual is not None:
            target = normalize_label(y, spec, true_b)
            if ctx.train:
                target = smooth_target(target, true_b, theta, ctx.rng(TAG_SMOOTHING))
            br["residual"], dv = residual_loss(v_norm, target, cfg.beta)
        in_h = b_hat == K
        n_h = int(in_h.sum())
        hv_sum = 0.0
        if self.dual is not None and n_h:
            per, d_vh, d_conf = high_value_terms(v_high[in_h], y[in_h], conf_logit[in_h], self.loss_cfg)
            hv_sum = float(per.sum())
            br["high_value"] = hv_sum / n_h

        w = {"cascade": cfg.alpha_cascade, "residual": cfg.alpha_residual, "distill": cfg.alpha_distill}
        main = sum(w[k] * br[k] for k in w if k in use)
        hv_term = (1.0 - cfg.gamma) * hv_sum / n if "high_value" in use else 0.0
        objective = cfg.gamma * main + hv_term
        # the head penalty belongs to the cascade term
        l2 = self.cascade.l2_penalty(params, accumulate=backward) if "cascade" in use else 0.0
        br.update(main=main, objective=objective, l2=l2, h_count=n_h, h_fraction=n_h / n)
        # additive pieces of the total, fine-grained so finite differences stay accurate
        c_part = cfg.gamma * cfg.alpha_cascade * c_terms.ravel() if "cascade" in use else np.zeros(0)
        br["terms"] = (*c_part, *(cfg.gamma * w[k] * br[k] if k in use else 0.0 for k in ("residual", "distill")),
                       hv_term, l2)
        total = objective + l2
        br["total"] = total
        for k in (*LOSS_COMPONENTS, "total"):
            if not np.isfinite(br[k]):
                raise NumericalError(f"loss component {k!r} became non-finite")
        if not backward:
            return bundle, total, br

        # -- backward --------------------------------------------------------------
        g = cfg.gamma
        if self.dual is not None and n_h and "high_value" in use:
            dv_full = np.zeros(n)
            dc_full = np.zeros(n)
            scale = (1.0 - g) / n
            dv_full[in_h] = scale * d_vh
            dc_full[in_h] = scale * d_conf
            augment_backward(params, self.attention, self.dual, dv_full, dc_full, aug_cache)
        dh = np.zeros_like(h)
        if dv is not None and "residual" in use:
            d_al = self.residual.backward(params, g * cfg.alpha_residual * dv, res_cache)
            dh += self.align.backward(params, d_al, al_cache)
        if "cascade" in use:
            d_shared = self.cascade.heads_backward(params, g * cfg.alpha_cascade * dz_c, casc.caches)
            dh += self.cascade.trunk_backward(params, d_shared, casc)
        if dz_d is not None and "distill" in use:
            # detached input: only the head parameters take this gradient
            self.cascade.heads_backward(params, g * cfg.alpha_distill * dz_d, d_caches)
        self.encode_backward(params, dh, enc_cache)
        return bundle, total, br

    def _run_baseline(self, params, h, enc_cache, y, ctx, backward):
        n = h.shape[0]
        out, head_cache = self.baseline_head.forward(params, h)
        sp, sp_cache = activation(out, "softplus")
        v = self.baseline_scale * sp[:, 0]
        route = np.full(n, "direct")
        bundle = PredictionBundle(h, None, np.zeros(n), v, np.full(n, np.nan), np.full(n, np.nan), route)
        if y is None:
            return bundle, None, None
        scaled = (v - y) / self.baseline_scale
        mse = float(np.mean(scaled * scaled))
        if not np.isfinite(mse):
            raise NumericalError("loss component 'baseline' became non-finite")
        br = dict.fromkeys(LOSS_COMPONENTS, 0.0)
        br.update(baseline=mse, main=mse, objective=mse, l2=0.0, h_count=0, h_fraction=0.0, total=mse)
        if backward:
            dv = 2.0 * scaled / (n * self.baseline_scale)
            d_out = activation_backward(self.baseline_scale * dv[:, None], sp_cache)
            dh = self.baseline_head.backward(params, d_out, head_cache)
            self.encode_backward(params, dh, enc_cache)
        return bundle, mse, br
