"""Training loop, inference routing and the fitted-model container."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .alignment import theta_schedule
from .buckets import BucketSpec, fit_bucket_spec
from .cascade import temperature_schedule
from .data import Dataset
from .exceptions import ArtifactMismatchError, NumericalError
from .model import Batch, CascadeOrdinalNet, ModelConfig, PredictionBundle
from .nn import ForwardContext, ParamSet, ScheduleState, adamw_step, cosine_lr

logger = logging.getLogger(__name__)

HISTORY_KEYS = ("cascade", "distill", "residual", "high_value", "baseline", "l2", "total")


@dataclass
class Preprocessor:
    """Column standardization for numeric features, fitted on the training split."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, numeric: np.ndarray) -> Preprocessor:
        if numeric.shape[1] == 0:
            return cls(np.zeros(0), np.ones(0))
        mean = numeric.mean(axis=0)
        scale = numeric.std(axis=0)
        return cls(mean, np.where(scale > 0, scale, 1.0))

    def transform(self, numeric: np.ndarray) -> np.ndarray:
        return (np.asarray(numeric, dtype=np.float64) - self.mean) / self.scale


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def column(self, key: str) -> list[float]:
        return [e[key] for e in self.epochs]


@dataclass
class FittedModel:
    """Everything needed to predict: graph, parameters, bucket spec and preprocessing."""

    net: CascadeOrdinalNet
    params: ParamSet
    spec: BucketSpec | None
    preprocessor: Preprocessor
    numeric_names: list[str]
    categorical_names: list[str]
    tau_low: float

    @property
    def cfg(self) -> ModelConfig:
        return self.net.cfg

    def batch(self, ds: Dataset) -> Batch:
        if ds.numeric_names != self.numeric_names or ds.categorical_names != self.categorical_names:
            raise ArtifactMismatchError(
                f"dataset columns {ds.numeric_names + ds.categorical_names} do not match the model's "
                f"{self.numeric_names + self.categorical_names}")
        return Batch(self.preprocessor.transform(ds.numeric), ds.categorical)


def predict(model: FittedModel, ds: Dataset, chunk: int = 65536) -> PredictionBundle:
    """Inference: dropout off, running batch-norm statistics, no augmentation noise.

    Rows are processed in fixed-size chunks; outputs are row-wise so chunking
    never changes a value.
    """
    batch = model.batch(ds)
    ctx = ForwardContext(train=False)
    parts = []
    for start in range(0, max(len(batch), 1), chunk):
        rows = slice(start, start + chunk)
        bundle, _, _ = model.net.run(model.params, batch.take(rows), ctx)
        parts.append(bundle)
    return _concat_bundles(parts)


def _concat_bundles(parts: list[PredictionBundle]) -> PredictionBundle:
    if len(parts) == 1:
        return parts[0]
    from .cascade import CascadeOutput

    cat = lambda attr: np.concatenate([getattr(p, attr) for p in parts])  # noqa: E731
    casc = None
    if parts[0].cascade is not None:
        casc = CascadeOutput(*(np.concatenate([getattr(p.cascade, a) for p in parts])
                               for a in ("logits", "marginals", "bucket_dist", "predicted_bucket", "h_shared")))
    return PredictionBundle(cat("h_shared"), casc, cat("v_norm"), cat("v_final"), cat("v_high"),
                            cat("p_conf"), cat("route"))


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    n_batches = max(1, math.ceil(n / batch_size))
    return np.array_split(perm, n_batches)


def build_model(train_ds: Dataset, cfg: ModelConfig) -> FittedModel:
    """Fit the bucket spec and preprocessing on the training split and initialize parameters."""
    cfg.validate()
    y = train_ds.y
    spec = fit_bucket_spec(y, cfg.n_buckets, cfg.top_quantile)
    positive = y[y > 0]
    tau_low = float(np.median(positive)) if positive.size else 1.0
    baseline_scale = float(max(y.mean(), 1e-6))
    net = CascadeOrdinalNet(cfg, train_ds.numeric.shape[1], train_ds.cardinalities, spec, baseline_scale)
    params = net.init_params()
    return FittedModel(net, params, spec, Preprocessor.fit(train_ds.numeric),
                       list(train_ds.numeric_names), list(train_ds.categorical_names), tau_low)


def train(train_ds: Dataset, val_ds: Dataset | None, cfg: ModelConfig,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[FittedModel, TrainHistory]:
    """Seeded mini-batch AdamW training with cosine learning rate.

    The label-smoothing range and the distillation temperature advance every
    step. ``on_epoch`` receives each history row as soon as it is complete.
    A non-finite loss raises :class:`NumericalError` naming the component.
    """
    model = build_model(train_ds, cfg)
    net, params = model.net, model.params
    batch = model.batch(train_ds)
    y = train_ds.y
    n = len(train_ds)
    if n < 2:
        raise NumericalError("need at least two training rows")
    val_batch = model.batch(val_ds) if val_ds is not None and len(val_ds) >= 2 else None

    per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = max(1, cfg.epochs * per_epoch)
    history = TrainHistory()
    step = 0
    for epoch in range(cfg.epochs):
        sums = dict.fromkeys(HISTORY_KEYS, 0.0)
        order = _batches(n, cfg.batch_size, np.random.default_rng([cfg.seed, 7, epoch]))
        lr = theta = temperature = float("nan")
        for rows in order:
            lr = cosine_lr(ScheduleState(step, total_steps, cfg.lr, cfg.lr_min))
            theta = theta_schedule(step, total_steps, cfg.theta_start, cfg.theta_end)
            temperature = temperature_schedule(step, total_steps, cfg.temperature_start, cfg.temperature_end)
            ctx = ForwardContext(train=True, seed=cfg.seed, step=step)
            try:
                _, _, br = net.run(params, batch.take(rows), ctx, y[rows], theta, temperature, backward=True)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch + 1}, step {step}: {exc}") from exc
            adamw_step(params, lr, cfg.weight_decay)
            for key in HISTORY_KEYS:
                sums[key] += br.get(key, 0.0) * len(rows)
            step += 1
        row = {"epoch": epoch + 1, **{k: sums[k] / n for k in HISTORY_KEYS},
               "lr": lr, "theta": theta, "temperature": temperature}
        row["val_total"] = _validation_loss(net, params, val_batch, val_ds) if val_batch is not None else None
        history.epochs.append(row)
        logger.info("epoch %d total=%.6g val=%s", epoch + 1, row["total"], row["val_total"])
        if on_epoch is not None:
            on_epoch(row)
    return model, history


def _validation_loss(net: CascadeOrdinalNet, params: ParamSet, batch: Batch, ds: Dataset) -> float:
    _, total, _ = net.run(params, batch, ForwardContext(train=False), ds.y)
    return float(total)
