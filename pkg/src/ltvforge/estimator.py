"""scikit-learn style wrapper around training and inference."""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .cascade import CascadeConfig
from .data import Dataset
from .exceptions import InputError
from .model import ModelConfig, PredictionBundle
from .training import FittedModel, predict, train


class CascadeOrdinalRegressor(RegressorMixin, BaseEstimator):
    """Cascaded ordinal LTV regressor.

    ``X`` is a 2-D float array; the columns listed in ``categorical_features``
    must hold non-negative integer codes and are embedded, the rest are
    standardized numerics. A :class:`~ltvforge.data.Dataset` may be passed
    instead of an array, in which case its own schema is used.

    Hyperparameters mirror :class:`~ltvforge.model.ModelConfig`; ``random_state``
    is its ``seed`` and ``cascade`` takes a :class:`CascadeConfig` (``None`` for
    the defaults).
    """

    def __init__(self, n_buckets=4, encoder_hidden=(64, 48, 32), embedding_cap=50, cascade=None,
                 bucket_embedding_dim=8, align_dim=32, residual_dims=(32, 16), attention_hidden=32,
                 dual_head_hidden=(48, 32), noise_std=0.1, gamma=0.8, alpha_cascade=3.0,
                 alpha_residual=3.0, alpha_distill=0.2, beta=0.5, beta_focal=2.0, lambda_reg=0.5,
                 lr=5e-4, lr_min=0.0, weight_decay=1e-4, batch_size=1024, epochs=10,
                 temperature_start=2.0, temperature_end=1.0, theta_start=1.0, theta_end=0.1,
                 top_quantile=0.995, use_cascade=True, use_distill=True, use_residual=True,
                 use_augment=True, whale_head_override=True, categorical_features=None,
                 cardinalities=None, random_state=0):
        self.n_buckets = n_buckets
        self.encoder_hidden = encoder_hidden
        self.embedding_cap = embedding_cap
        self.cascade = cascade
        self.bucket_embedding_dim = bucket_embedding_dim
        self.align_dim = align_dim
        self.residual_dims = residual_dims
        self.attention_hidden = attention_hidden
        self.dual_head_hidden = dual_head_hidden
        self.noise_std = noise_std
        self.gamma = gamma
        self.alpha_cascade = alpha_cascade
        self.alpha_residual = alpha_residual
        self.alpha_distill = alpha_distill
        self.beta = beta
        self.beta_focal = beta_focal
        self.lambda_reg = lambda_reg
        self.lr = lr
        self.lr_min = lr_min
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.temperature_start = temperature_start
        self.temperature_end = temperature_end
        self.theta_start = theta_start
        self.theta_end = theta_end
        self.top_quantile = top_quantile
        self.use_cascade = use_cascade
        self.use_distill = use_distill
        self.use_residual = use_residual
        self.use_augment = use_augment
        self.whale_head_override = whale_head_override
        self.categorical_features = categorical_features
        self.cardinalities = cardinalities
        self.random_state = random_state

    def model_config(self) -> ModelConfig:
        params = self.get_params(deep=False)
        kwargs = {f.name: params[f.name] for f in fields(ModelConfig) if f.name in params}
        kwargs["seed"] = int(self.random_state)
        kwargs["cascade"] = self.cascade if self.cascade is not None else CascadeConfig()
        for name in ("encoder_hidden", "residual_dims", "dual_head_hidden"):
            kwargs[name] = tuple(kwargs[name])
        cfg = ModelConfig(**kwargs)
        cfg.validate()
        return cfg

    # -- array <-> Dataset -------------------------------------------------------------
    def _to_dataset(self, X, y=None, fitting: bool = False) -> Dataset:
        if isinstance(X, Dataset):
            if fitting:
                self.schema_ = ("dataset", list(X.numeric_names), list(X.categorical_names))
            return X
        if not fitting and self.schema_[0] == "dataset":
            raise InputError("this model was fit on a Dataset; pass a Dataset with the same columns")
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        if fitting:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise InputError(f"X has {X.shape[1]} columns, the model was fit on {self.n_features_in_}")
        cat_cols = sorted(set(self.categorical_features or ()))
        if any(not 0 <= c < X.shape[1] for c in cat_cols):
            raise InputError(f"categorical_features {cat_cols} out of range for {X.shape[1]} columns")
        num_cols = [j for j in range(X.shape[1]) if j not in cat_cols]
        codes = X[:, cat_cols]
        if codes.size and (np.any(codes < 0) or np.any(codes != np.round(codes))):
            raise InputError("categorical columns must hold non-negative integer codes")
        codes = codes.astype(np.int64)
        if fitting:
            if self.cardinalities is not None:
                cards = [int(c) for c in self.cardinalities]
                if len(cards) != len(cat_cols):
                    raise InputError("cardinalities must give one entry per categorical feature")
            else:
                cards = [int(codes[:, j].max()) + 1 for j in range(len(cat_cols))]
            self.cardinalities_ = cards
            self.schema_ = ("array", cat_cols)
        labels = np.zeros(X.shape[0]) if y is None else column_or_1d(y).astype(np.float64)
        return Dataset(X[:, num_cols], codes, labels, [f"num_{j}" for j in num_cols],
                       [f"cat_{j}" for j in cat_cols], list(self.cardinalities_))

    def fit(self, X, y=None, X_val=None, y_val=None):
        """Train on ``(X, y)``; the optional validation pair is scored each epoch."""
        cfg = self.model_config()
        if not isinstance(X, Dataset) and y is None:
            raise InputError("y is required when X is an array")
        train_ds = self._to_dataset(X, y, fitting=True)
        if isinstance(X, Dataset):
            val_ds = X_val
        else:
            val_ds = self._to_dataset(X_val, y_val) if X_val is not None else None
        train_ds.validate()
        self.model_, self.history_ = train(train_ds, val_ds, cfg)
        self.bucket_spec_ = self.model_.spec
        return self

    @property
    def fitted_model(self) -> FittedModel:
        check_is_fitted(self, "model_")
        return self.model_

    def predict_bundle(self, X) -> PredictionBundle:
        check_is_fitted(self, "model_")
        return predict(self.model_, self._to_dataset(X))

    def predict(self, X) -> np.ndarray:
        """Final routed LTV estimate per row (non-negative)."""
        return self.predict_bundle(X).v_final

    def predict_bucket(self, X) -> np.ndarray | None:
        return self.predict_bundle(X).predicted_bucket
