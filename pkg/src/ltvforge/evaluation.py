"""Scoring a fitted model on a labelled dataset."""

from __future__ import annotations

import numpy as np

from .buckets import assign_bucket
from .data import Dataset
from .metrics import MetricsReport, StrataSpec, full_report
from .model import PredictionBundle
from .training import FittedModel, predict

DEFAULT_RECALL_K = 500


def bucket_predictions(model: FittedModel, bundle: PredictionBundle) -> np.ndarray:
    """Cascade decision when there is one; otherwise the bucket of the predicted value."""
    if bundle.predicted_bucket is not None:
        return bundle.predicted_bucket
    return assign_bucket(bundle.v_final, model.spec)


def evaluate(model: FittedModel, ds: Dataset, recall_k: int = DEFAULT_RECALL_K,
             bundle: PredictionBundle | None = None) -> MetricsReport:
    """Full metric report. ``recall_k`` is capped at the number of rows."""
    bundle = bundle if bundle is not None else predict(model, ds)
    true_b = assign_bucket(ds.y, model.spec)
    dist = bundle.cascade.bucket_dist if bundle.cascade is not None else None
    return full_report(bundle.v_final, ds.y, StrataSpec(model.tau_low), k=min(recall_k, len(ds)),
                       pred_buckets=bucket_predictions(model, bundle), true_buckets=true_b,
                       n_buckets=model.cfg.n_buckets, nonzero_prob=bundle.nonzero_prob,
                       bucket_dist=dist)
