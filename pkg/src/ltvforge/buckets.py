"""Ordinal value buckets: fixed quantile thresholds and per-bucket normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InputError

ZERO_BOUNDARY = 1e-6
DEFAULT_TOP_QUANTILE = 0.995


@dataclass(frozen=True)
class BucketSpec:
    """Thresholds ``tau_1 < ... < tau_{K-1}`` plus each bucket's center and half-range.

    Bucket indices are 1-based: bucket 1 holds the zero-value users.
    """

    thresholds: tuple[float, ...]
    centers: tuple[float, ...]
    half_ranges: tuple[float, ...]
    top_cap: float

    @property
    def n_buckets(self) -> int:
        return len(self.thresholds) + 1

    def center(self, bucket) -> np.ndarray:
        return np.asarray(self.centers)[np.asarray(bucket) - 1]

    def half_range(self, bucket) -> np.ndarray:
        return np.asarray(self.half_ranges)[np.asarray(bucket) - 1]

    def to_dict(self) -> dict:
        return {"thresholds": list(self.thresholds), "centers": list(self.centers),
                "half_ranges": list(self.half_ranges), "top_cap": self.top_cap}

    @classmethod
    def from_dict(cls, d: dict) -> BucketSpec:
        return cls(tuple(map(float, d["thresholds"])), tuple(map(float, d["centers"])),
                   tuple(map(float, d["half_ranges"])), float(d["top_cap"]))


def _quantile(values: np.ndarray, q) -> np.ndarray:
    # order-statistic interpolation at position (n + 1) * q
    return np.quantile(values, q, method="weibull")


def nonzero_quantile_levels(n_buckets: int) -> np.ndarray:
    """Quantile levels for the non-zero thresholds: half of the non-zero mass goes
    to bucket 2 and the rest is split evenly (K=4 gives the 50th and 75th)."""
    m = n_buckets - 2
    if m <= 0:
        return np.zeros(0)
    return 0.5 + 0.5 * np.arange(m) / m


def fit_bucket_spec(train_labels, n_buckets: int = 4,
                    top_quantile: float = DEFAULT_TOP_QUANTILE) -> BucketSpec:
    y = np.asarray(train_labels, dtype=np.float64).reshape(-1)
    if n_buckets < 2:
        raise InputError("need at least 2 buckets")
    if np.any(y < -ZERO_BOUNDARY):
        raise InputError("labels must be non-negative")
    nonzero = y[y > ZERO_BOUNDARY]
    if nonzero.size == 0:
        raise InputError("all labels are zero; cannot place value thresholds")
    if np.unique(nonzero).size < n_buckets - 1:
        raise InputError(f"need at least {n_buckets - 1} distinct non-zero labels for {n_buckets} buckets")

    upper = [float(v) for v in _quantile(nonzero, nonzero_quantile_levels(n_buckets))]
    thresholds = [ZERO_BOUNDARY] + upper
    if np.any(np.diff(thresholds) <= 0):
        raise InputError("quantile thresholds are not strictly ascending; labels too concentrated")
    top_cap = float(_quantile(nonzero, top_quantile))

    lows = [0.0] + thresholds
    highs = [0.0] + thresholds[1:] + [top_cap]
    centers, half_ranges = [0.0], [1.0]
    for lo, hi in zip(lows[1:], highs[1:]):
        width = hi - lo
        if width <= 0:
            # degenerate bucket: keep the center at the lower edge
            centers.append(lo)
            half_ranges.append(1.0)
        else:
            centers.append(0.5 * (lo + hi))
            half_ranges.append(0.5 * width)
    return BucketSpec(tuple(thresholds), tuple(centers), tuple(half_ranges), top_cap)


def assign_bucket(y, spec: BucketSpec) -> np.ndarray:
    """Smallest ``k`` with ``y <= tau_k``, else ``K``; a value on a boundary
    belongs to the lower bucket."""
    y = np.asarray(y, dtype=np.float64)
    return np.searchsorted(np.asarray(spec.thresholds), y, side="left") + 1


def normalize_label(y, spec: BucketSpec, bucket) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return np.clip((y - spec.center(bucket)) / spec.half_range(bucket), -1.0, 1.0)


class LabelBucketizer(TransformerMixin, BaseEstimator):
    """Fit bucket thresholds on labels; ``transform`` maps labels to bucket indices.

    Parameters
    ----------
    n_buckets : int, default=4
        Number of ordinal buckets, including the zero bucket.
    top_quantile : float, default=0.995
        Quantile of the non-zero labels used as the upper edge of the top bucket.
    """

    def __init__(self, n_buckets: int = 4, top_quantile: float = DEFAULT_TOP_QUANTILE):
        self.n_buckets = n_buckets
        self.top_quantile = top_quantile

    def fit(self, y, _=None):
        self.spec_ = fit_bucket_spec(y, self.n_buckets, self.top_quantile)
        return self

    def transform(self, y):
        check_is_fitted(self, "spec_")
        return assign_bucket(np.asarray(y, dtype=np.float64).reshape(-1), self.spec_)

    def normalize(self, y):
        check_is_fitted(self, "spec_")
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        return normalize_label(y, self.spec_, assign_bucket(y, self.spec_))

    def inverse_transform(self, v_norm, buckets):
        from .alignment import denormalize

        check_is_fitted(self, "spec_")
        return denormalize(v_norm, self.spec_, buckets)
