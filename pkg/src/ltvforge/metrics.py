"""Ranking, regression and stratification metrics for LTV predictions.

Sorting-based metrics use stable ordering, so tied predictions keep their
input order and every result is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .exceptions import InputError

ZERO_VALUE_THRESHOLD = 0.1


def _pair(y_pred, y_true) -> tuple[np.ndarray, np.ndarray]:
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    if y_pred.shape != y_true.shape:
        raise InputError(f"length mismatch: {y_pred.size} predictions vs {y_true.size} labels")
    if y_pred.size == 0:
        raise InputError("metrics need at least one sample")
    return y_pred, y_true


def lorenz_curve(y_pred, y_true) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative share of true value captured when users are taken by descending prediction."""
    y_pred, y_true = _pair(y_pred, y_true)
    total = y_true.sum()
    if total <= 0:
        raise InputError("gini is undefined when the true values sum to zero")
    order = np.argsort(-y_pred, kind="stable")
    captured = np.concatenate([[0.0], np.cumsum(y_true[order]) / total])
    users = np.arange(y_true.size + 1) / y_true.size
    return users, captured


def gini(y_pred, y_true) -> float:
    """``2 * area under the capture curve - 1`` (trapezoidal)."""
    users, captured = lorenz_curve(y_pred, y_true)
    area = float(np.sum(np.diff(users) * (captured[1:] + captured[:-1]) / 2.0))
    return 2.0 * area - 1.0


def normalized_gini(y_pred, y_true) -> float:
    """Gini divided by the gini of a perfect ranking."""
    best = gini(y_true, y_true)
    if best == 0:
        raise InputError("normalized gini is undefined when the ideal gini is zero")
    return gini(y_pred, y_true) / best


def spearman(y_pred, y_true) -> float:
    """Pearson correlation of average ranks."""
    y_pred, y_true = _pair(y_pred, y_true)
    if y_pred.size < 2:
        raise InputError("spearman needs at least two samples")
    a = rankdata(y_pred)
    b = rankdata(y_true)
    a -= a.mean()
    b -= b.mean()
    denom = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if denom == 0:
        raise InputError("spearman is undefined when one side is constant")
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def regression_errors(y_pred, y_true) -> dict[str, float | None]:
    """NMAE and NRMSE are normalized by the mean label; MAPE skips zero labels;
    AMBE is the absolute gap between mean prediction and mean label."""
    y_pred, y_true = _pair(y_pred, y_true)
    mean_true = float(y_true.mean())
    if mean_true <= 0:
        raise InputError("normalized errors need a positive mean label")
    diff = y_pred - y_true
    pos = y_true > 0
    mape = float(np.mean(np.abs(diff[pos]) / y_true[pos])) if pos.any() else None
    return {
        "nmae": float(np.mean(np.abs(diff))) / mean_true,
        "mape": mape,
        "ambe": abs(float(y_pred.mean()) - mean_true),
        "nrmse": math.sqrt(float(np.mean(diff * diff))) / mean_true,
    }


def signed_bias(y_pred, y_true) -> float:
    y_pred, y_true = _pair(y_pred, y_true)
    return float(y_pred.mean()) - float(y_true.mean())


@dataclass(frozen=True)
class StrataSpec:
    """Zero / low / high value strata split at ``tau_low`` (median of positive training labels)."""

    tau_low: float
    zero_threshold: float = ZERO_VALUE_THRESHOLD

    def __post_init__(self) -> None:
        if not self.tau_low > 0:
            raise InputError("tau_low must be positive")

    @classmethod
    def from_labels(cls, y_train) -> StrataSpec:
        y = np.asarray(y_train, dtype=np.float64)
        pos = y[y > 0]
        if pos.size == 0:
            raise InputError("no positive labels to set the low/high split")
        return cls(float(np.median(pos)))


def predicted_nonzero(y_pred, nonzero_prob=None, zero_threshold: float = ZERO_VALUE_THRESHOLD) -> np.ndarray:
    """Direct probability above 0.5 when available, otherwise value above the 0.1 rule."""
    if nonzero_prob is not None:
        return np.asarray(nonzero_prob, dtype=np.float64) > 0.5
    return np.asarray(y_pred, dtype=np.float64) > zero_threshold


def stratum(values, tau_low: float, nonzero: np.ndarray | None = None) -> np.ndarray:
    """0 = zero, 1 = low (``<= tau_low``), 2 = high."""
    values = np.asarray(values, dtype=np.float64)
    nz = values > 0 if nonzero is None else np.asarray(nonzero, dtype=bool)
    return np.where(~nz, 0, np.where(values <= tau_low, 1, 2))


def f1_score(pred: np.ndarray, true: np.ndarray) -> float:
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def classification_metrics(y_pred, y_true, strata: StrataSpec, pred_buckets=None, true_buckets=None,
                           nonzero_prob=None) -> dict[str, float | None]:
    y_pred, y_true = _pair(y_pred, y_true)
    nz_pred = predicted_nonzero(y_pred, nonzero_prob, strata.zero_threshold)
    nz_true = y_true > 0
    out = {
        "f1_zero": f1_score(nz_pred, nz_true),
        "sva": float(np.mean(stratum(y_pred, strata.tau_low, nz_pred) == stratum(y_true, strata.tau_low))),
        "bucket_acc": None,
    }
    if pred_buckets is not None and true_buckets is not None:
        out["bucket_acc"] = float(np.mean(np.asarray(pred_buckets) == np.asarray(true_buckets)))
    return out


def recall_at_k(y_pred, is_whale, k: int) -> float:
    """Share of true whales among the top-``k`` users by prediction."""
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    whale = np.asarray(is_whale, dtype=bool).reshape(-1)
    if not 1 <= k <= y_pred.size:
        raise InputError(f"k={k} outside [1, {y_pred.size}]")
    n_whales = int(whale.sum())
    if n_whales == 0:
        raise InputError("recall@k needs at least one true whale")
    top = np.argsort(-y_pred, kind="stable")[:k]
    return float(whale[top].sum()) / n_whales


def bucket_chi2(q_pred, q_true) -> float:
    """Chi-squared distance ``sum (q_pred - q_true)^2 / q_true`` over buckets with mass."""
    q_pred = np.asarray(q_pred, dtype=np.float64)
    q_true = np.asarray(q_true, dtype=np.float64)
    mask = q_true > 0
    return float(np.sum((q_pred[mask] - q_true[mask]) ** 2 / q_true[mask]))


@dataclass
class MetricsReport:
    n: int
    gini: float | None = None
    gini_normalized: float | None = None
    gini_nonzero: float | None = None
    spearman: float | None = None
    spearman_nonzero: float | None = None
    nmae: float | None = None
    mape: float | None = None
    ambe: float | None = None
    nrmse: float | None = None
    f1_zero: float | None = None
    bucket_acc: float | None = None
    sva: float | None = None
    recall_at_k: float | None = None
    k: int | None = None
    ambe_top: float | None = None
    nrmse_top: float | None = None
    f1_top: float | None = None
    bucket_chi2: float | None = None
    undefined: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _mark_undefined(report: MetricsReport, name: str, reason: str) -> None:
    report.undefined = report.undefined or {}
    report.undefined[name] = reason


def _attempt(report: MetricsReport, name: str, fn):
    try:
        return fn()
    except InputError as exc:
        _mark_undefined(report, name, str(exc))
        return None


def full_report(y_pred, y_true, strata: StrataSpec, k: int | None = None, pred_buckets=None,
                true_buckets=None, n_buckets: int | None = None, nonzero_prob=None,
                bucket_dist=None) -> MetricsReport:
    """Every metric for one prediction set; failures become ``None`` plus a reason
    under ``undefined`` instead of aborting the report.

    The ``*_nonzero`` variants use exactly the rows with ``y_true > 0``. The
    ``*_top`` fields restrict to rows whose true bucket is the highest one.
    """
    y_pred, y_true = _pair(y_pred, y_true)
    r = MetricsReport(n=int(y_true.size))
    pos = y_true > 0
    r.gini = _attempt(r, "gini", lambda: gini(y_pred, y_true))
    r.gini_normalized = _attempt(r, "gini_normalized", lambda: normalized_gini(y_pred, y_true))
    r.gini_nonzero = _attempt(r, "gini_nonzero", lambda: gini(y_pred[pos], y_true[pos]))
    r.spearman = _attempt(r, "spearman", lambda: spearman(y_pred, y_true))
    r.spearman_nonzero = _attempt(r, "spearman_nonzero", lambda: spearman(y_pred[pos], y_true[pos]))
    errs = _attempt(r, "regression_errors", lambda: regression_errors(y_pred, y_true))
    if errs:
        r.nmae, r.mape, r.ambe, r.nrmse = errs["nmae"], errs["mape"], errs["ambe"], errs["nrmse"]
        if r.mape is None:
            _mark_undefined(r, "mape", "no positive labels")
    cls = classification_metrics(y_pred, y_true, strata, pred_buckets, true_buckets, nonzero_prob)
    r.f1_zero, r.sva, r.bucket_acc = cls["f1_zero"], cls["sva"], cls["bucket_acc"]
    if true_buckets is not None and n_buckets is not None:
        true_buckets = np.asarray(true_buckets)
        top = true_buckets == n_buckets
        if k is not None:
            r.k = int(k)
            r.recall_at_k = _attempt(r, "recall_at_k", lambda: recall_at_k(y_pred, top, min(k, y_pred.size)))
        if top.any():
            top_errs = _attempt(r, "top_bucket", lambda: regression_errors(y_pred[top], y_true[top]))
            if top_errs:
                r.ambe_top, r.nrmse_top = top_errs["ambe"], top_errs["nrmse"]
        if pred_buckets is not None:
            r.f1_top = f1_score(np.asarray(pred_buckets) == n_buckets, top)
        if bucket_dist is not None:
            q_true = np.bincount(true_buckets - 1, minlength=n_buckets) / true_buckets.size
            r.bucket_chi2 = bucket_chi2(np.asarray(bucket_dist).mean(axis=0), q_true)
    return r
