"""Synthetic zero-inflated long-tail data, CSV I/O and chronological splits."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .exceptions import ConfigurationError, InputError, SchemaError

LABEL_COLUMN = "label"
NUMERIC_PREFIX = "num_"
CATEGORICAL_PREFIX = "cat_"


@dataclass
class GeneratorConfig:
    """Parameters of the synthetic LTV generator.

    A latent score ``u ~ N(0, 1)`` drives the zero indicator, the log-value and
    every feature. ``zero_slope * signal_corr`` is the logistic slope of the
    zero indicator on ``u``, so ``signal_corr = 0`` makes labels independent of
    the features.
    """

    n_samples: int = 100_000
    zero_ratio: float = 0.336
    lognormal_mu: float = 2.0
    lognormal_sigma: float = 1.0
    tail_prob: float = 0.02
    pareto_alpha: float = 1.5
    signal_corr: float = 0.7
    n_numeric: int = 8
    n_categorical: int = 3
    cat_cardinality: int = 10
    noise_std: float = 0.5
    zero_slope: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples <= 0:
            raise InputError("n_samples must be positive")
        if not 0.0 < self.zero_ratio < 1.0:
            raise ConfigurationError("zero_ratio must lie in (0, 1)")
        if not 0.0 <= self.tail_prob < 1.0:
            raise ConfigurationError("tail_prob must lie in [0, 1)")
        if self.pareto_alpha <= 1.0:
            raise ConfigurationError("pareto_alpha must exceed 1 so the tail mean exists")
        if not 0.0 <= self.signal_corr <= 1.0:
            raise ConfigurationError("signal_corr must lie in [0, 1]")
        if self.lognormal_sigma < 0 or self.noise_std < 0:
            raise ConfigurationError("standard deviations must be non-negative")
        if self.n_numeric < 0 or self.n_categorical < 0 or self.n_numeric + self.n_categorical == 0:
            raise ConfigurationError("need at least one feature column")
        if self.cat_cardinality < 1:
            raise ConfigurationError("cat_cardinality must be at least 1")


def _as_table(values, dtype, n_rows: int) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    # 2-D input keeps its column count even with zero rows
    return arr if arr.ndim == 2 else arr.reshape(n_rows, -1)


@dataclass
class Dataset:
    """Feature table plus non-negative labels. Row order is chronological order."""

    numeric: np.ndarray
    categorical: np.ndarray
    y: np.ndarray
    numeric_names: list[str] = field(default_factory=list)
    categorical_names: list[str] = field(default_factory=list)
    cardinalities: list[int] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.numeric = _as_table(self.numeric, np.float64, len(self.y))
        self.categorical = _as_table(self.categorical, np.int64, len(self.y))
        self.y = np.asarray(self.y, dtype=np.float64)
        if not self.columns:
            self.columns = list(self.numeric_names) + list(self.categorical_names)
        self.validate()

    def validate(self) -> None:
        if self.numeric.shape[1] != len(self.numeric_names):
            raise SchemaError("numeric column count does not match names")
        if self.categorical.shape[1] != len(self.categorical_names):
            raise SchemaError("categorical column count does not match names")
        if len(self.cardinalities) != len(self.categorical_names):
            raise SchemaError("one cardinality per categorical column is required")
        if np.any(~np.isfinite(self.y)) or np.any(~np.isfinite(self.numeric)):
            raise InputError("missing or non-finite values are not supported")
        if np.any(self.y < 0):
            raise InputError("labels must be non-negative")
        if self.categorical.size:
            if self.categorical.min() < 0:
                raise InputError("categorical codes must be non-negative")
            over = self.categorical.max(axis=0) >= np.asarray(self.cardinalities)
            if np.any(over):
                raise InputError("categorical code exceeds the declared cardinality")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, rows) -> Dataset:
        return Dataset(self.numeric[rows], self.categorical[rows], self.y[rows],
                       list(self.numeric_names), list(self.categorical_names),
                       list(self.cardinalities), list(self.columns))

    def equals(self, other: Dataset) -> bool:
        return (self.columns == other.columns
                and self.numeric_names == other.numeric_names
                and self.categorical_names == other.categorical_names
                and np.array_equal(self.numeric, other.numeric)
                and np.array_equal(self.categorical, other.categorical)
                and np.array_equal(self.y, other.y))


def _zero_intercept(target: float, slope: float) -> float:
    """Intercept ``a`` with ``E[sigmoid(a - slope * u)] = target`` for ``u ~ N(0, 1)``."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    weights = weights / weights.sum()

    def gap(a: float) -> float:
        return float(np.sum(weights / (1.0 + np.exp(-(a - slope * nodes))))) - target

    return brentq(gap, -50.0, 50.0, xtol=1e-14)


def generate(cfg: GeneratorConfig) -> Dataset:
    """Draw a zero-inflated lognormal dataset with an optional Pareto whale segment."""
    cfg.validate()
    n = cfg.n_samples
    rng = np.random.default_rng(cfg.seed)
    u = rng.standard_normal(n)

    slope = cfg.zero_slope * cfg.signal_corr
    intercept = _zero_intercept(cfg.zero_ratio, slope)
    p_zero = 1.0 / (1.0 + np.exp(-(intercept - slope * u)))
    is_zero = rng.random(n) < p_zero

    rho = cfg.signal_corr
    log_value = cfg.lognormal_mu + cfg.lognormal_sigma * (
        rho * u + math.sqrt(1.0 - rho * rho) * rng.standard_normal(n))
    value = np.exp(log_value)
    whale = rng.random(n) < cfg.tail_prob
    # classical Pareto with x_m = 1
    factor = 1.0 + rng.pareto(cfg.pareto_alpha, n)
    value = np.where(whale, value * factor, value)
    y = np.where(is_zero, 0.0, value)

    loadings = np.linspace(1.0, 0.2, cfg.n_numeric) if cfg.n_numeric else np.zeros(0)
    numeric = u[:, None] * loadings + cfg.noise_std * rng.standard_normal((n, cfg.n_numeric))

    noisy = u[:, None] + cfg.noise_std * rng.standard_normal((n, cfg.n_categorical))
    edges = np.linspace(-3.0, 3.0, cfg.cat_cardinality + 1)[1:-1]
    categorical = np.searchsorted(edges, noisy, side="right").astype(np.int64)

    numeric_names = [f"{NUMERIC_PREFIX}{j}" for j in range(cfg.n_numeric)]
    categorical_names = [f"{CATEGORICAL_PREFIX}{j}" for j in range(cfg.n_categorical)]
    return Dataset(numeric, categorical, y, numeric_names, categorical_names,
                   [cfg.cat_cardinality] * cfg.n_categorical)


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` with 17 significant digits so that loading round-trips exactly."""
    num_pos = {name: j for j, name in enumerate(ds.numeric_names)}
    cat_pos = {name: j for j, name in enumerate(ds.categorical_names)}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(ds.columns + [LABEL_COLUMN]) + "\n")
        for i in range(len(ds)):
            cells = []
            for name in ds.columns:
                if name in num_pos:
                    cells.append(format(ds.numeric[i, num_pos[name]], ".17g"))
                else:
                    cells.append(str(int(ds.categorical[i, cat_pos[name]])))
            cells.append(format(ds.y[i], ".17g"))
            fh.write(",".join(cells) + "\n")


def load_csv(path: str | Path, cardinalities: dict[str, int] | None = None) -> Dataset:
    """Read a dataset; column kinds come from the ``num_`` / ``cat_`` header prefixes.

    Cardinalities default to ``max code + 1`` per categorical column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        rows = [row for row in reader if row]
    if LABEL_COLUMN not in header:
        raise SchemaError(f"{path}: no {LABEL_COLUMN!r} column")
    columns = [h for h in header if h != LABEL_COLUMN]
    for h in columns:
        if not (h.startswith(NUMERIC_PREFIX) or h.startswith(CATEGORICAL_PREFIX)):
            raise SchemaError(f"{path}: column {h!r} has an unknown prefix")
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate column names")

    numeric_names = [h for h in columns if h.startswith(NUMERIC_PREFIX)]
    categorical_names = [h for h in columns if h.startswith(CATEGORICAL_PREFIX)]
    idx = {h: j for j, h in enumerate(header)}
    n = len(rows)
    numeric = np.empty((n, len(numeric_names)))
    categorical = np.empty((n, len(categorical_names)), dtype=np.int64)
    y = np.empty(n)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise InputError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        try:
            for j, name in enumerate(numeric_names):
                numeric[i, j] = float(row[idx[name]])
            y[i] = float(row[idx[LABEL_COLUMN]])
        except ValueError as exc:
            raise InputError(f"{path}: row {i + 2}: {exc}") from None
        for j, name in enumerate(categorical_names):
            cell = row[idx[name]].strip()
            try:
                categorical[i, j] = int(cell)
            except ValueError:
                raise InputError(f"{path}: row {i + 2}: categorical {name}={cell!r} is not an integer") from None
    if np.any(y < 0):
        raise InputError(f"{path}: negative label")
    if cardinalities is None:
        cards = [int(categorical[:, j].max()) + 1 if n else 1 for j in range(len(categorical_names))]
    else:
        cards = [int(cardinalities[name]) for name in categorical_names]
    return Dataset(numeric, categorical, y, numeric_names, categorical_names, cards, columns)


def chronological_split(ds: Dataset, test_frac: float = 0.4,
                        val_frac: float = 0.1) -> tuple[Dataset, Dataset, Dataset]:
    """Contiguous ``(train, val, test)`` blocks; test and val sizes are floored."""
    if not 0.0 < test_frac < 1.0 or not 0.0 <= val_frac < 1.0 or test_frac + val_frac >= 1.0:
        raise InputError("need 0 < test_frac, 0 <= val_frac and test_frac + val_frac < 1")
    n = len(ds)
    n_test = int(math.floor(n * test_frac))
    n_val = int(math.floor(n * val_frac))
    n_train = n - n_test - n_val
    if n_test == 0 or n_train == 0 or (val_frac > 0 and n_val == 0):
        raise InputError(f"split of {n} rows leaves an empty partition")
    return (ds.subset(slice(0, n_train)), ds.subset(slice(n_train, n_train + n_val)),
            ds.subset(slice(n_train + n_val, n)))


def dataset_stats(ds: Dataset) -> dict:
    """Summary numbers written next to generated CSVs."""
    y = ds.y
    nz = y[y > 0]
    top = np.sort(y)[::-1][: max(1, len(y) // 100)]
    quantiles = {}
    if nz.size:
        for q in (0.5, 0.75, 0.9, 0.99, 0.995):
            quantiles[f"p{q * 100:g}"] = float(np.quantile(nz, q))
    return {
        "n_samples": int(len(y)),
        "zero_ratio": float(np.mean(y == 0)),
        "mean": float(y.mean()) if len(y) else None,
        "nonzero_quantiles": quantiles,
        "top1pct_value_share": float(top.sum() / y.sum()) if y.sum() > 0 else None,
    }


def config_dict(cfg: GeneratorConfig) -> dict:
    return asdict(cfg)
