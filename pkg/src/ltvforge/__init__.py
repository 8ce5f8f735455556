"""Cascaded ordinal LTV regression with intra-bucket residuals and whale augmentation."""

__version__ = "0.1.0"

from .buckets import BucketSpec, LabelBucketizer, assign_bucket, fit_bucket_spec, normalize_label
from .cascade import CascadeConfig, bucket_distribution, predict_bucket
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, GeneratorConfig, chronological_split, generate, load_csv, write_csv
from .estimator import CascadeOrdinalRegressor
from .evaluation import evaluate
from .exceptions import (
    ArtifactMismatchError,
    ConfigurationError,
    InputError,
    LTVForgeError,
    NumericalError,
    SchemaError,
)
from .metrics import MetricsReport, StrataSpec, full_report
from .model import STAGES, CascadeOrdinalNet, ModelConfig, large_scale_config
from .training import FittedModel, predict, train

__all__ = [
    "ArtifactMismatchError", "BucketSpec", "CascadeOrdinalNet", "CascadeOrdinalRegressor", "CascadeConfig",
    "ConfigurationError", "Dataset", "FittedModel", "GeneratorConfig", "InputError", "LTVForgeError",
    "LabelBucketizer", "MetricsReport", "ModelConfig", "NumericalError", "STAGES", "SchemaError",
    "StrataSpec", "assign_bucket", "bucket_distribution", "chronological_split", "evaluate",
    "fit_bucket_spec", "full_report", "generate", "load_checkpoint", "load_csv", "normalize_label",
    "large_scale_config", "predict", "predict_bucket", "save_checkpoint", "train", "write_csv",
    "__version__",
]
