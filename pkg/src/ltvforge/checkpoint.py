"""JSON checkpoint: config echo, schema, bucket spec, preprocessing and named tensors.

Floats are written with ``repr`` precision, so loading reproduces every value
bit for bit, and keys are sorted so two identical models give identical files.
The layout is described in ``docs/formats.md``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .buckets import BucketSpec
from .exceptions import ArtifactMismatchError, InputError
from .model import CascadeOrdinalNet, ModelConfig
from .nn import ParamSet
from .training import FittedModel, Preprocessor

FORMAT = "ltvforge-checkpoint"
VERSION = 1


def _tensor(value: np.ndarray) -> dict:
    return {"shape": list(value.shape), "values": value.reshape(-1).tolist()}


def _array(entry: dict, name: str) -> np.ndarray:
    shape = tuple(entry["shape"])
    values = np.asarray(entry["values"], dtype=np.float64)
    if values.size != int(np.prod(shape, dtype=np.int64)):
        raise ArtifactMismatchError(f"tensor {name!r}: {values.size} values for shape {shape}")
    return values.reshape(shape)


def checkpoint_dict(model: FittedModel) -> dict:
    net = model.net
    return {
        "format": FORMAT,
        "version": VERSION,
        "config": model.cfg.to_dict(),
        "schema": {
            "numeric": list(model.numeric_names),
            "categorical": list(model.categorical_names),
            "cardinalities": list(net.cardinalities),
        },
        "bucket_spec": model.spec.to_dict() if model.spec is not None else None,
        "preprocessing": {"mean": model.preprocessor.mean.tolist(),
                          "scale": model.preprocessor.scale.tolist()},
        "constants": {"baseline_scale": net.baseline_scale, "whale_scale": net.whale_scale,
                      "tau_low": model.tau_low},
        "tensors": {name: _tensor(model.params.values[name]) for name in sorted(model.params.values)},
        "buffers": {name: _tensor(model.params.buffers[name]) for name in sorted(model.params.buffers)},
    }


def save_checkpoint(model: FittedModel, path: str | Path) -> None:
    text = json.dumps(checkpoint_dict(model), sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def model_from_dict(d: dict) -> FittedModel:
    if d.get("format") != FORMAT:
        raise ArtifactMismatchError(f"not an {FORMAT} file")
    if d.get("version") != VERSION:
        raise ArtifactMismatchError(f"unsupported checkpoint version {d.get('version')!r}")
    cfg = ModelConfig.from_dict(d["config"])
    schema = d["schema"]
    spec = BucketSpec.from_dict(d["bucket_spec"]) if d["bucket_spec"] is not None else None
    consts = d["constants"]
    net = CascadeOrdinalNet(cfg, len(schema["numeric"]), schema["cardinalities"], spec, consts["baseline_scale"])
    # the graph decides which tensors must exist; every one of them must be present
    params = net.init_params()
    expected, stored = set(params.values), set(d["tensors"])
    if expected != stored:
        raise ArtifactMismatchError(
            f"checkpoint tensors do not match the configured graph: missing {sorted(expected - stored)}, "
            f"unexpected {sorted(stored - expected)}")
    for name in params.values:
        value = _array(d["tensors"][name], name)
        if value.shape != params.values[name].shape:
            raise ArtifactMismatchError(f"tensor {name!r} has shape {value.shape}, "
                                        f"graph expects {params.values[name].shape}")
        params.values[name][...] = value
    if set(params.buffers) != set(d["buffers"]):
        raise ArtifactMismatchError("checkpoint buffers do not match the configured graph")
    for name in params.buffers:
        params.buffers[name][...] = _array(d["buffers"][name], name)
    pre = Preprocessor(np.asarray(d["preprocessing"]["mean"], dtype=np.float64),
                       np.asarray(d["preprocessing"]["scale"], dtype=np.float64))
    return FittedModel(net, params, spec, pre, list(schema["numeric"]), list(schema["categorical"]),
                       float(consts["tau_low"]))


def load_checkpoint(path: str | Path) -> FittedModel:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InputError(f"checkpoint not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactMismatchError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    return model_from_dict(d)


def params_equal(a: ParamSet, b: ParamSet) -> bool:
    if set(a.values) != set(b.values) or set(a.buffers) != set(b.buffers):
        return False
    return (all(np.array_equal(a.values[k], b.values[k]) for k in a.values)
            and all(np.array_equal(a.buffers[k], b.buffers[k]) for k in a.buffers))
