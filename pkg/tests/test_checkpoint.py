import json

import numpy as np
import pytest

from ltvforge.checkpoint import checkpoint_dict, load_checkpoint, model_from_dict, params_equal, save_checkpoint
from ltvforge.data import GeneratorConfig, generate
from ltvforge.exceptions import ArtifactMismatchError, InputError
from ltvforge.training import predict, train
from ltvforge.verification import tiny_config


@pytest.fixture(scope="module")
def fitted():
    ds = generate(GeneratorConfig(n_samples=300, n_numeric=3, n_categorical=1, cat_cardinality=4, seed=0))
    model, _ = train(ds, None, tiny_config(epochs=1, batch_size=64))
    return model, ds


def test_round_trip_is_exact(fitted, tmp_path):
    model, ds = fitted
    path = tmp_path / "m.json"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert params_equal(model.params, back.params)
    assert back.spec == model.spec and back.cfg == model.cfg
    np.testing.assert_array_equal(predict(model, ds).v_final, predict(back, ds).v_final)
    save_checkpoint(back, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_missing_tensor_rejected(fitted):
    d = checkpoint_dict(fitted[0])
    d["tensors"].pop(sorted(d["tensors"])[0])
    with pytest.raises(ArtifactMismatchError):
        model_from_dict(d)


def test_wrong_shape_rejected(fitted):
    d = checkpoint_dict(fitted[0])
    name = "encoder.mlp.0.W"
    d["tensors"][name]["shape"] = d["tensors"][name]["shape"][::-1]
    with pytest.raises(ArtifactMismatchError):
        model_from_dict(d)


def test_format_and_version_checked(fitted):
    d = checkpoint_dict(fitted[0])
    with pytest.raises(ArtifactMismatchError):
        model_from_dict({**d, "format": "other"})
    with pytest.raises(ArtifactMismatchError):
        model_from_dict({**d, "version": 99})


def test_load_errors(tmp_path):
    with pytest.raises(InputError):
        load_checkpoint(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ArtifactMismatchError):
        load_checkpoint(tmp_path / "bad.json")


def test_file_is_plain_json(fitted, tmp_path):
    save_checkpoint(fitted[0], tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["format"] == "ltvforge-checkpoint" and d["schema"]["categorical"] == ["cat_0"]
