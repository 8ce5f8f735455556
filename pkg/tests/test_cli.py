import json
import subprocess
import sys

import numpy as np
import pytest

from ltvforge.cli import EXIT_INPUT, EXIT_MISMATCH, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, RunConfig, main
from ltvforge.data import Dataset, GeneratorConfig, generate, write_csv
from ltvforge.exceptions import ConfigurationError

TINY_MODEL = {"encoder_hidden": [8, 6], "cascade": {"trunk_hidden": 6, "trunk_output": 6, "head_width": 4},
              "bucket_embedding_dim": 3, "align_dim": 6, "residual_dims": [5, 4], "attention_hidden": 4,
              "dual_head_hidden": [6, 4], "epochs": 2, "batch_size": 128}

REPORT_KEYS = {"build_id", "command", "config", "metrics", "rows", "seed", "version"}
METRIC_KEYS = {"n", "gini", "gini_normalized", "gini_nonzero", "spearman", "spearman_nonzero", "nmae", "mape",
               "ambe", "nrmse", "f1_zero", "bucket_acc", "sva", "recall_at_k", "k", "ambe_top", "nrmse_top",
               "f1_top", "bucket_chi2", "undefined"}


def write_config(tmp_path, name="cfg.json", **sections):
    path = tmp_path / name
    path.write_text(json.dumps(sections))
    return str(path)


@pytest.fixture
def workspace(tmp_path):
    cfg = write_config(tmp_path, generator={"n_samples": 1500, "n_numeric": 3, "n_categorical": 1,
                                            "cat_cardinality": 4, "signal_corr": 0.9, "seed": 3},
                       model=TINY_MODEL,
                       paths={"data": "data.csv", "checkpoint": "model.json", "history": "hist.jsonl",
                              "report": "report.json"},
                       options={"recall_k": 50})
    assert main(["gen-data", "--config", cfg]) == EXIT_OK
    return tmp_path, cfg


def test_gen_data_is_byte_reproducible(workspace):
    tmp, cfg = workspace
    first = (tmp / "data.csv").read_bytes()
    sidecar = (tmp / "data.csv.stats.json").read_bytes()
    assert main(["gen-data", "--config", cfg]) == EXIT_OK
    assert (tmp / "data.csv").read_bytes() == first
    assert (tmp / "data.csv.stats.json").read_bytes() == sidecar


def test_sidecar_zero_ratio(tmp_path):
    cfg = write_config(tmp_path, generator={"n_samples": 50_000, "zero_ratio": 0.646, "n_numeric": 1,
                                            "n_categorical": 0}, paths={"data": "d.csv"})
    assert main(["gen-data", "--config", cfg]) == EXIT_OK
    stats = json.loads((tmp_path / "d.csv.stats.json").read_text())["stats"]
    assert abs(stats["zero_ratio"] - 0.646) <= 0.01
    assert {"nonzero_quantiles", "top1pct_value_share"} <= set(stats)


def test_empty_dataset_is_input_error(tmp_path, capsys):
    cfg = write_config(tmp_path, generator={"n_samples": 0}, paths={"data": "d.csv"})
    assert main(["gen-data", "--config", cfg]) == EXIT_INPUT
    assert "n_samples" in capsys.readouterr().err


def test_unwritable_path(tmp_path):
    (tmp_path / "file").write_text("")
    cfg = write_config(tmp_path, generator={"n_samples": 10}, paths={"data": "file/sub/d.csv"})
    assert main(["gen-data", "--config", cfg]) == EXIT_INPUT


@pytest.mark.parametrize("sections", [{"generatr": {}}, {"generator": {"n_sample": 5}},
                                      {"model": {"epoch": 3}}, {"model": {"cascade": {"depth": [1]}}},
                                      {"options": {"k": 5}}, {"paths": {"out": "x"}}])
def test_unknown_keys_rejected(tmp_path, sections):
    assert main(["gen-data", "--config", write_config(tmp_path, **sections)]) == EXIT_INPUT


def test_missing_or_invalid_config(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == EXIT_INPUT
    (tmp_path / "bad.json").write_text("{")
    assert main(["train", "--config", str(tmp_path / "bad.json")]) == EXIT_INPUT
    assert main(["gen-data", "--config", str(tmp_path / "bad.json"), "--threads", "0"]) == EXIT_INPUT


def test_train_and_eval(workspace):
    tmp, cfg = workspace
    assert main(["train", "--config", cfg, "--threads", "1"]) == EXIT_OK
    rows = [json.loads(line) for line in (tmp / "hist.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2]
    ckpt = (tmp / "model.json").read_bytes()
    assert main(["train", "--config", cfg, "--threads", "1"]) == EXIT_OK
    assert (tmp / "model.json").read_bytes() == ckpt

    assert main(["eval", "--config", cfg, "--threads", "1"]) == EXIT_OK
    report = (tmp / "report.json").read_bytes()
    assert main(["eval", "--config", cfg, "--threads", "1"]) == EXIT_OK
    assert (tmp / "report.json").read_bytes() == report
    doc = json.loads(report)
    assert set(doc) == REPORT_KEYS and set(doc["metrics"]) == METRIC_KEYS
    assert doc["command"] == "eval" and doc["rows"] == 600 and len(doc["build_id"]) == 12


def test_eval_schema_mismatch(workspace):
    tmp, cfg = workspace
    assert main(["train", "--config", cfg]) == EXIT_OK
    other = generate(GeneratorConfig(n_samples=100, n_numeric=2, n_categorical=1, cat_cardinality=4))
    write_csv(other, tmp / "other.csv")
    cfg2 = write_config(tmp, "e.json", paths={"eval_data": "other.csv", "checkpoint": "model.json",
                                              "report": "r2.json"})
    assert main(["eval", "--config", cfg2]) == EXIT_MISMATCH


def test_eval_needs_checkpoint(workspace):
    _, cfg = workspace
    assert main(["eval", "--config", cfg]) == EXIT_INPUT


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_three_and_keeps_history(workspace):
    tmp, _ = workspace
    # one step per epoch: the first epoch finishes, the blown-up weights fail in the second
    model = {**TINY_MODEL, "epochs": 3, "batch_size": 4096, "lr": 1e300, "lr_min": 1e300}
    cfg = write_config(tmp, "nan.json", model=model,
                       paths={"data": "data.csv", "checkpoint": "m.json", "history": "h.jsonl"},
                       options={"val_frac": 0.0})
    assert main(["train", "--config", cfg]) == EXIT_NUMERIC
    rows = (tmp / "h.jsonl").read_text().splitlines()
    assert len(rows) == 1 and json.loads(rows[0])["epoch"] == 1
    assert not (tmp / "m.json").exists()


def test_ablate_single_stage_and_bad_ladder(workspace):
    tmp, _ = workspace
    cfg = write_config(tmp, "ab.json", model=TINY_MODEL, paths={"data": "data.csv", "report": "ab.json.out"},
                       options={"stages": ["+cascade"], "recall_k": 50})
    assert main(["ablate", "--config", cfg]) == EXIT_OK
    doc = json.loads((tmp / "ab.json.out").read_text())
    assert doc["stages"] == ["+cascade"] and len(doc["rows"]) == 1
    bad = write_config(tmp, "bad.json", model=TINY_MODEL, paths={"data": "data.csv", "report": "x.json"},
                       options={"stages": ["+aug", "baseline"]})
    assert main(["ablate", "--config", bad]) == EXIT_INPUT
    unknown = write_config(tmp, "unk.json", paths={"data": "data.csv", "report": "x.json"},
                           options={"stages": ["+magic"]})
    assert main(["ablate", "--config", unknown]) == EXIT_INPUT


def test_ablate_rows_carry_deltas(workspace):
    tmp, _ = workspace
    cfg = write_config(tmp, "ab2.json", model={**TINY_MODEL, "epochs": 1},
                       paths={"data": "data.csv", "report": "ab2.out"},
                       options={"stages": ["baseline", "+cascade"], "recall_k": 50})
    assert main(["ablate", "--config", cfg]) == EXIT_OK
    rows = json.loads((tmp / "ab2.out").read_text())["rows"]
    assert rows[0]["delta_vs_previous"] is None
    d = rows[1]["delta_vs_previous"]["sva"]
    assert d == pytest.approx(rows[1]["metrics"]["sva"] - rows[0]["metrics"]["sva"])


def test_grad_check_passes_and_lists_components(tmp_path, capsys):
    cfg = write_config(tmp_path, paths={"report": "gc.json"})
    assert main(["grad-check", "--config", cfg]) == EXIT_OK
    out = capsys.readouterr().out
    doc = json.loads((tmp_path / "gc.json").read_text())
    assert set(doc["components"]) == {"cascade", "distill", "residual", "high_value", "total"}
    assert all(name in out for name in doc["components"])
    assert doc["passed"] is True


def test_grad_check_self_test_fails(tmp_path):
    cfg = write_config(tmp_path, options={"self_test": True})
    assert main(["grad-check", "--config", cfg]) == EXIT_VERIFY


def test_paper_defaults_and_seed_override(tmp_path):
    path = write_config(tmp_path, model={"epochs": 1})
    cfg = RunConfig.load(path, seed=42, paper_defaults=True)
    assert cfg.model.encoder_hidden == (400, 300, 200) and cfg.model.epochs == 1
    assert cfg.model.seed == 42 and cfg.generator.seed == 42
    assert RunConfig.load(path).model.encoder_hidden == (64, 48, 32)
    with pytest.raises(ConfigurationError):
        RunConfig.load(write_config(tmp_path, "x.json", options={"eval_split": "train"}))


def test_label_leak_sanity_run(tmp_path):
    ds = generate(GeneratorConfig(n_samples=3000, n_numeric=1, n_categorical=1, cat_cardinality=4, seed=0))
    leak = Dataset(np.column_stack([np.log1p(ds.y), (ds.y > 0).astype(float)]), ds.categorical, ds.y,
                   ["num_leak", "num_nonzero"], ds.categorical_names, ds.cardinalities)
    write_csv(leak, tmp_path / "leak.csv")
    cfg = write_config(tmp_path, model={"epochs": 15, "batch_size": 128, "lr": 3e-3},
                       paths={"data": "leak.csv", "checkpoint": "m.json", "history": "h.jsonl",
                              "report": "r.json"}, options={"recall_k": 50})
    assert main(["train", "--config", cfg]) == EXIT_OK
    assert main(["eval", "--config", cfg]) == EXIT_OK
    assert json.loads((tmp_path / "r.json").read_text())["metrics"]["sva"] > 0.95


def test_console_entry_point():
    done = subprocess.run([sys.executable, "-m", "ltvforge.cli", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "grad-check" in done.stdout
    bad = subprocess.run([sys.executable, "-m", "ltvforge.cli", "fly", "--config", "x"], capture_output=True)
    assert bad.returncode == 2


def test_shipped_benchmark_config_matches_helpers():
    from pathlib import Path

    from ltvforge.ablation import benchmark_generator, benchmark_model
    cfg = RunConfig.load(Path(__file__).resolve().parents[1] / "configs" / "benchmark.json")
    assert cfg.generator == benchmark_generator(0) and cfg.model == benchmark_model(0)
