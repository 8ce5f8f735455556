import math

import numpy as np
import oracles
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltvforge.exceptions import InputError
from ltvforge.metrics import (
    StrataSpec,
    bucket_chi2,
    classification_metrics,
    f1_score,
    full_report,
    gini,
    normalized_gini,
    recall_at_k,
    regression_errors,
    spearman,
    stratum,
)

values = st.lists(st.integers(0, 6).map(float), min_size=2, max_size=40)


def random_instance(rng, n):
    true = np.where(rng.random(n) < 0.3, 0.0, rng.lognormal(1.0, 1.0, n))
    true[rng.integers(n)] = 1.0 + rng.random()
    # a coarse grid makes ties in predictions common
    pred = np.round(rng.lognormal(1.0, 1.0, n) * rng.integers(1, 4), 1)
    pred[rng.random(n) < 0.2] = 0.05
    return pred, true


def test_gini_spot_values():
    assert gini([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(0.25, abs=1e-15)
    assert gini([4, 3, 2, 1], [1, 2, 3, 4]) == pytest.approx(-0.25, abs=1e-15)
    assert gini([3.0], [3.0]) == 0.0


def test_gini_zero_total_is_undefined():
    with pytest.raises(InputError):
        gini([1, 2], [0, 0])


def test_normalized_gini_of_perfect_ranking():
    assert normalized_gini([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0, abs=1e-15)


def test_spearman_monotone():
    y = [1.0, 5.0, 2.0, 9.0]
    assert spearman([v**3 for v in y], y) == pytest.approx(1.0, abs=1e-15)
    assert spearman([-v for v in y], y) == pytest.approx(-1.0, abs=1e-15)


def test_spearman_ties_against_oracle():
    got = spearman([1, 2, 2, 3], [1, 3, 2, 4])
    assert got == pytest.approx(oracles.spearman([1, 2, 2, 3], [1, 3, 2, 4]), abs=1e-12)
    assert got == pytest.approx(0.9486832980505138, abs=1e-12)


def test_spearman_constant_is_undefined():
    with pytest.raises(InputError):
        spearman([1, 1, 1], [1, 2, 3])


def test_regression_errors_hand_values():
    assert regression_errors([1, 2], [1, 2]) == {"nmae": 0.0, "mape": 0.0, "ambe": 0.0, "nrmse": 0.0}
    e = regression_errors([2, 2], [1, 3])
    assert e["nmae"] == 0.5 and e["ambe"] == 0.0 and e["nrmse"] == 0.5
    assert e["mape"] == pytest.approx(2 / 3, abs=1e-15)


@given(st.lists(st.floats(0.1, 100), min_size=1, max_size=20), st.floats(0.01, 10))
def test_ambe_isolates_constant_shift(y, c):
    y = np.array(y)
    assert regression_errors(y + c, y)["ambe"] == pytest.approx(c, rel=1e-9)


def test_classification_perfect():
    y = np.array([0.0, 0.5, 4.0, 9.0])
    m = classification_metrics(y, y, StrataSpec(1.0), [1, 2, 3, 4], [1, 2, 3, 4])
    assert (m["f1_zero"], m["sva"], m["bucket_acc"]) == (1.0, 1.0, 1.0)


def test_sva_one_miss():
    m = classification_metrics([0.0, 0.5, 0.9], [0.0, 1.0, 10.0], StrataSpec(1.0))
    assert m["sva"] == pytest.approx(2 / 3, abs=1e-15)


def test_regression_only_zero_rule():
    assert stratum([0.05], 1.0, np.array([0.05]) > 0.1)[0] == 0
    m = classification_metrics([0.05, 3.0], [0.0, 3.0], StrataSpec(1.0))
    assert m["f1_zero"] == 1.0 and m["sva"] == 1.0


def test_recall_at_k():
    pred = np.array([5.0, 1.0, 3.0, 2.0])
    whale = np.array([True, False, True, False])
    assert recall_at_k(pred, whale, 4) == 1.0
    assert recall_at_k(pred, whale, 2) == 1.0
    with pytest.raises(InputError):
        recall_at_k(pred, whale, 5)


def test_recall_of_constant_prediction_is_k_over_n_on_average():
    n, k = 200, 50
    hits = []
    for seed in range(200):
        whale = np.zeros(n, dtype=bool)
        whale[np.random.default_rng(seed).choice(n, 20, replace=False)] = True
        hits.append(recall_at_k(np.ones(n), whale, k))
    assert np.mean(hits) == pytest.approx(k / n, abs=0.02)


def test_chi2():
    assert bucket_chi2([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert bucket_chi2([0.6, 0.4], [0.5, 0.5]) == pytest.approx(0.04, abs=1e-15)


def test_f1_empty_is_one():
    assert f1_score(np.zeros(3, bool), np.zeros(3, bool)) == 1.0


def test_full_report_perfect_model():
    rng = np.random.default_rng(0)
    y = np.where(rng.random(200) < 0.3, 0.0, rng.lognormal(2, 1, 200))
    b = np.digitize(y, [1e-6, 5.0, 12.0], right=True) + 1
    r = full_report(y, y, StrataSpec.from_labels(y), k=20, pred_buckets=b, true_buckets=b, n_buckets=4)
    assert r.gini == pytest.approx(gini(y, y)) and r.spearman == pytest.approx(1.0)
    assert (r.nmae, r.ambe, r.nrmse, r.mape) == (0.0, 0.0, 0.0, 0.0)
    assert r.sva == 1.0 and r.bucket_acc == 1.0 and r.f1_top == 1.0
    assert r.undefined is None


def test_full_report_nonzero_subset():
    y = np.array([0.0, 0.0, 1.0, 2.0, 5.0])
    pred = np.array([9.0, 8.0, 1.0, 3.0, 2.0])
    r = full_report(pred, y, StrataSpec(2.0))
    assert r.gini_nonzero == pytest.approx(gini(pred[2:], y[2:]), abs=1e-15)
    assert r.spearman_nonzero == pytest.approx(spearman(pred[2:], y[2:]), abs=1e-15)


def test_full_report_records_undefined_fields():
    r = full_report([1.0, 2.0], [0.0, 0.0], StrataSpec(1.0))
    assert r.gini is None and "gini" in r.undefined and r.f1_zero is not None


def test_full_report_is_deterministic():
    rng = np.random.default_rng(3)
    pred, true = random_instance(rng, 80)
    a = full_report(pred, true, StrataSpec(2.0), k=10).to_dict()
    b = full_report(pred, true, StrataSpec(2.0), k=10).to_dict()
    assert a == b


@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_oracles(seed):
    rng = np.random.default_rng(seed)
    for _ in range(40):
        n = int(rng.integers(2, 101))
        pred, true = random_instance(rng, n)
        p, t = pred.tolist(), true.tolist()
        assert gini(pred, true) == pytest.approx(oracles.gini(p, t), abs=1e-12)
        if len(set(p)) > 1 and len(set(t)) > 1:
            assert spearman(pred, true) == pytest.approx(oracles.spearman(p, t), abs=1e-12)
        got, want = regression_errors(pred, true), oracles.errors(p, t)
        for key in want:
            assert got[key] == pytest.approx(want[key], abs=1e-12)


@settings(max_examples=60)
@given(values, values)
def test_spearman_property_against_oracle(a, b):
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    if len(set(a)) < 2 or len(set(b)) < 2:
        return
    assert spearman(a, b) == pytest.approx(oracles.spearman(a, b), abs=1e-12)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=30))
def test_gini_bounded(y):
    if math.fsum(y) <= 0:
        return
    rng = np.random.default_rng(len(y))
    pred = rng.random(len(y))
    assert -1.0 - 1e-12 <= gini(pred, y) <= 1.0 + 1e-12
