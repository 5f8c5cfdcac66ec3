import numpy as np
import pytest

from ml.error_handling import EvaluationError
from ml.metrics import (
    NA,
    ConfusionCounts,
    compute_metrics,
    evaluate_predictions,
    metrics_rows,
    scenario_breakdown,
)


def test_reference_counts():
    report = compute_metrics(ConfusionCounts(tp=9, fp=1, tn=999, fn=0))
    assert report.precision == pytest.approx(0.9)
    assert report.recall == 1.0
    assert report.f1 == pytest.approx(0.9474, abs=1e-4)
    assert report.fpr == pytest.approx(0.001)


def test_zero_denominators_are_na():
    report = compute_metrics(ConfusionCounts(tn=10))
    assert report.precision is None and report.recall is None and report.f1 is None
    assert report.fpr == 0.0
    data = report.to_dict()
    assert data["precision"] == NA and data["f1"] == NA


def test_no_benign_events_gives_na_fpr():
    assert compute_metrics(ConfusionCounts(tp=3)).fpr is None


def test_precision_and_recall_zero_gives_na_f1():
    report = compute_metrics(ConfusionCounts(fp=2, fn=3))
    assert report.precision == 0.0 and report.recall == 0.0
    assert report.f1 is None


def test_negative_counts_are_rejected():
    with pytest.raises(EvaluationError):
        ConfusionCounts(tp=-1)


def test_length_mismatch_is_rejected():
    with pytest.raises(EvaluationError):
        ConfusionCounts.from_predictions([1, 0], [1])


def test_counts_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(0, 30))
        predicted = rng.integers(0, 2, size=n).tolist()
        actual = rng.integers(0, 2, size=n).tolist()
        counts = ConfusionCounts.from_predictions(predicted, actual)
        pairs = list(zip(predicted, actual))
        assert counts.tp == pairs.count((1, 1))
        assert counts.fp == pairs.count((1, 0))
        assert counts.fn == pairs.count((0, 1))
        assert counts.tn == pairs.count((0, 0))
        assert counts.total == n

        report = compute_metrics(counts)
        if report.f1 is not None:
            assert report.f1 == pytest.approx(2 * counts.tp / (2 * counts.tp + counts.fp + counts.fn))


def test_scenario_breakdown_keeps_all_benign_events():
    predicted = [1, 0, 1, 0, 1]
    labels = [1, 1, 1, 0, 0]
    scenarios = ["door", "door", "camera", None, None]
    out = scenario_breakdown(predicted, labels, scenarios)
    assert sorted(out) == ["camera", "door"]
    assert out["door"].counts == ConfusionCounts(tp=1, fn=1, tn=1, fp=1)
    assert out["camera"].counts == ConfusionCounts(tp=1, tn=1, fp=1)


def test_evaluate_predictions_carries_config_and_seed():
    report = evaluate_predictions([1, 0], [1, 0], ["door", None], config={"alpha": 0.2}, seed=7)
    assert report.f1 == 1.0
    data = report.to_dict()
    assert data["seed"] == 7 and data["config"] == {"alpha": 0.2}
    assert list(data["scenarios"]) == ["door"]


def test_metrics_rows_flatten_reports():
    rows = metrics_rows({"a": compute_metrics(ConfusionCounts(tp=1, tn=1))}, key="strategy")
    assert rows == [{"strategy": "a", "tp": 1, "fp": 0, "tn": 1, "fn": 0, "fpr": 0.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}]
