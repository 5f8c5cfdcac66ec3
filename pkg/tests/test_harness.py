import io
import json

import numpy as np
import pandas as pd
import pytest

from ml.detector import evaluate
from ml.error_handling import ArgusError, TraceSpanError
from ml.harness import (
    NOISE_BUCKETS,
    ExperimentReport,
    best_cell,
    comparison_strategies,
    emit_report,
    noise_buckets,
    report_csv,
    report_json,
    run_alpha_beta_grid,
    run_benchmark,
    run_noise_robustness,
    run_poisoning_ablation,
    run_threshold_comparison,
    run_threshold_trace,
    run_training_duration_ablation,
)
from ml.metrics import ConfusionCounts, compute_metrics
from ml.nn import TrainConfig
from ml.simulator import AttackKind, AttackScenario, flicker_pool, inject_attack, poison_count, state_intervals
from ml.threshold import ThresholdConfig, ThresholdStrategy


@pytest.fixture(scope="module")
def attacked_test(home_split):
    _, test = home_split
    lo, hi = state_intervals(test, "person.resident", "not_home")[0]
    return inject_attack(test, AttackScenario(AttackKind.LIGHTS_ON_WHILE_ABSENT, lo, hi), seed=0)


# ─── grid selection ───


def test_best_cell_prefers_smallest_alpha_then_beta():
    alphas, betas = [0.5, 0.1, 0.3], [0.2, 0.0]
    f1 = [
        [0.9, 0.9],
        [0.8, 0.9],
        [0.9, 0.7],
    ]
    assert best_cell(alphas, betas, f1) == (0.1, 0.0, 0.9)


def test_best_cell_skips_undefined_cells():
    assert best_cell([0.1, 0.2], [0.1], [[None], [0.4]]) == (0.2, 0.1, 0.4)
    assert best_cell([0.1], [0.1], [[None]]) is None


def test_comparison_covers_every_strategy():
    labels = [cfg.label for cfg in comparison_strategies(ThresholdConfig(alpha=0.2, beta=0.2))]
    assert labels == [
        "mean-of-max",
        "mean-std-prev-day",
        "max-prev-days",
        "argus(alpha=0,beta=0.2)",
        "argus(alpha=1,beta=0.2)",
        "argus(alpha=0.2,beta=0.2)",
    ]


# ─── threshold experiments on one trained model ───


def test_single_cell_grid_matches_streaming_evaluation(tiny_detector, attacked_test):
    cfg = tiny_detector.threshold_cfg
    grid = run_alpha_beta_grid(tiny_detector, attacked_test, [cfg.alpha], [cfg.beta], seed=1)
    streamed = evaluate(tiny_detector, attacked_test)
    assert grid.rows[0]["f1"] == streamed.f1
    assert grid.rows[0]["fpr"] == streamed.fpr
    assert grid.extra["best"] is None or grid.extra["best"]["alpha"] == cfg.alpha


def test_threshold_comparison_shares_one_score_stream(tiny_detector, attacked_test):
    report = run_threshold_comparison(tiny_detector, attacked_test, seed=1)
    assert [row["strategy"] for row in report.rows] == [c.label for c in comparison_strategies(tiny_detector.threshold_cfg)]
    totals = {sum(row[k] for k in ("tp", "fp", "tn", "fn")) for row in report.rows}
    assert totals == {len(attacked_test.updates)}


def test_threshold_trace_reports_total_variation(tiny_detector, attacked_test):
    report = run_threshold_trace(tiny_detector, attacked_test)
    assert [row["day"] for row in report.rows] == [0]
    assert report.extra["total_variation_threshold"] == 0.0


def test_noise_buckets_partition_the_stream():
    scores = np.array([0.1, 0.5, 0.05, 0.3, 0.9, 0.2])
    clean = np.array([0.1, 0.2, 0.1, 0.3, 0.2, 0.25])
    thresholds = np.full(6, 0.6)
    days = np.array([0, 0, 0, 1, 1, 1])
    out = noise_buckets(scores, thresholds, days, clean)
    # day 0 clean range [0.1, 0.2], day 1 [0.2, 0.3]
    assert out["alerts_pct"] == pytest.approx(100 / 6)
    assert out["affecting_no_alert_pct"] == pytest.approx(200 / 6)
    assert out["not_affecting_pct"] == pytest.approx(300 / 6)
    assert sum(out.values()) == pytest.approx(100.0)


def test_noise_control_row_has_no_affecting_events(tiny_detector, home_split):
    _, test = home_split
    report = run_noise_robustness(tiny_detector, test, sigmas=[0, 2], devices=["sensor.temperature"], seed=1)
    control = report.rows[0]
    assert control["sigma"] == 0 and control["affecting_no_alert_pct"] == 0.0
    for row in report.rows:
        assert sum(row[k] for k in NOISE_BUCKETS) == pytest.approx(100.0)


def test_noise_needs_a_device(tiny_detector, home_split):
    with pytest.raises(ArgusError):
        run_noise_robustness(tiny_detector, home_split[1], sigmas=[1], devices=[])


def test_duration_outside_training_span(home_split, tiny_train_cfg, attacked_test):
    train, _ = home_split
    with pytest.raises(TraceSpanError):
        run_training_duration_ablation(train, [0], attacked_test, tiny_train_cfg, l=4)
    with pytest.raises(TraceSpanError):
        run_training_duration_ablation(train, [4], attacked_test, tiny_train_cfg, l=4)


def test_poisoning_rows_follow_the_fractions(home_split, tiny_train_cfg):
    train, test = home_split
    lo, hi = state_intervals(test, "person.resident", "not_home")[0]
    flickered = inject_attack(test, AttackScenario(AttackKind.LIGHT_FLICKERING, lo, hi), seed=0)
    pool = flicker_pool(train, episodes=5, seed=1)
    report = run_poisoning_ablation(train, pool, [0.0, 0.01], flickered, tiny_train_cfg, l=4, seed=1)
    n = len(train.updates)
    assert [row["injected"] for row in report.rows] == [0, poison_count(n, 0.01)]
    assert set(report.reports) == {"0", "0.01"}


def test_poisoning_needs_sorted_fractions(home_split, tiny_train_cfg, attacked_test):
    train, _ = home_split
    with pytest.raises(ArgusError):
        run_poisoning_ablation(train, train, [0.05, 0.0], attacked_test, tiny_train_cfg, l=4)


# ─── reports ───


def _report():
    reports = {
        "a": compute_metrics(ConfusionCounts(tp=1, tn=3)),
        "b": compute_metrics(ConfusionCounts(tn=4)),
    }
    rows = [{"name": k, **r.row()} for k, r in reports.items()]
    return ExperimentReport("threshold", 7, rows, reports, {"alpha": 0.2}, {"note": np.float64(0.5)})


def test_report_json_renders_missing_values_as_na():
    doc = json.loads(report_json(_report()))
    assert doc["rows"][1]["precision"] == "NA"
    assert doc["reports"]["b"]["f1"] == "NA"
    assert doc["extra"]["note"] == 0.5


def test_report_csv_has_one_row_per_entry():
    text = report_csv(_report())
    lines = text.splitlines()
    assert lines[0] == "name,tp,fp,tn,fn,fpr,precision,recall,f1"
    assert len(lines) == 3
    assert lines[2].endswith("NA,NA,NA")
    assert len(pd.read_csv(io.StringIO(text))) == 2


def test_emit_report_is_byte_identical(tmp_path):
    first = emit_report(_report(), out_dir=tmp_path / "one")
    second = emit_report(_report(), out_dir=tmp_path / "two")
    assert [p.name for p in first] == ["threshold-seed7.json", "threshold-seed7.csv"]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()


def test_emit_report_rejects_unknown_format(tmp_path):
    with pytest.raises(ArgusError):
        emit_report(_report(), formats=("xml",), out_dir=tmp_path)


# ─── end-to-end trends (desk scale) ───


@pytest.fixture(scope="module")
def benchmark_run():
    return run_benchmark(seed=7)


@pytest.mark.slow
def test_benchmark_meets_detection_targets(benchmark_run):
    report, _, _ = benchmark_run
    argus = report.reports["argus"]
    assert argus.recall >= 0.95
    assert argus.fpr <= 0.01
    assert argus.f1 >= 0.95


@pytest.mark.slow
def test_dynamic_threshold_beats_the_alternatives(benchmark_run):
    _, detector, bench = benchmark_run
    report = run_threshold_comparison(detector, bench.test)
    f1 = {row["strategy"]: row["f1"] or 0.0 for row in report.rows}
    fpr = {row["strategy"]: row["fpr"] or 0.0 for row in report.rows}
    alternatives = [
        ThresholdStrategy.MEAN_OF_MAX.value,
        ThresholdStrategy.MEAN_PLUS_STD_PREV_DAY.value,
        ThresholdStrategy.MAX_OF_PREV_DAYS.value,
    ]
    for name in alternatives:
        assert f1[detector.threshold_cfg.label] >= f1[name]
    assert max(alternatives, key=lambda name: fpr[name]) == ThresholdStrategy.MEAN_PLUS_STD_PREV_DAY.value


@pytest.mark.slow
def test_alerts_grow_with_noise(benchmark_run):
    _, detector, bench = benchmark_run
    sigmas = [0, 1, 2, 3, 4, 5, 6]
    report = run_noise_robustness(detector, bench.test_benign, sigmas, ["sensor.temperature", "sensor.humidity"])
    alerts = {row["sigma"]: row["alerts_pct"] for row in report.rows}
    assert all(alerts[a] <= alerts[b] for a, b in zip(sigmas[1:], sigmas[2:]))
    assert alerts[6] >= alerts[0]

    clean = evaluate(detector, bench.test_benign)
    assert alerts[0] == pytest.approx(100.0 * clean.fpr, abs=1e-9)


@pytest.mark.slow
def test_poisoning_erodes_flicker_detection(benchmark_run):
    _, _, bench = benchmark_run
    pool = flicker_pool(bench.train, episodes=400, seed=7)
    report = run_poisoning_ablation(
        bench.train, pool, [0.0, 0.02, 0.05], bench.test, TrainConfig.desk_scale(), ThresholdConfig.for_benchmark(),
    )
    first, last = report.rows[0], report.rows[-1]
    assert (last["f1"] or 0.0) <= (first["f1"] or 0.0)
    assert last["injected"] > first["injected"] == 0


@pytest.mark.slow
def test_longer_training_does_not_hurt(benchmark_run):
    _, _, bench = benchmark_run
    report = run_training_duration_ablation(
        bench.train, [1, 7], bench.test, TrainConfig.desk_scale(), ThresholdConfig.for_benchmark(),
    )
    one_day, week = report.rows
    assert (week["f1"] or 0.0) >= (one_day["f1"] or 0.0)
