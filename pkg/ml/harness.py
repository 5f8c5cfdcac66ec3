"""
Experiment Harness
Desk-scale experiment runners and report emission.

Every runner is a pure function of its inputs and seeds. Runners that need
several independent trainings fan out through joblib and reassemble rows in
input order.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.metrics import precision_recall_curve

from ml.detector import (
    DetectorModel,
    detection_days,
    evaluate,
    fit,
    score_trace,
)
from ml.error_handling import ArgusError, EvaluationError, TraceSpanError
from ml.metrics import (
    NA,
    ConfusionCounts,
    MetricsReport,
    compute_metrics,
    evaluate_predictions,
    metrics_rows,
    na,
)
from ml.nn import ModelVariant, TrainConfig
from ml.simulator import (
    AttackKind,
    Benchmark,
    NoiseConfig,
    build_benchmark,
    inject_noise,
    poison_count,
    poison_training,
)
from ml.threshold import (
    Decision,
    ThresholdConfig,
    ThresholdStrategy,
    threshold_candidate,
    threshold_sequence,
    total_variation,
)
from ml.trace import Trace, day_index, select_days
from src.core.config import Config

logger = logging.getLogger(__name__)

__all__ = [
    "NA",
    "ConfusionCounts",
    "MetricsReport",
    "compute_metrics",
    "ExperimentReport",
    "run_benchmark",
    "run_threshold_comparison",
    "run_alpha_beta_grid",
    "run_training_duration_ablation",
    "run_noise_robustness",
    "run_poisoning_ablation",
    "run_baseline_comparison",
    "run_threshold_trace",
    "emit_report",
]


@dataclass
class ExperimentReport:
    """One experiment's output: tabular rows plus full-fidelity metric reports."""
    experiment: str
    seed: int
    rows: List[Dict[str, Any]] = field(default_factory=list)
    reports: Dict[str, MetricsReport] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "experiment": self.experiment,
            "seed": self.seed,
            "config": self.config,
            "rows": [{k: na(v) for k, v in row.items()} for row in self.rows],
            "reports": {name: r.to_dict() for name, r in self.reports.items()},
        }
        if self.extra:
            data["extra"] = self.extra
        return data


def _seeded(train_cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(train_cfg, seed=seed)


def _replay(
    detector: DetectorModel,
    cfg: ThresholdConfig,
    scores: np.ndarray,
    days: np.ndarray,
    labeled: Trace,
    seed: Optional[int] = None,
) -> MetricsReport:
    """Threshold a shared score stream with one strategy and score it against the labels."""
    bootstrap = threshold_candidate(detector.validation_scores, cfg.beta)
    _, decisions, history = threshold_sequence(cfg, bootstrap, scores, days, detector.train_day_scores)
    predicted = [int(d == Decision.ATTACK) for d in decisions]
    report = evaluate_predictions(
        predicted, labeled.label_list(), labeled.scenarios,
        config={"threshold": cfg.to_dict(), "bootstrap_T": bootstrap}, seed=seed,
    )
    report.extra["threshold_history"] = [
        {"day": d, "candidate": na(c), "threshold": t} for d, (c, t) in enumerate(history)
    ]
    return report


# ─── Standard pipeline ────────────────────────────────────────


def run_benchmark(
    seed: int = 7,
    train_cfg: Optional[TrainConfig] = None,
    thr_cfg: Optional[ThresholdConfig] = None,
    l: int = 16,
    benchmark: Optional[Benchmark] = None,
) -> Tuple[ExperimentReport, DetectorModel, Benchmark]:
    """Fourteen-day synthetic home, trained on its first week, all nine attacks in the second."""
    train_cfg = _seeded(train_cfg or TrainConfig.desk_scale(), seed)
    thr_cfg = thr_cfg or ThresholdConfig.for_benchmark()
    bench = benchmark or build_benchmark(seed=seed)
    detector = fit(bench.train, train_cfg, thr_cfg, l=l)
    report = evaluate(detector, bench.test, seed=seed)
    logger.info(
        f"Benchmark seed={seed}: recall={na(report.recall)} fpr={na(report.fpr)} f1={na(report.f1)}"
    )
    out = ExperimentReport(
        experiment="benchmark",
        seed=seed,
        rows=[{"name": "argus", **report.row()}] + [
            {"name": kind, **r.row()} for kind, r in sorted(report.scenarios.items())
        ],
        reports={"argus": report},
        config={"train": train_cfg.to_dict(), "threshold": thr_cfg.to_dict(), "l": l,
                "train_days": bench.train_days, "events": len(bench.test.updates)},
        extra={"training": detector.model.training_meta},
    )
    return out, detector, bench


# ─── Threshold experiments ────────────────────────────────────


def comparison_strategies(base: ThresholdConfig) -> List[ThresholdConfig]:
    shared = dict(beta=base.beta, include_attack_scores=base.include_attack_scores)
    return [
        ThresholdConfig(strategy=ThresholdStrategy.MEAN_OF_MAX, **shared),
        ThresholdConfig(strategy=ThresholdStrategy.MEAN_PLUS_STD_PREV_DAY, **shared),
        ThresholdConfig(strategy=ThresholdStrategy.MAX_OF_PREV_DAYS, **shared),
        ThresholdConfig(alpha=0.0, **shared),
        ThresholdConfig(alpha=1.0, **shared),
        replace(base, strategy=ThresholdStrategy.ARGUS),
    ]


def run_threshold_comparison(detector: DetectorModel, test: Trace, seed: int = 7) -> ExperimentReport:
    """All strategies over one shared score stream; rows differ only through the threshold sequence."""
    scores, _ = score_trace(detector, test)
    days = detection_days(detector, test)
    reports: Dict[str, MetricsReport] = {}
    for cfg in comparison_strategies(detector.threshold_cfg):
        reports[cfg.label] = _replay(detector, cfg, scores, days, test, seed)
        logger.info(f"Strategy {cfg.label}: f1={na(reports[cfg.label].f1)} fpr={na(reports[cfg.label].fpr)}")
    return ExperimentReport(
        experiment="threshold",
        seed=seed,
        rows=metrics_rows(reports, key="strategy"),
        reports=reports,
        config={"base_threshold": detector.threshold_cfg.to_dict()},
    )


@dataclass
class GridResult:
    alphas: List[float]
    betas: List[float]
    f1: List[List[Optional[float]]]  # [alpha][beta]
    best: Optional[Tuple[float, float, float]]  # (alpha, beta, f1)


def best_cell(alphas: Sequence[float], betas: Sequence[float], f1: Sequence[Sequence[Optional[float]]]):
    """Arg-max over defined cells; ties go to the smallest alpha, then the smallest beta."""
    best = None
    order_a = sorted(range(len(alphas)), key=lambda i: alphas[i])
    order_b = sorted(range(len(betas)), key=lambda j: betas[j])
    for i in order_a:
        for j in order_b:
            value = f1[i][j]
            if value is not None and (best is None or value > best[2]):
                best = (alphas[i], betas[j], value)
    return best


def run_alpha_beta_grid(
    detector: DetectorModel,
    test: Trace,
    alphas: Sequence[float],
    betas: Sequence[float],
    seed: int = 7,
) -> ExperimentReport:
    """Re-threshold one trained model for every (alpha, beta) pair."""
    if not alphas or not betas:
        raise ArgusError("alpha and beta lists must be nonempty")
    scores, _ = score_trace(detector, test)
    days = detection_days(detector, test)
    grid: List[List[Optional[float]]] = []
    rows = []
    for a in alphas:
        line = []
        for b in betas:
            cfg = replace(detector.threshold_cfg, strategy=ThresholdStrategy.ARGUS, alpha=a, beta=b)
            report = _replay(detector, cfg, scores, days, test, seed)
            line.append(report.f1)
            rows.append({"alpha": a, "beta": b, "f1": report.f1, "fpr": report.fpr})
        grid.append(line)

    result = GridResult(list(alphas), list(betas), grid, best_cell(alphas, betas, grid))
    logger.info(f"Alpha/beta grid {len(alphas)}x{len(betas)}: best={result.best}")
    best = None
    if result.best is not None:
        best = {"alpha": result.best[0], "beta": result.best[1], "f1": result.best[2]}
    return ExperimentReport(
        experiment="alphabeta",
        seed=seed,
        rows=rows,
        config={"alphas": list(alphas), "betas": list(betas)},
        extra={"f1_grid": [[na(v) for v in line] for line in grid], "best": best},
    )


def run_threshold_trace(detector: DetectorModel, test: Trace, seed: int = 7) -> ExperimentReport:
    """Per-day candidate and applied threshold, with the total variation of both series."""
    scores, _ = score_trace(detector, test)
    days = detection_days(detector, test)
    _, _, history = threshold_sequence(
        detector.threshold_cfg, detector.bootstrap_T, scores, days, detector.train_day_scores
    )
    candidates = [c for c, _ in history]
    thresholds = [t for _, t in history]
    rows = [{"day": d, "candidate": c, "threshold": t} for d, (c, t) in enumerate(history)]
    return ExperimentReport(
        experiment="thresholdtrace",
        seed=seed,
        rows=rows,
        config={"threshold": detector.threshold_cfg.to_dict(), "bootstrap_T": detector.bootstrap_T},
        extra={
            "total_variation_candidate": total_variation(candidates),
            "total_variation_threshold": total_variation(thresholds),
        },
    )


# ─── Retraining ablations ─────────────────────────────────────


def _duration_run(train: Trace, days: int, test: Trace, train_cfg: TrainConfig, thr_cfg: ThresholdConfig, l: int, seed: int):
    prefix = select_days(train, 0, days)
    detector = fit(prefix, _seeded(train_cfg, seed), thr_cfg, l=l)
    return evaluate(detector, test, seed=seed)


def run_training_duration_ablation(
    train: Trace,
    durations: Sequence[int],
    test: Trace,
    train_cfg: TrainConfig,
    thr_cfg: Optional[ThresholdConfig] = None,
    l: int = 16,
    seed: int = 7,
) -> ExperimentReport:
    """One model per training-day prefix, each evaluated on the same test trace."""
    thr_cfg = thr_cfg or ThresholdConfig()
    span = int(day_index(train)[-1]) + 1 if train.updates else 0
    for d in durations:
        if not 1 <= d <= span:
            raise TraceSpanError(f"duration {d} outside the training span of {span} day(s)")

    results = Parallel(n_jobs=Config.threads())(
        delayed(_duration_run)(train, d, test, train_cfg, thr_cfg, l, seed) for d in durations
    )
    reports = {f"{d}d": r for d, r in zip(durations, results)}
    rows = [{"days": d, "f1": r.f1, "fpr": r.fpr, "recall": r.recall} for d, r in zip(durations, results)]
    return ExperimentReport(
        experiment="duration",
        seed=seed,
        rows=rows,
        reports=reports,
        config={"durations": list(durations), "train": _seeded(train_cfg, seed).to_dict(), "l": l},
    )


def _poison_run(
    train: Trace, pool: Trace, fraction: float, test: Trace,
    train_cfg: TrainConfig, thr_cfg: ThresholdConfig, l: int, seed: int, scenario: str,
):
    poisoned = poison_training(train, pool, fraction)
    detector = fit(poisoned, _seeded(train_cfg, seed), thr_cfg, l=l)
    report = evaluate(detector, test, seed=seed)
    if scenario not in report.scenarios:
        raise EvaluationError(f"test trace carries no '{scenario}' events")
    return report


def run_poisoning_ablation(
    train: Trace,
    pool: Trace,
    fractions: Sequence[float],
    test: Trace,
    train_cfg: TrainConfig,
    thr_cfg: Optional[ThresholdConfig] = None,
    l: int = 16,
    seed: int = 7,
    scenario: str = AttackKind.LIGHT_FLICKERING.value,
) -> ExperimentReport:
    """Retrain on increasingly poisoned training data and track detection of the poisoning attack."""
    if list(fractions) != sorted(fractions):
        raise ArgusError("poison fractions must be sorted ascending")
    thr_cfg = thr_cfg or ThresholdConfig()
    results = Parallel(n_jobs=Config.threads())(
        delayed(_poison_run)(train, pool, f, test, train_cfg, thr_cfg, l, seed, scenario) for f in fractions
    )
    n = len(train.updates)
    rows = [
        {
            "fraction": f,
            "injected": poison_count(n, f),
            "f1": r.scenarios[scenario].f1,
            "recall": r.scenarios[scenario].recall,
            "overall_f1": r.f1,
        }
        for f, r in zip(fractions, results)
    ]
    return ExperimentReport(
        experiment="poison",
        seed=seed,
        rows=rows,
        reports={f"{f:g}": r for f, r in zip(fractions, results)},
        config={"fractions": list(fractions), "scenario": scenario, "train": _seeded(train_cfg, seed).to_dict()},
    )


def _f1_optimal_threshold(scores: np.ndarray, labels: Sequence[int]) -> float:
    precision, recall, cuts = precision_recall_curve(np.asarray(labels), scores)
    denom = precision[:-1] + recall[:-1]
    f1 = np.divide(2 * precision[:-1] * recall[:-1], denom, out=np.zeros_like(denom), where=denom > 0)
    return float(cuts[int(np.argmax(f1))])


def run_baseline_comparison(
    train: Trace,
    test: Trace,
    train_cfg: TrainConfig,
    thr_cfg: Optional[ThresholdConfig] = None,
    l: int = 16,
    seed: int = 7,
) -> ExperimentReport:
    """
    Recurrent autoencoder with the dynamic threshold against a dense
    autoencoder given its best static threshold in hindsight.
    """
    thr_cfg = thr_cfg or ThresholdConfig()
    labels = test.label_list()
    if not any(labels):
        raise EvaluationError("baseline comparison needs attack events in the test trace")

    recurrent = fit(train, _seeded(replace(train_cfg, variant=ModelVariant.RECURRENT), seed), thr_cfg, l=l)
    dense = fit(train, _seeded(replace(train_cfg, variant=ModelVariant.DENSE), seed), thr_cfg, l=l)

    reports = {"gru-dynamic": evaluate(recurrent, test, seed=seed)}
    scores, _ = score_trace(dense, test)
    cut = _f1_optimal_threshold(scores, labels)
    predicted = (scores >= cut).astype(int).tolist()
    reports["dense-static-best"] = evaluate_predictions(
        predicted, labels, test.scenarios, config={"static_threshold": cut, "rule": "score >= T"}, seed=seed
    )
    return ExperimentReport(
        experiment="baseline",
        seed=seed,
        rows=metrics_rows(reports, key="model"),
        reports=reports,
        config={"train": _seeded(train_cfg, seed).to_dict(), "threshold": thr_cfg.to_dict(), "l": l},
    )


# ─── Noise robustness ─────────────────────────────────────────

NOISE_BUCKETS = ("alerts_pct", "affecting_no_alert_pct", "not_affecting_pct")


def noise_buckets(
    scores: np.ndarray,
    thresholds: np.ndarray,
    days: np.ndarray,
    clean_scores: np.ndarray,
) -> Dict[str, float]:
    """
    Partition events: Alert (score > T), threshold-affecting without alert
    (outside the clean day's [min, max]) and not affecting (inside it).
    """
    n = len(scores)
    if n == 0:
        return {k: 0.0 for k in NOISE_BUCKETS}
    lo = np.empty(n)
    hi = np.empty(n)
    for d in np.unique(days):
        mask = days == d
        lo[mask], hi[mask] = clean_scores[mask].min(), clean_scores[mask].max()
    alert = scores > thresholds
    affecting = ~alert & ((scores < lo) | (scores > hi))
    inside = ~alert & ~affecting
    return {
        "alerts_pct": 100.0 * alert.sum() / n,
        "affecting_no_alert_pct": 100.0 * affecting.sum() / n,
        "not_affecting_pct": 100.0 * inside.sum() / n,
    }


def _noise_run(detector: DetectorModel, trace: Trace, device: str, sigma: float, seed: int,
               clean_scores: np.ndarray, days: np.ndarray) -> Dict[str, Any]:
    if sigma == 0:
        scores = clean_scores
    else:
        perturbed = inject_noise(trace, NoiseConfig(device_id=device, sigma=sigma, seed=seed))
        scores, _ = score_trace(detector, perturbed)
    thresholds, _, _ = threshold_sequence(
        detector.threshold_cfg, detector.bootstrap_T, scores, days, detector.train_day_scores
    )
    return {"device": device, "sigma": sigma, **noise_buckets(scores, thresholds, days, clean_scores)}


def run_noise_robustness(
    detector: DetectorModel,
    trace: Trace,
    sigmas: Sequence[float],
    devices: Sequence[str],
    seed: int = 7,
) -> ExperimentReport:
    """
    Perturb one device at a time and bucket every event of the stream.
    A sigma of 0 is the unperturbed control.
    """
    if not devices:
        raise ArgusError("noise experiment needs at least one target device")
    clean_scores, _ = score_trace(detector, trace)
    days = detection_days(detector, trace)
    # one seed per device: across sigmas the draws scale the same standard normals
    jobs = [(device, s, seed + i) for i, device in enumerate(devices) for s in sigmas]
    per_device = Parallel(n_jobs=Config.threads())(
        delayed(_noise_run)(detector, trace, device, s, job_seed, clean_scores, days)
        for device, s, job_seed in jobs
    )

    frame = pd.DataFrame(per_device)
    summary = frame.groupby("sigma", sort=False)[list(NOISE_BUCKETS)].mean().reset_index()
    rows = summary.to_dict(orient="records")
    for row in rows:
        logger.info(
            f"Noise sigma={row['sigma']:g}: alerts={row['alerts_pct']:.3f}% "
            f"affecting={row['affecting_no_alert_pct']:.3f}% not={row['not_affecting_pct']:.3f}%"
        )
    return ExperimentReport(
        experiment="noise",
        seed=seed,
        rows=rows,
        config={"sigmas": list(sigmas), "devices": list(devices), "mu": 1.0, "samples_per_draw": 100},
        extra={"per_device": per_device},
    )


# ─── Reports ──────────────────────────────────────────────────


def report_stem(experiment: str, seed: int) -> str:
    return f"{experiment}-seed{seed}"


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def report_json(report: Union[ExperimentReport, MetricsReport]) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2, default=_json_default) + "\n"


def report_csv(report: ExperimentReport) -> str:
    frame = pd.DataFrame(report.rows)
    return frame.to_csv(index=False, na_rep=NA, lineterminator="\n")


def emit_report(
    report: ExperimentReport,
    formats: Sequence[str] = ("json", "csv"),
    out_dir: Union[str, Path, None] = None,
) -> List[Path]:
    """Write the report as JSON (full) and/or CSV (rows); returns the written paths."""
    unknown = set(formats) - {"json", "csv"}
    if unknown:
        raise ArgusError(f"unknown report formats: {sorted(unknown)}")
    out = Path(out_dir or Config.REPORT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    stem = report_stem(report.experiment, report.seed)
    written = []
    if "json" in formats:
        path = out / f"{stem}.json"
        path.write_text(report_json(report), encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        path = out / f"{stem}.csv"
        path.write_text(report_csv(report), encoding="utf-8")
        written.append(path)
    logger.info(f"Wrote {', '.join(p.name for p in written)} to {out}")
    return written
