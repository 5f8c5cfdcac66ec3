"""
Detection metrics: confusion counts, FPR / precision / recall / F1.

A zero denominator yields None, rendered as "NA" in reports.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import confusion_matrix

from ml.error_handling import EvaluationError

NA = "NA"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, predicted: Sequence[int], actual: Sequence[int]) -> "ConfusionCounts":
        """Positional join of predicted attack flags (1) with ground-truth labels."""
        if len(predicted) != len(actual):
            raise EvaluationError(f"{len(predicted)} verdicts but {len(actual)} labels")
        if len(actual) == 0:
            return cls()
        tn, fp, fn, tp = confusion_matrix(
            np.asarray(actual, dtype=int), np.asarray(predicted, dtype=int), labels=[0, 1]
        ).ravel()
        return cls(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn))

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


@dataclass
class MetricsReport:
    counts: ConfusionCounts
    fpr: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    scenarios: Dict[str, "MetricsReport"] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def row(self) -> Dict[str, Any]:
        """Flat tabular view (None kept; CSV writers render it as NA)."""
        return {
            **self.counts.to_dict(),
            "fpr": self.fpr,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "counts": self.counts.to_dict(),
            "fpr": na(self.fpr),
            "precision": na(self.precision),
            "recall": na(self.recall),
            "f1": na(self.f1),
            "scenarios": {k: v.to_dict() for k, v in sorted(self.scenarios.items())},
            "config": self.config,
            "seed": self.seed,
        }
        if self.extra:
            data["extra"] = self.extra
        return data


def na(value: Optional[float]) -> Any:
    return NA if value is None else value


def compute_metrics(counts: ConfusionCounts, config: Optional[Dict[str, Any]] = None, seed: Optional[int] = None) -> MetricsReport:
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(
        counts=counts,
        fpr=_ratio(counts.fp, counts.fp + counts.tn),
        precision=precision,
        recall=recall,
        f1=f1,
        config=dict(config or {}),
        seed=seed,
    )


def scenario_breakdown(
    predicted: Sequence[int],
    labels: Sequence[int],
    scenarios: Sequence[Optional[str]],
) -> Dict[str, MetricsReport]:
    """Per attack kind: that kind's labelled events plus every benign event."""
    kinds = sorted({s for s, y in zip(scenarios, labels) if s is not None and y == 1})
    out: Dict[str, MetricsReport] = {}
    for kind in kinds:
        keep = [i for i, (s, y) in enumerate(zip(scenarios, labels)) if y == 0 or s == kind]
        counts = ConfusionCounts.from_predictions([predicted[i] for i in keep], [labels[i] for i in keep])
        out[kind] = compute_metrics(counts)
    return out


def evaluate_predictions(
    predicted: Sequence[int],
    labels: Sequence[int],
    scenarios: Optional[Sequence[Optional[str]]] = None,
    config: Optional[Dict[str, Any]] = None,
    seed: Optional[int] = None,
) -> MetricsReport:
    report = compute_metrics(ConfusionCounts.from_predictions(predicted, labels), config, seed)
    if scenarios is not None:
        report.scenarios = scenario_breakdown(predicted, labels, scenarios)
    return report


def metrics_rows(reports: Dict[str, MetricsReport], key: str = "name") -> List[Dict[str, Any]]:
    return [{key: name, **report.row()} for name, report in reports.items()]
