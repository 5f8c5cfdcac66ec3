"""
Dynamic Classification Threshold

Per-day threshold candidate  C_d = max(E_d) + beta * (max(E_d) - min(E_d))
Momentum update              T_d = alpha * T_{d-1} + (1 - alpha) * C_d,  T_0 = C_0
An event is benign iff its anomaly score <= T.

Alternative static/heuristic strategies share the same tracker interface
so experiments can swap them over identical score streams.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ml.error_handling import ThresholdError, warn_once

logger = logging.getLogger(__name__)


class ThresholdStrategy(str, Enum):
    ARGUS = "argus"
    MEAN_OF_MAX = "mean-of-max"
    MEAN_PLUS_STD_PREV_DAY = "mean-std-prev-day"
    MAX_OF_PREV_DAYS = "max-prev-days"


class Decision(str, Enum):
    BENIGN = "benign"
    ATTACK = "attack"


@dataclass(frozen=True)
class ThresholdConfig:
    alpha: float = 0.2
    beta: float = 0.2
    strategy: ThresholdStrategy = ThresholdStrategy.ARGUS
    # when False, scores classified Attack are kept out of the day's E_d
    include_attack_scores: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ThresholdError(f"alpha must be in [0, 1] (got {self.alpha})")
        if self.beta < 0.0:
            raise ThresholdError(f"beta must be >= 0 (got {self.beta})")
        object.__setattr__(self, "strategy", ThresholdStrategy(self.strategy))

    @property
    def label(self) -> str:
        if self.strategy == ThresholdStrategy.ARGUS:
            return f"argus(alpha={self.alpha:g},beta={self.beta:g})"
        return self.strategy.value

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ThresholdConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ThresholdError(f"unknown threshold options: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def for_benchmark(cls, **overrides) -> "ThresholdConfig":
        """Benchmark default: scores already flagged Attack stay out of the next day's candidate."""
        return cls.from_dict({"include_attack_scores": False, **overrides})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "strategy": self.strategy.value,
            "include_attack_scores": self.include_attack_scores,
        }


# ─── Core math ────────────────────────────────────────────────


def threshold_candidate(day_scores: Sequence[float], beta: float) -> float:
    scores = np.asarray(day_scores, dtype=np.float64)
    if scores.size == 0:
        raise ThresholdError("threshold candidate needs at least one score")
    hi, lo = float(scores.max()), float(scores.min())
    return hi + beta * (hi - lo)


def update_threshold(prev_T: Optional[float], C: float, alpha: float) -> float:
    if prev_T is None:
        return float(C)
    return alpha * prev_T + (1.0 - alpha) * C


def classify(score: float, T: float) -> Decision:
    return Decision.BENIGN if score <= T else Decision.ATTACK


def alt_threshold(
    strategy: ThresholdStrategy,
    training_day_scores: Sequence[Sequence[float]] = (),
    prev_day_scores: Optional[Sequence[float]] = None,
) -> float:
    """
    MeanOfMax: mean over training days of each day's max.
    MeanPlusStdPrevDay: mean + population std of the previous day's scores.
    MaxOfPrevDays: max over every previous day's scores.
    """
    strategy = ThresholdStrategy(strategy)
    if strategy == ThresholdStrategy.MEAN_OF_MAX:
        maxima = [max(day) for day in training_day_scores if len(day)]
        if not maxima:
            raise ThresholdError("mean-of-max needs nonempty training days")
        return float(np.mean(maxima))
    if strategy == ThresholdStrategy.MEAN_PLUS_STD_PREV_DAY:
        prev = np.asarray(prev_day_scores if prev_day_scores is not None else [], dtype=np.float64)
        if prev.size == 0:
            raise ThresholdError("mean+std needs a nonempty previous day")
        return float(prev.mean() + prev.std())
    if strategy == ThresholdStrategy.MAX_OF_PREV_DAYS:
        flat = [s for day in training_day_scores for s in day]
        if prev_day_scores is not None:
            flat.extend(prev_day_scores)
        if not flat:
            raise ThresholdError("max-of-previous-days needs at least one score")
        return float(max(flat))
    raise ThresholdError(f"{strategy.value} is not an alternative strategy")


# ─── Streaming tracker ────────────────────────────────────────


@dataclass
class ThresholdState:
    current: float
    day: int = 0
    history: List[Tuple[Optional[float], float]] = field(default_factory=list)  # (C_d, T_d) per closed day
    day_scores: List[float] = field(default_factory=list)  # E_d accumulator
    running_max: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "current": self.current,
            "day": self.day,
            "history": [list(pair) for pair in self.history],
            "day_scores": list(self.day_scores),
            "running_max": self.running_max,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ThresholdState":
        try:
            return cls(
                current=float(data["current"]),
                day=int(data["day"]),
                history=[(c if c is None else float(c), float(t)) for c, t in data.get("history", [])],
                day_scores=[float(s) for s in data.get("day_scores", [])],
                running_max=data.get("running_max"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ThresholdError(f"unreadable threshold state: {e}")


class DynamicThreshold:
    """
    Day-by-day threshold tracker for one detection stream.

    `observe` feeds the current day's scores, `roll_day` closes days and
    moves T. Only completed days influence T.
    """

    def __init__(
        self,
        cfg: ThresholdConfig,
        bootstrap_T: float,
        training_day_scores: Sequence[Sequence[float]] = (),
        state: Optional[ThresholdState] = None,
    ):
        self.cfg = cfg
        if state is not None:
            self.state = state
            return
        if not np.isfinite(bootstrap_T) or bootstrap_T < 0:
            raise ThresholdError(f"bootstrap threshold must be finite and >= 0 (got {bootstrap_T})")

        strategy = cfg.strategy
        running_max = None
        if strategy == ThresholdStrategy.ARGUS:
            initial = float(bootstrap_T)
        elif strategy == ThresholdStrategy.MEAN_OF_MAX:
            initial = alt_threshold(strategy, training_day_scores)
        elif strategy == ThresholdStrategy.MEAN_PLUS_STD_PREV_DAY:
            days = [d for d in training_day_scores if len(d)]
            if not days:
                raise ThresholdError("mean+std needs training-day scores")
            initial = alt_threshold(strategy, prev_day_scores=days[-1])
        else:
            initial = alt_threshold(strategy, training_day_scores)
            running_max = initial
        self.state = ThresholdState(current=initial, running_max=running_max)

    @property
    def current(self) -> float:
        return self.state.current

    @property
    def day(self) -> int:
        return self.state.day

    @property
    def history(self) -> List[Tuple[Optional[float], float]]:
        return list(self.state.history)

    def decide(self, score: float) -> Decision:
        return classify(score, self.state.current)

    def observe(self, score: float, decision: Optional[Decision] = None) -> None:
        if decision == Decision.ATTACK and not self.cfg.include_attack_scores:
            return
        self.state.day_scores.append(float(score))

    def roll_day(self, new_day: int) -> None:
        """Close every day before new_day, updating T once per closed day."""
        while self.state.day < new_day:
            self._close_day()

    def _close_day(self) -> None:
        st = self.state
        scores = st.day_scores
        candidate: Optional[float] = None
        strategy = self.cfg.strategy

        if strategy == ThresholdStrategy.ARGUS:
            if scores:
                candidate = threshold_candidate(scores, self.cfg.beta)
                st.current = update_threshold(st.current, candidate, self.cfg.alpha)
            else:
                warn_once("empty-day", f"day {st.day} had no scores; carrying threshold {st.current:.6g} forward")
        elif strategy == ThresholdStrategy.MEAN_PLUS_STD_PREV_DAY:
            if scores:
                st.current = alt_threshold(strategy, prev_day_scores=scores)
        elif strategy == ThresholdStrategy.MAX_OF_PREV_DAYS:
            if scores:
                st.running_max = max(st.running_max, max(scores))
                st.current = st.running_max

        st.history.append((candidate, st.current))
        logger.info(
            f"Day {st.day} closed ({len(scores)} scores): "
            f"C={'NA' if candidate is None else f'{candidate:.6g}'} next T={st.current:.6g}"
        )
        st.day += 1
        st.day_scores = []


def threshold_sequence(
    cfg: ThresholdConfig,
    bootstrap_T: float,
    scores: Sequence[float],
    days: Sequence[int],
    training_day_scores: Sequence[Sequence[float]] = (),
) -> Tuple[np.ndarray, List[Decision], List[Tuple[Optional[float], float]]]:
    """
    Replay a pre-computed score stream. `days` are day indices relative to the
    first detection day. Returns per-event thresholds, decisions and the
    closed-day (C_d, T_d) history.
    """
    if len(scores) != len(days):
        raise ThresholdError(f"{len(scores)} scores but {len(days)} day indices")
    tracker = DynamicThreshold(cfg, bootstrap_T, training_day_scores)
    thresholds = np.zeros(len(scores))
    decisions: List[Decision] = []
    for i, (score, day) in enumerate(zip(scores, days)):
        tracker.roll_day(int(day))
        thresholds[i] = tracker.current
        decision = tracker.decide(score)
        decisions.append(decision)
        tracker.observe(score, decision)
    if len(days):
        tracker.roll_day(int(days[-1]) + 1)
    return thresholds, decisions, tracker.history


def total_variation(series: Sequence[Optional[float]]) -> float:
    """Sum of absolute successive differences, skipping undefined entries."""
    values = [v for v in series if v is not None]
    return float(np.sum(np.abs(np.diff(values)))) if len(values) > 1 else 0.0
