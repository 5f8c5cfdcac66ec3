"""
Detector
Fit on benign training data, stream per-event verdicts, evaluate on labelled traces.
"""

import io
import json
import logging
import zipfile
from collections import deque
from dataclasses import dataclass, replace
from datetime import date
from typing import Any, Dict, Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np

from ml.error_handling import (
    ArgusError,
    CompatibilityError,
    EvaluationError,
    ModelFormatError,
    OutOfOrderError,
    TrainingError,
)
from ml.metrics import MetricsReport, evaluate_predictions
from ml.nn import (
    AutoencoderModel,
    TrainConfig,
    TrainReport,
    chronological_split,
    read_model_entries,
    score_window,
    score_windows,
    train_autoencoder,
    write_model_entries,
    zip_write,
)
from ml.preprocess import (
    EventChain,
    SnapshotBuilder,
    StateMapCatalog,
    WindowMode,
    build_event_chain,
    build_windows,
    fit_state_maps,
    pad_front,
    sliding_windows_padded,
)
from ml.threshold import (
    Decision,
    DynamicThreshold,
    ThresholdConfig,
    ThresholdState,
    classify,
    threshold_candidate,
)
from ml.trace import (
    Origin,
    StatusUpdate,
    Trace,
    day_index,
    format_timestamp,
    local_date,
    parse_timestamp,
)

logger = logging.getLogger(__name__)

DETECTOR_FORMAT_VERSION = 1
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class DetectorModel:
    catalog: StateMapCatalog
    model: AutoencoderModel
    threshold_cfg: ThresholdConfig
    bootstrap_T: float
    validation_scores: Tuple[float, ...] = ()
    train_day_scores: Tuple[Tuple[float, ...], ...] = ()
    context_depth: int = 5
    tz: str = "UTC"
    # streaming only: whether Attack-classified events update the forward-filled state
    update_state_on_attack: bool = True
    # last training snapshot; detection continues the home's state from here instead of all-S_0
    initial_values: Optional[Tuple[float, ...]] = None
    train_report: Optional[TrainReport] = None

    def __post_init__(self):
        if self.catalog.n_devices != self.model.n_devices:
            raise CompatibilityError(
                f"catalog has {self.catalog.n_devices} devices, model expects {self.model.n_devices}"
            )
        if self.initial_values is not None and len(self.initial_values) != self.catalog.n_devices:
            raise CompatibilityError(
                f"initial snapshot has {len(self.initial_values)} entries, catalog has {self.catalog.n_devices}"
            )
        if not np.isfinite(self.bootstrap_T):
            raise ArgusError("bootstrap threshold must be finite")
        if self.context_depth < 0:
            raise ArgusError(f"context_depth must be >= 0 (got {self.context_depth})")

    @property
    def l(self) -> int:
        return self.model.l


def with_threshold(detector: DetectorModel, cfg: ThresholdConfig) -> DetectorModel:
    """Swap the threshold configuration, recomputing the bootstrap T for the new beta."""
    return replace(
        detector,
        threshold_cfg=cfg,
        bootstrap_T=threshold_candidate(detector.validation_scores, cfg.beta),
    )


# ─── Fitting ──────────────────────────────────────────────────


def chain_scores(model: AutoencoderModel, chain: EventChain) -> np.ndarray:
    """Per-event scores over warm-up-padded sliding windows."""
    return score_windows(model, sliding_windows_padded(chain, model.l).windows)


def _group_by_day(scores: np.ndarray, days: np.ndarray) -> Tuple[Tuple[float, ...], ...]:
    if len(days) == 0:
        return ()
    return tuple(tuple(float(s) for s in scores[days == d]) for d in range(int(days[-1]) + 1))


def fit(
    train: Trace,
    train_cfg: TrainConfig,
    thr_cfg: ThresholdConfig,
    l: int = 16,
    context_depth: int = 5,
) -> DetectorModel:
    """
    Fit state maps, train the autoencoder on disjoint (or strided) windows and bootstrap
    the threshold from the validation span's per-event scores.
    """
    catalog = fit_state_maps(train)
    chain = build_event_chain(train, catalog)
    if train_cfg.window_stride is None:
        step, windows = l, build_windows(chain, l, WindowMode.DISJOINT)
    else:
        step = train_cfg.window_stride
        windows = build_windows(chain, l, WindowMode.SLIDING, stride=step)
    if len(windows) < 1:
        raise TrainingError(f"training trace has {len(chain)} events, fewer than one window of {l}")

    model, report = train_autoencoder(windows, train_cfg)
    scores = chain_scores(model, chain)

    # validation events start where the first held-out window starts
    n_train, n_val = chronological_split(len(windows), train_cfg.validation_fraction)
    validation = scores[n_train * step:] if n_val else scores
    bootstrap_T = threshold_candidate(validation, thr_cfg.beta)
    logger.info(f"Bootstrap threshold {bootstrap_T:.6g} from {len(validation)} validation scores (beta={thr_cfg.beta})")

    return DetectorModel(
        catalog=catalog,
        model=model,
        threshold_cfg=thr_cfg,
        bootstrap_T=bootstrap_T,
        validation_scores=tuple(float(s) for s in validation),
        train_day_scores=_group_by_day(scores, day_index(train)),
        context_depth=context_depth,
        tz=train.tz,
        initial_values=tuple(float(v) for v in chain.values[-1]),
        train_report=report,
    )


# ─── Streaming detection ──────────────────────────────────────


@dataclass(frozen=True)
class Verdict:
    index: int
    update: StatusUpdate
    score: float
    threshold: float
    decision: Decision
    provisional: bool = False
    alert_context: Tuple[StatusUpdate, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "i": self.index,
            "t": format_timestamp(self.update.timestamp),
            "device": self.update.device_id,
            "state": self.update.state,
            "score": self.score,
            "threshold": self.threshold,
            "decision": self.decision.value,
            "provisional": self.provisional,
            "context": [_update_to_dict(u) for u in self.alert_context],
        }


def _update_to_dict(u: StatusUpdate) -> Dict[str, Any]:
    data = {"t": format_timestamp(u.timestamp), "id": u.device_id, "state": u.state, "origin": u.origin.value}
    if u.perturbation:
        data["noise"] = u.perturbation
    return data


def _update_from_dict(data: Dict[str, Any]) -> StatusUpdate:
    return StatusUpdate(
        timestamp=parse_timestamp(data["t"]),
        device_id=data["id"],
        state=data["state"],
        origin=Origin(data.get("origin", "observed")),
        perturbation=float(data.get("noise", 0.0)),
    )


def verdict_line(verdict: Verdict) -> str:
    return json.dumps(verdict.to_dict(), separators=(",", ":"))


class StreamDetector:
    """
    Single-consumer detection state: forward-filled snapshot, rolling window
    of the last l snapshots, the last k updates and the day threshold tracker.
    """

    def __init__(self, detector: DetectorModel, checkpoint: Optional[Dict[str, Any]] = None):
        self.detector = detector
        self.builder = SnapshotBuilder(detector.catalog, detector.initial_values)
        self.window: deque = deque(maxlen=detector.l)
        self.recent: deque = deque(maxlen=detector.context_depth)
        self.threshold = DynamicThreshold(
            detector.threshold_cfg, detector.bootstrap_T, detector.train_day_scores
        )
        self.index = 0
        self.last_timestamp = None
        self.base_date: Optional[date] = None
        if checkpoint is not None:
            self._restore(checkpoint)

    def process(self, update: StatusUpdate) -> Verdict:
        if self.last_timestamp is not None and update.timestamp < self.last_timestamp:
            raise OutOfOrderError(
                self.index,
                f"timestamp {format_timestamp(update.timestamp)} precedes {format_timestamp(self.last_timestamp)}",
            )
        local = local_date(update.timestamp, self.detector.tz)
        previous = self.builder.values.copy()
        # raises on unknown devices or bad states before anything below moves
        row, _ = self.builder.apply(update)
        if self.base_date is None:
            self.base_date = local
        self.threshold.roll_day((local - self.base_date).days)

        rows = np.vstack(list(self.window) + [row]) if self.window else row[None]
        provisional = rows.shape[0] < self.detector.l
        score = score_window(self.detector.model, pad_front(rows, self.detector.l))

        T = self.threshold.current
        decision = classify(score, T)
        self.threshold.observe(score, decision)
        context = tuple(self.recent) if decision == Decision.ATTACK else ()

        if decision == Decision.ATTACK and not self.detector.update_state_on_attack:
            self.builder.values = previous
        else:
            self.window.append(row)
        self.recent.append(update)

        verdict = Verdict(self.index, update, score, T, decision, provisional, context)
        self.index += 1
        self.last_timestamp = update.timestamp
        return verdict

    # ─── Checkpointing ───

    def checkpoint(self) -> Dict[str, Any]:
        return {
            "version": CHECKPOINT_VERSION,
            "catalog_hash": self.detector.catalog.catalog_hash,
            "index": self.index,
            "last_t": format_timestamp(self.last_timestamp) if self.last_timestamp else None,
            "base_date": self.base_date.isoformat() if self.base_date else None,
            "threshold": self.threshold.state.to_dict(),
            "values": self.builder.values.tolist(),
            "window": [r.tolist() for r in self.window],
            "recent": [_update_to_dict(u) for u in self.recent],
        }

    def _restore(self, data: Dict[str, Any]) -> None:
        if data.get("version") != CHECKPOINT_VERSION:
            raise ModelFormatError(f"unsupported checkpoint version {data.get('version')!r}")
        if data.get("catalog_hash") != self.detector.catalog.catalog_hash:
            raise CompatibilityError("checkpoint was written for a different state-map catalog")
        try:
            self.index = int(data["index"])
            self.last_timestamp = parse_timestamp(data["last_t"]) if data.get("last_t") else None
            self.base_date = date.fromisoformat(data["base_date"]) if data.get("base_date") else None
            self.threshold = DynamicThreshold(
                self.detector.threshold_cfg, self.detector.bootstrap_T,
                state=ThresholdState.from_dict(data["threshold"]),
            )
            self.builder = SnapshotBuilder(self.detector.catalog, data["values"])
            for r in data["window"]:
                self.window.append(np.asarray(r, dtype=np.float64))
            for u in data["recent"]:
                self.recent.append(_update_from_dict(u))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ArgusError):
                raise
            raise ModelFormatError(f"unreadable checkpoint: {e}")


def detect_stream(
    detector: DetectorModel,
    events: Iterable[StatusUpdate],
    stream: Optional[StreamDetector] = None,
) -> Iterator[Verdict]:
    """One verdict per event, yielded before the next event is consumed."""
    stream = stream or StreamDetector(detector)
    for update in events:
        yield stream.process(update)


def score_trace(detector: DetectorModel, trace: Trace) -> Tuple[np.ndarray, np.ndarray]:
    """Batch per-event scores and provisional flags; matches the streaming scores."""
    chain = build_event_chain(trace, detector.catalog, detector.initial_values)
    batch = sliding_windows_padded(chain, detector.l)
    return score_windows(detector.model, batch.windows), batch.provisional


def detection_days(detector: DetectorModel, trace: Trace) -> np.ndarray:
    """Day index per event counted from the trace's first local day, in the detector's timezone."""
    return day_index(replace(trace, tz=detector.tz))


# ─── Evaluation ───────────────────────────────────────────────


def evaluate(detector: DetectorModel, labeled: Trace, seed: Optional[int] = None) -> MetricsReport:
    """
    Stream the labelled trace through a fresh detector and join verdicts with
    labels by position. Adds a per-scenario breakdown when tags exist and the
    per-day (C_d, T_d) sequence.
    """
    if labeled.labels is None:
        raise EvaluationError("evaluation needs a labelled trace")
    stream = StreamDetector(detector)
    verdicts = list(detect_stream(detector, labeled.updates, stream))
    stream.threshold.roll_day(stream.threshold.day + 1)
    return verdict_report(detector, verdicts, labeled, stream.threshold.history, seed)


def verdict_report(
    detector: DetectorModel,
    verdicts: Sequence[Verdict],
    labeled: Trace,
    history: Sequence[Tuple[Optional[float], float]] = (),
    seed: Optional[int] = None,
) -> MetricsReport:
    labels = labeled.label_list()
    if len(verdicts) != len(labels):
        raise EvaluationError(f"{len(verdicts)} verdicts but {len(labels)} labels")
    predicted = [int(v.decision == Decision.ATTACK) for v in verdicts]
    report = evaluate_predictions(
        predicted,
        labels,
        labeled.scenarios,
        config={"threshold": detector.threshold_cfg.to_dict(), "bootstrap_T": detector.bootstrap_T},
        seed=seed,
    )
    report.extra["threshold_history"] = [
        {"day": d, "candidate": c if c is not None else "NA", "threshold": t}
        for d, (c, t) in enumerate(history)
    ]
    return report


# ─── Container ────────────────────────────────────────────────


def detector_meta(detector: DetectorModel) -> Dict[str, Any]:
    return {
        "format_version": DETECTOR_FORMAT_VERSION,
        "threshold": detector.threshold_cfg.to_dict(),
        "bootstrap_T": detector.bootstrap_T,
        "validation_scores": list(detector.validation_scores),
        "train_day_scores": [list(d) for d in detector.train_day_scores],
        "context_depth": detector.context_depth,
        "tz": detector.tz,
        "update_state_on_attack": detector.update_state_on_attack,
        "initial_values": list(detector.initial_values) if detector.initial_values is not None else None,
    }


def save_detector(detector: DetectorModel) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as archive:
        write_model_entries(archive, detector.model, detector.catalog.catalog_hash)
        zip_write(archive, "catalog.json", detector.catalog.to_json().encode("utf-8"))
        zip_write(archive, "detector.json", json.dumps(detector_meta(detector), sort_keys=True, indent=2).encode("utf-8"))
    return buf.getvalue()


def load_detector(data: bytes, expected_catalog: Optional[StateMapCatalog] = None) -> DetectorModel:
    """
    Read a detector container. The embedded catalog must hash to the value the
    model was saved with; `expected_catalog`, when given, must match too.
    """
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as archive:
            model, stored_hash = read_model_entries(archive)
            catalog = StateMapCatalog.from_json(archive.read("catalog.json"))
            meta = json.loads(archive.read("detector.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, EOFError) as e:
        raise ModelFormatError(f"not a detector container: {e}")

    if meta.get("format_version") != DETECTOR_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported detector format version {meta.get('format_version')!r}")
    if stored_hash != catalog.catalog_hash:
        raise CompatibilityError("model catalog hash does not match the embedded catalog")
    if expected_catalog is not None and expected_catalog.catalog_hash != catalog.catalog_hash:
        raise CompatibilityError("detector was trained with a different state-map catalog")

    try:
        return DetectorModel(
            catalog=catalog,
            model=model,
            threshold_cfg=ThresholdConfig.from_dict(meta["threshold"]),
            bootstrap_T=float(meta["bootstrap_T"]),
            validation_scores=tuple(meta["validation_scores"]),
            train_day_scores=tuple(tuple(d) for d in meta["train_day_scores"]),
            context_depth=int(meta["context_depth"]),
            tz=meta["tz"],
            update_state_on_attack=bool(meta.get("update_state_on_attack", True)),
            initial_values=tuple(meta["initial_values"]) if meta.get("initial_values") is not None else None,
        )
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f"incomplete detector metadata: {e}")
