"""
Device Event Traces

Domain types for smart-home status updates, the canonical JSON-lines trace
format, validation, calendar-day splitting and an adapter for
Home-Assistant style state-history exports.

Canonical format (UTF-8, one JSON object per line):
    {"rec":"meta","tz":"Europe/Berlin","version":1,"seed":7}
    {"rec":"device","id":"light.desk","kind":"nominal"}
    {"rec":"update","t":"2024-01-01T08:00:00.000Z","id":"light.desk","state":"on","origin":"observed","label":0}
"""

import io
import json
import math
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd

from ml.error_handling import (
    ArgusError,
    StateTypeError,
    TraceFormatError,
    TraceSpanError,
    UnknownDeviceError,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MISSING_STATES = {"unavailable", "unknown", "none", "nan", ""}

State = Union[str, float, None]


class DeviceKind(str, Enum):
    NOMINAL = "nominal"
    CONTINUOUS = "continuous"


class Origin(str, Enum):
    OBSERVED = "observed"
    INJECTED = "injected"


@dataclass(frozen=True)
class DeviceDescriptor:
    """A monitored device or sensor"""
    device_id: str
    kind: DeviceKind
    display_name: Optional[str] = None


@dataclass(frozen=True)
class StatusUpdate:
    """
    One reported state change.

    `state` is a label for nominal devices, a float for continuous ones, and
    None for a missing/unavailable reading. `perturbation` is an additive
    offset on the mapped value (noise channel); it is 0.0 for real data.
    """
    timestamp: datetime
    device_id: str
    state: State
    origin: Origin = Origin.OBSERVED
    perturbation: float = 0.0


@dataclass(frozen=True)
class Trace:
    devices: Tuple[DeviceDescriptor, ...]
    updates: Tuple[StatusUpdate, ...]
    labels: Optional[Tuple[int, ...]] = None
    scenarios: Optional[Tuple[Optional[str], ...]] = None
    tz: str = "UTC"
    # generator or attack seed recorded in the meta line
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.updates)

    @property
    def device_ids(self) -> List[str]:
        return [d.device_id for d in self.devices]

    def device_map(self) -> Dict[str, DeviceDescriptor]:
        return {d.device_id: d for d in self.devices}

    def label_list(self) -> List[int]:
        """Labels, defaulting to all-benign when the trace carries none."""
        return list(self.labels) if self.labels is not None else [0] * len(self.updates)

    def scenario_list(self) -> List[Optional[str]]:
        return list(self.scenarios) if self.scenarios is not None else [None] * len(self.updates)

    def with_updates(
        self,
        updates: Sequence[StatusUpdate],
        labels: Optional[Sequence[int]] = None,
        scenarios: Optional[Sequence[Optional[str]]] = None,
    ) -> "Trace":
        """Same catalog and timezone, new update sequence."""
        return replace(
            self,
            updates=tuple(updates),
            labels=tuple(labels) if labels is not None else None,
            scenarios=tuple(scenarios) if scenarios is not None else None,
        )


# ─── Timestamps & timezones ───────────────────────────────────


def resolve_tz(name: str):
    """Named zone ('Europe/Berlin'), 'UTC', or a fixed offset ('+02:00', 'UTC-05:30')."""
    raw = name.strip()
    if raw.upper() in ("UTC", "Z"):
        return timezone.utc
    offset = raw[3:] if raw.upper().startswith("UTC") else raw
    if offset[:1] in ("+", "-"):
        sign = 1 if offset[0] == "+" else -1
        hours, _, minutes = offset[1:].partition(":")
        try:
            delta = timedelta(hours=int(hours), minutes=int(minutes or 0))
        except ValueError:
            raise ArgusError(f"invalid timezone offset '{name}'")
        return timezone(sign * delta)
    try:
        return ZoneInfo(raw)
    except Exception:
        raise ArgusError(f"unknown timezone '{name}'")


def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    """UTC ISO-8601 with a Z suffix; milliseconds unless the value needs microseconds."""
    ts = ts.astimezone(timezone.utc)
    base = ts.strftime("%Y-%m-%dT%H:%M:%S")
    if ts.microsecond % 1000 == 0:
        return f"{base}.{ts.microsecond // 1000:03d}Z"
    return f"{base}.{ts.microsecond:06d}Z"


def day_index(trace: Trace) -> np.ndarray:
    """
    Calendar-day index of every update in the trace's timezone, counted from
    the local day of the first update. Days are midnight-to-midnight, half-open.
    """
    if not trace.updates:
        return np.zeros(0, dtype=np.int64)
    stamps = pd.DatetimeIndex([u.timestamp for u in trace.updates]).tz_convert(resolve_tz(trace.tz))
    midnights = stamps.normalize().tz_localize(None)
    return np.asarray((midnights - midnights[0]).days, dtype=np.int64)


def local_date(ts: datetime, tz: str):
    return pd.Timestamp(ts).tz_convert(resolve_tz(tz)).date()


# ─── State checks ─────────────────────────────────────────────


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def check_state(kind: DeviceKind, state: Any) -> Optional[str]:
    """Return a problem description, or None when the state fits the kind."""
    if state is None:
        return None
    if kind == DeviceKind.NOMINAL:
        if not isinstance(state, str):
            return f"nominal device carries non-label state {state!r}"
        return None
    if not _is_number(state):
        return f"continuous device carries non-numeric state {state!r}"
    if not math.isfinite(float(state)):
        return f"continuous device carries non-finite state {state!r}"
    return None


# ─── Parsing ──────────────────────────────────────────────────


def _iter_lines(source: Union[bytes, str, Iterable]) -> Iterable[str]:
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        return source.splitlines()
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return data.splitlines()
    return (line.decode("utf-8") if isinstance(line, bytes) else line for line in source)


def parse_trace(source: Union[bytes, str, Iterable]) -> Trace:
    """
    Parse a canonical trace stream.

    Updates are sorted by timestamp with ties kept in input order.
    Raises TraceFormatError (with line number) on malformed records,
    UnknownDeviceError / StateTypeError on catalog violations.
    """
    tz = "UTC"
    seed: Optional[int] = None
    devices: List[DeviceDescriptor] = []
    kinds: Dict[str, DeviceKind] = {}
    rows: List[Tuple[int, StatusUpdate, Optional[int], Optional[str]]] = []

    for line_no, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise TraceFormatError(line_no, f"invalid JSON: {e.msg}")
        if not isinstance(rec, dict) or "rec" not in rec:
            raise TraceFormatError(line_no, "record must be an object with a 'rec' field")

        kind = rec["rec"]
        if kind == "meta":
            version = rec.get("version", FORMAT_VERSION)
            if version != FORMAT_VERSION:
                raise TraceFormatError(line_no, f"unsupported trace version {version}")
            tz = rec.get("tz", tz)
            resolve_tz(tz)
            seed = rec.get("seed")
            if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
                raise TraceFormatError(line_no, f"seed must be an integer, got {seed!r}")
        elif kind == "device":
            device_id = rec.get("id")
            if not isinstance(device_id, str) or not device_id:
                raise TraceFormatError(line_no, "device record needs a nonempty 'id'")
            if device_id in kinds:
                raise TraceFormatError(line_no, f"duplicate device '{device_id}'")
            try:
                dev_kind = DeviceKind(rec.get("kind"))
            except ValueError:
                raise TraceFormatError(line_no, f"invalid device kind {rec.get('kind')!r}")
            kinds[device_id] = dev_kind
            devices.append(DeviceDescriptor(device_id, dev_kind, rec.get("name")))
        elif kind == "update":
            rows.append((line_no, *_parse_update(line_no, rec)))
        else:
            raise TraceFormatError(line_no, f"unknown record type {kind!r}")

    for line_no, update, _, _ in rows:
        if update.device_id not in kinds:
            raise UnknownDeviceError(update.device_id, f"line {line_no}")
        problem = check_state(kinds[update.device_id], update.state)
        if problem:
            raise StateTypeError(f"line {line_no}: {problem} ('{update.device_id}')")

    labelled = [label is not None for _, _, label, _ in rows]
    if any(labelled) and not all(labelled):
        first = rows[labelled.index(False)][0] if not all(labelled) else 0
        raise TraceFormatError(first, "labels must be present on all updates or none")

    order = sorted(range(len(rows)), key=lambda i: rows[i][1].timestamp)
    updates = tuple(rows[i][1] for i in order)
    labels = tuple(rows[i][2] for i in order) if rows and all(labelled) else None
    scenario_values = [rows[i][3] for i in order]
    scenarios = tuple(scenario_values) if any(s is not None for s in scenario_values) else None

    return Trace(devices=tuple(devices), updates=updates, labels=labels, scenarios=scenarios, tz=tz, seed=seed)


def _parse_update(line_no: int, rec: Dict[str, Any]) -> Tuple[StatusUpdate, Optional[int], Optional[str]]:
    for key in ("t", "id"):
        if key not in rec:
            raise TraceFormatError(line_no, f"update record missing '{key}'")
    if "state" not in rec:
        raise TraceFormatError(line_no, "update record missing 'state'")
    try:
        ts = parse_timestamp(rec["t"])
    except (TypeError, ValueError):
        raise TraceFormatError(line_no, f"invalid timestamp {rec['t']!r}")
    try:
        origin = Origin(rec.get("origin", Origin.OBSERVED.value))
    except ValueError:
        raise TraceFormatError(line_no, f"invalid origin {rec.get('origin')!r}")

    state = rec["state"]
    if _is_number(state):
        state = float(state)
    elif state is not None and not isinstance(state, str):
        raise TraceFormatError(line_no, f"state must be a label, a number or null, got {state!r}")

    label = rec.get("label")
    if label is not None and (isinstance(label, bool) or label not in (0, 1)):
        raise TraceFormatError(line_no, f"label must be 0 or 1, got {label!r}")
    noise = rec.get("noise", 0.0)
    if not _is_number(noise) or not math.isfinite(noise):
        raise TraceFormatError(line_no, f"invalid noise value {noise!r}")

    update = StatusUpdate(
        timestamp=ts,
        device_id=rec["id"],
        state=state,
        origin=origin,
        perturbation=float(noise),
    )
    return update, label, rec.get("scenario")


def read_trace(path: Union[str, Path]) -> Trace:
    with open(path, "rb") as f:
        return parse_trace(f.read())


# ─── Writing ──────────────────────────────────────────────────


def _dumps(obj: Dict[str, Any]) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def write_trace(trace: Trace) -> bytes:
    """Serialize a trace; parse_trace(write_trace(t)) == t for valid traces."""
    meta = {"rec": "meta", "tz": trace.tz, "version": FORMAT_VERSION}
    if trace.seed is not None:
        meta["seed"] = trace.seed
    lines = [_dumps(meta)]
    for dev in trace.devices:
        rec = {"rec": "device", "id": dev.device_id, "kind": dev.kind.value}
        if dev.display_name is not None:
            rec["name"] = dev.display_name
        lines.append(_dumps(rec))

    labels = trace.labels
    scenarios = trace.scenarios
    for i, u in enumerate(trace.updates):
        rec = {
            "rec": "update",
            "t": format_timestamp(u.timestamp),
            "id": u.device_id,
            "state": u.state,
            "origin": u.origin.value,
        }
        if labels is not None:
            rec["label"] = int(labels[i])
        if scenarios is not None and scenarios[i] is not None:
            rec["scenario"] = scenarios[i]
        if u.perturbation != 0.0:
            rec["noise"] = u.perturbation
        lines.append(_dumps(rec))
    return ("\n".join(lines) + "\n").encode("utf-8")


def save_trace(trace: Trace, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(write_trace(trace))


# ─── Splitting ────────────────────────────────────────────────


def _slice(trace: Trace, idx: np.ndarray) -> Trace:
    updates = [trace.updates[i] for i in idx]
    labels = [trace.labels[i] for i in idx] if trace.labels is not None else None
    scenarios = [trace.scenarios[i] for i in idx] if trace.scenarios is not None else None
    return trace.with_updates(updates, labels, scenarios)


def split_by_days(trace: Trace, train_days: int) -> Tuple[Trace, Trace]:
    """
    Split into (first train_days calendar days, remainder). Both halves keep
    the full device catalog; train ++ rest reproduces the input order.
    """
    if train_days < 1:
        raise ArgusError(f"train_days must be >= 1 (got {train_days})")
    if not trace.updates:
        raise TraceSpanError("cannot split an empty trace")
    days = day_index(trace)
    span = int(days[-1]) + 1
    if span < train_days:
        raise TraceSpanError(f"trace spans {span} day(s), fewer than train_days={train_days}")
    positions = np.arange(len(days))
    return _slice(trace, positions[days < train_days]), _slice(trace, positions[days >= train_days])


def select_days(trace: Trace, first_day: int, last_day: int) -> Trace:
    """Updates whose day index lies in [first_day, last_day)."""
    days = day_index(trace)
    positions = np.arange(len(days))
    return _slice(trace, positions[(days >= first_day) & (days < last_day)])


# ─── Validation ───────────────────────────────────────────────


class IssueKind(str, Enum):
    UNSORTED = "Unsorted"
    UNKNOWN_DEVICE = "UnknownDevice"
    TYPE_MISMATCH = "TypeMismatch"
    DUPLICATE_DEVICE = "DuplicateDevice"
    LABEL_MISMATCH = "LabelMismatch"


@dataclass(frozen=True)
class TraceIssue:
    kind: IssueKind
    index: int
    message: str = ""


def validate_trace(trace: Trace) -> List[TraceIssue]:
    """Report invariant violations without mutating the trace. Empty iff valid."""
    issues: List[TraceIssue] = []
    kinds: Dict[str, DeviceKind] = {}
    for pos, dev in enumerate(trace.devices):
        if not dev.device_id or dev.device_id in kinds:
            issues.append(TraceIssue(IssueKind.DUPLICATE_DEVICE, pos, f"device '{dev.device_id}'"))
        kinds[dev.device_id] = dev.kind

    for i, u in enumerate(trace.updates):
        if u.device_id not in kinds:
            issues.append(TraceIssue(IssueKind.UNKNOWN_DEVICE, i, f"device '{u.device_id}'"))
            continue
        problem = check_state(kinds[u.device_id], u.state)
        if problem:
            issues.append(TraceIssue(IssueKind.TYPE_MISMATCH, i, problem))

    stamps = [u.timestamp for u in trace.updates]
    if any(stamps[i] > stamps[i + 1] for i in range(len(stamps) - 1)):
        # one issue per inverted pair (i < j, t_i > t_j)
        for j in range(len(stamps)):
            for i in range(j):
                if stamps[i] > stamps[j]:
                    issues.append(TraceIssue(IssueKind.UNSORTED, j, f"update {i} is later than update {j}"))

    for name, values in (("labels", trace.labels), ("scenarios", trace.scenarios)):
        if values is not None and len(values) != len(trace.updates):
            issues.append(TraceIssue(
                IssueKind.LABEL_MISMATCH, -1,
                f"{name} has {len(values)} entries for {len(trace.updates)} updates",
            ))
    return issues


# ─── Dataset adapter ──────────────────────────────────────────

RecordMapper = Callable[[Dict[str, Any]], Optional[Tuple[str, Any, str]]]


def home_assistant_mapper(record: Dict[str, Any]) -> Optional[Tuple[str, Any, str]]:
    """Default mapping for state-history rows: (entity_id, state, last_changed)."""
    entity = record.get("entity_id")
    when = record.get("last_changed") or record.get("last_updated")
    if not entity or not when:
        return None
    return str(entity), record.get("state"), str(when)


def _coerce_raw(value: Any) -> State:
    if value is None:
        return None
    if isinstance(value, float) and math.isnan(value):
        return None
    if _is_number(value):
        return float(value)
    text = str(value).strip()
    if text.lower() in MISSING_STATES:
        return None
    try:
        number = float(text)
    except ValueError:
        return text
    return number if math.isfinite(number) else None


def load_home_assistant_export(
    path: Union[str, Path],
    mapper: RecordMapper = home_assistant_mapper,
    tz: str = "UTC",
    kinds: Optional[Dict[str, DeviceKind]] = None,
) -> Trace:
    """
    Read a state-history export (CSV or JSON records) into a canonical Trace.

    `mapper` turns one raw record into (device_id, raw_state, timestamp) or None
    to skip it. Device kinds are inferred (continuous iff every non-missing
    state is numeric) unless given explicitly.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        frame = pd.read_json(path, orient="records", dtype=False)
    else:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)

    raw: List[Tuple[datetime, str, State]] = []
    for record in frame.to_dict(orient="records"):
        mapped = mapper(record)
        if mapped is None:
            continue
        device_id, state, when = mapped
        raw.append((parse_timestamp(when), device_id, _coerce_raw(state)))

    inferred: Dict[str, DeviceKind] = dict(kinds or {})
    for device_id in sorted({d for _, d, _ in raw}):
        if device_id in inferred:
            continue
        states = [s for _, d, s in raw if d == device_id and s is not None]
        numeric = bool(states) and all(isinstance(s, float) for s in states)
        inferred[device_id] = DeviceKind.CONTINUOUS if numeric else DeviceKind.NOMINAL

    updates = []
    for ts, device_id, state in raw:
        kind = inferred[device_id]
        if kind == DeviceKind.NOMINAL and isinstance(state, float):
            state = format(state, "g")
        elif kind == DeviceKind.CONTINUOUS and isinstance(state, str):
            state = None
        updates.append(StatusUpdate(ts, device_id, state))
    updates.sort(key=lambda u: u.timestamp)

    devices = tuple(DeviceDescriptor(d, k) for d, k in sorted(inferred.items()))
    logger.info(f"Loaded {len(updates)} updates for {len(devices)} devices from {path}")
    return Trace(devices=devices, updates=tuple(updates), tz=tz)
