"""
Preprocessing
Per-device state maps, full-system event chain reconstruction and window building.

Steps:
- fit a map per device on benign training data (label → k/|states|, number → bucket i/10)
- replay the trace, forward-filling every device's latest mapped state into one vector per update
- group consecutive vectors into (l, N_devices) windows
"""

import json
import math
import hashlib
import logging
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ml.error_handling import ArgusError, ModelFormatError, StateTypeError, UnknownDeviceError
from ml.trace import DeviceKind, StatusUpdate, Trace

logger = logging.getLogger(__name__)

CATALOG_VERSION = 1
BUCKET_COUNT = 10
MISSING_VALUE = 0.0  # S_0: unseen labels, missing readings, never-observed devices


# ─── State maps ───────────────────────────────────────────────


@dataclass(frozen=True)
class NominalStateMap:
    """Labels numbered 1..k in order of first training occurrence; value = k/|states|."""
    device_id: str
    ordered_states: Tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.ordered_states)

    @property
    def degenerate(self) -> bool:
        return False

    def state_id(self, label: str) -> int:
        try:
            return self.ordered_states.index(label) + 1
        except ValueError:
            return 0

    def map(self, raw: Any) -> float:
        if raw is None:
            return MISSING_VALUE
        if not isinstance(raw, str):
            raise StateTypeError(f"nominal device '{self.device_id}' got non-label state {raw!r}")
        return self.state_id(raw) / self.cardinality

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "nominal", "states": list(self.ordered_states)}


@dataclass(frozen=True)
class ContinuousBucketMap:
    """
    Ten equal-width buckets over [s_min, s_max]; bucket i maps to i/10.

    The last bucket is closed at s_max. Values outside the training range clamp
    to the nearest bucket. A map with s_min == s_max is degenerate and
    always yields 0.0.
    """
    device_id: str
    s_min: float
    s_max: float
    bucket_count: int = BUCKET_COUNT

    def __post_init__(self):
        if self.s_min > self.s_max:
            raise ArgusError(f"s_min > s_max for '{self.device_id}'")

    @property
    def degenerate(self) -> bool:
        return self.s_min == self.s_max

    def bucket(self, value: float) -> int:
        if self.degenerate:
            return 0
        width = (self.s_max - self.s_min) / self.bucket_count
        i = math.floor((value - self.s_min) / width)
        return min(max(i, 0), self.bucket_count - 1)

    def map(self, raw: Any) -> float:
        if raw is None:
            return MISSING_VALUE
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise StateTypeError(f"continuous device '{self.device_id}' got non-numeric state {raw!r}")
        if self.degenerate:
            return MISSING_VALUE
        return self.bucket(float(raw)) / self.bucket_count

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "continuous", "s_min": self.s_min, "s_max": self.s_max, "buckets": self.bucket_count}


@dataclass(frozen=True)
class DegenerateMap:
    """Device never observed during training: every state maps to S_0."""
    device_id: str
    device_kind: DeviceKind
    reason: str = "no training updates"

    @property
    def degenerate(self) -> bool:
        return True

    def map(self, raw: Any) -> float:
        return MISSING_VALUE

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "degenerate", "device_kind": self.device_kind.value, "reason": self.reason}


StateMap = Union[NominalStateMap, ContinuousBucketMap, DegenerateMap]


def _map_from_dict(device_id: str, data: Dict[str, Any]) -> StateMap:
    kind = data.get("kind")
    if kind == "nominal":
        return NominalStateMap(device_id, tuple(data["states"]))
    if kind == "continuous":
        if data.get("buckets", BUCKET_COUNT) != BUCKET_COUNT:
            raise ModelFormatError(f"'{device_id}': bucket count must be {BUCKET_COUNT}")
        return ContinuousBucketMap(device_id, float(data["s_min"]), float(data["s_max"]))
    if kind == "degenerate":
        return DegenerateMap(device_id, DeviceKind(data["device_kind"]), data.get("reason", ""))
    raise ModelFormatError(f"'{device_id}': unknown map kind {kind!r}")


# ─── Catalog ──────────────────────────────────────────────────


@dataclass(frozen=True)
class StateMapCatalog:
    maps: Dict[str, StateMap]
    device_order: Tuple[str, ...]
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        if sorted(self.device_order) != sorted(self.maps) or len(set(self.device_order)) != len(self.device_order):
            raise ArgusError("device_order must cover every mapped device exactly once")

    @property
    def n_devices(self) -> int:
        return len(self.device_order)

    def index_of(self, device_id: str) -> int:
        try:
            return self._index[device_id]
        except KeyError:
            raise UnknownDeviceError(device_id, "not in state-map catalog")

    @property
    def _index(self) -> Dict[str, int]:
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {d: m for m, d in enumerate(self.device_order)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def map_state(self, device_id: str, raw_state: Any) -> float:
        if device_id not in self.maps:
            raise UnknownDeviceError(device_id, "not in state-map catalog")
        return self.maps[device_id].map(raw_state)

    def degenerate_devices(self) -> List[str]:
        return [d for d in self.device_order if self.maps[d].degenerate]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": CATALOG_VERSION,
            "device_order": list(self.device_order),
            "maps": {d: self.maps[d].to_dict() for d in self.device_order},
            "warnings": list(self.warnings),
        }

    @property
    def catalog_hash(self) -> str:
        """SHA-256 over the canonical (sorted, compact) JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        doc = self.to_dict()
        doc["catalog_hash"] = self.catalog_hash
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: Union[str, bytes]) -> "StateMapCatalog":
        try:
            doc = json.loads(text)
            if doc.get("version") != CATALOG_VERSION:
                raise ModelFormatError(f"unsupported catalog version {doc.get('version')!r}")
            order = tuple(doc["device_order"])
            maps = {d: _map_from_dict(d, doc["maps"][d]) for d in order}
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            if isinstance(e, ModelFormatError):
                raise
            raise ModelFormatError(f"unreadable catalog: {e}")
        catalog = cls(maps=maps, device_order=order, warnings=tuple(doc.get("warnings", ())))
        expected = doc.get("catalog_hash")
        if expected is not None and expected != catalog.catalog_hash:
            raise ModelFormatError("catalog hash does not match its contents")
        return catalog


def fit_state_maps(train: Trace) -> StateMapCatalog:
    """
    Fit one map per catalog device on benign training updates.

    Devices without training updates, and continuous devices whose training
    readings are all equal, get degenerate maps; each one is logged and
    recorded in `catalog.warnings`.
    """
    if not train.updates:
        raise ArgusError("cannot fit state maps on an empty trace")

    labels: Dict[str, List[str]] = {d.device_id: [] for d in train.devices}
    seen: Dict[str, set] = {d.device_id: set() for d in train.devices}
    lo: Dict[str, float] = {}
    hi: Dict[str, float] = {}
    kinds = {d.device_id: d.kind for d in train.devices}

    for u in train.updates:
        if u.device_id not in kinds:
            raise UnknownDeviceError(u.device_id, "training trace")
        if u.state is None:
            continue
        if kinds[u.device_id] == DeviceKind.NOMINAL:
            if u.state not in seen[u.device_id]:
                seen[u.device_id].add(u.state)
                labels[u.device_id].append(u.state)
        else:
            value = float(u.state)
            lo[u.device_id] = min(lo.get(u.device_id, value), value)
            hi[u.device_id] = max(hi.get(u.device_id, value), value)

    maps: Dict[str, StateMap] = {}
    warnings: List[str] = []
    for device_id, kind in kinds.items():
        if kind == DeviceKind.NOMINAL and labels[device_id]:
            maps[device_id] = NominalStateMap(device_id, tuple(labels[device_id]))
        elif kind == DeviceKind.CONTINUOUS and device_id in lo:
            maps[device_id] = ContinuousBucketMap(device_id, lo[device_id], hi[device_id])
            if lo[device_id] == hi[device_id]:
                warnings.append(f"degenerate map for '{device_id}': constant training value {lo[device_id]}")
        else:
            maps[device_id] = DegenerateMap(device_id, kind)
            warnings.append(f"degenerate map for '{device_id}': no training updates")

    for message in warnings:
        logger.warning(message)

    catalog = StateMapCatalog(maps=maps, device_order=tuple(sorted(maps)), warnings=tuple(warnings))
    logger.info(
        f"Fitted state maps for {catalog.n_devices} devices "
        f"({len(catalog.degenerate_devices())} degenerate), hash={catalog.catalog_hash[:12]}"
    )
    return catalog


def map_state(catalog: StateMapCatalog, device_id: str, raw_state: Any) -> float:
    return catalog.map_state(device_id, raw_state)


# ─── Event chain ──────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Full-system state vector right after one update."""
    time: datetime
    values: np.ndarray
    trigger_index: int


class SnapshotBuilder:
    """
    Incremental forward-fill: holds every device's latest mapped value
    (S_0 until first observed). Shared by batch chain building and streaming
    detection so both see identical vectors.
    """

    def __init__(self, catalog: StateMapCatalog, values: Optional[Sequence[float]] = None):
        self.catalog = catalog
        if values is None:
            self.values = np.zeros(catalog.n_devices, dtype=np.float64)
        else:
            self.values = np.asarray(values, dtype=np.float64).copy()
            if self.values.shape != (catalog.n_devices,):
                raise ArgusError(f"snapshot vector must have {catalog.n_devices} entries")

    def apply(self, update: StatusUpdate) -> Tuple[np.ndarray, int]:
        m = self.catalog.index_of(update.device_id)
        self.values[m] = self.catalog.map_state(update.device_id, update.state) + update.perturbation
        return self.values.copy(), m


class EventChain(Sequence):
    """
    Ordered snapshots backed by one (n, N_devices) matrix.
    Indexing yields Snapshot objects; `values` exposes the matrix.
    """

    def __init__(self, times: Sequence[datetime], values: np.ndarray, trigger_indices: np.ndarray):
        self.times = list(times)
        self.values = values
        self.trigger_indices = trigger_indices

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EventChain(self.times[i], self.values[i], self.trigger_indices[i])
        return Snapshot(self.times[i], self.values[i], int(self.trigger_indices[i]))

    def __iter__(self) -> Iterator[Snapshot]:
        for i in range(len(self)):
            yield self[i]

    @property
    def n_devices(self) -> int:
        return self.values.shape[1]


def build_event_chain(
    trace: Trace,
    catalog: StateMapCatalog,
    initial_values: Optional[Sequence[float]] = None,
) -> EventChain:
    """`initial_values` seeds the forward-filled vector; all-S_0 when omitted."""
    builder = SnapshotBuilder(catalog, initial_values)
    n = len(trace.updates)
    values = np.zeros((n, catalog.n_devices), dtype=np.float64)
    triggers = np.zeros(n, dtype=np.int64)
    for i, u in enumerate(trace.updates):
        values[i], triggers[i] = builder.apply(u)
    return EventChain([u.timestamp for u in trace.updates], values, triggers)


# ─── Windows ──────────────────────────────────────────────────


class WindowMode(str, Enum):
    DISJOINT = "disjoint"
    SLIDING = "sliding"


@dataclass(eq=False)
class WindowBatch:
    windows: np.ndarray  # (n_windows, l, N_devices)
    l: int
    end_times: List[datetime] = field(default_factory=list)
    end_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    provisional: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def n_devices(self) -> int:
        return self.windows.shape[2]

    def subset(self, idx: Union[slice, np.ndarray]) -> "WindowBatch":
        positions = np.arange(len(self))[idx]
        return WindowBatch(
            windows=self.windows[positions],
            l=self.l,
            end_times=[self.end_times[i] for i in positions],
            end_indices=self.end_indices[positions],
            provisional=self.provisional[positions] if self.provisional is not None else None,
        )


def _empty_batch(l: int, n_devices: int) -> WindowBatch:
    return WindowBatch(np.zeros((0, l, n_devices)), l, [], np.zeros(0, dtype=np.int64))


def build_windows(
    chain: EventChain,
    l: int,
    mode: WindowMode = WindowMode.DISJOINT,
    stride: int = 1,
) -> WindowBatch:
    """
    Disjoint: [0..l), [l..2l), ... with the trailing partial group dropped.
    Sliding: windows starting every `stride` events (stride 1 ends one at every index >= l-1).
    """
    if l < 1:
        raise ArgusError(f"window length must be >= 1 (got {l})")
    if stride < 1:
        raise ArgusError(f"window stride must be >= 1 (got {stride})")
    n, d = len(chain), chain.n_devices
    if n < l:
        return _empty_batch(l, d)

    if WindowMode(mode) == WindowMode.DISJOINT:
        k = n // l
        windows = chain.values[: k * l].reshape(k, l, d).copy()
        ends = np.arange(l - 1, k * l, l)
    else:
        windows = np.lib.stride_tricks.sliding_window_view(chain.values, (l, d))[::stride, 0].copy()
        ends = np.arange(l - 1, n, stride)
    return WindowBatch(windows, l, [chain.times[i] for i in ends], ends.astype(np.int64))


def pad_front(rows: np.ndarray, l: int) -> np.ndarray:
    """Front-pad a (k, D) block (k <= l) to (l, D) by repeating its first row."""
    missing = l - rows.shape[0]
    if missing <= 0:
        return rows[-l:]
    return np.vstack([np.repeat(rows[:1], missing, axis=0), rows])


def sliding_windows_padded(chain: EventChain, l: int) -> WindowBatch:
    """
    One window per snapshot, ending at that snapshot. The first l-1 windows
    are front-padded with the first snapshot and marked provisional.
    """
    if l < 1:
        raise ArgusError(f"window length must be >= 1 (got {l})")
    n, d = len(chain), chain.n_devices
    if n == 0:
        batch = _empty_batch(l, d)
        batch.provisional = np.zeros(0, dtype=bool)
        return batch
    padded = pad_front(chain.values, n + l - 1)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (l, d))[:, 0].copy()
    ends = np.arange(n, dtype=np.int64)
    return WindowBatch(windows, l, list(chain.times), ends, provisional=ends < l - 1)
