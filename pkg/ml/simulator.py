"""
Smart-Home Simulator
Seeded synthetic home traces, contextual attack injection, Gaussian noise
injection and training-set poisoning.

The home is a single inhabitant following a daily schedule (sleep, morning
ventilation, weekday commute, evening lamp, random motion) with automation
rules that react to presence, window and sleep changes. Continuous sensors
are sampled on a fixed cadence from a diurnal curve plus noise.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta, timezone
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from ml.error_handling import ArgusError, PreconditionError, ProfileError, TraceSpanError, UnknownDeviceError
from ml.trace import (
    DeviceDescriptor,
    DeviceKind,
    Origin,
    StatusUpdate,
    Trace,
    format_timestamp,
    parse_timestamp,
    resolve_tz,
    split_by_days,
)

logger = logging.getLogger(__name__)

# ─── Device roster ────────────────────────────────────────────

KNOWN_DEVICES: Dict[str, Tuple[DeviceKind, str]] = {
    "person.resident": (DeviceKind.NOMINAL, "Resident presence"),
    "sensor.sleep_state": (DeviceKind.NOMINAL, "Sleep state"),
    "sensor.sleep_confidence": (DeviceKind.CONTINUOUS, "Sleep confidence"),
    "sensor.temperature": (DeviceKind.CONTINUOUS, "Living room temperature"),
    "sensor.humidity": (DeviceKind.CONTINUOUS, "Living room humidity"),
    "binary_sensor.motion": (DeviceKind.NOMINAL, "Hallway motion"),
    "binary_sensor.front_door": (DeviceKind.NOMINAL, "Front door contact"),
    "lock.front_door": (DeviceKind.NOMINAL, "Front door lock"),
    "binary_sensor.window": (DeviceKind.NOMINAL, "Living room window"),
    "light.ceiling": (DeviceKind.NOMINAL, "Ceiling light"),
    "light.desk_lamp": (DeviceKind.NOMINAL, "Desk lamp"),
    "climate.thermostat": (DeviceKind.NOMINAL, "Thermostat"),
    "camera.status": (DeviceKind.NOMINAL, "Indoor camera"),
}

DEFAULT_ROLES: Dict[str, str] = {
    "presence": "person.resident",
    "sleep": "sensor.sleep_state",
    "sleep_confidence": "sensor.sleep_confidence",
    "temperature": "sensor.temperature",
    "humidity": "sensor.humidity",
    "motion": "binary_sensor.motion",
    "door": "binary_sensor.front_door",
    "lock": "lock.front_door",
    "window": "binary_sensor.window",
    "light": "light.ceiling",
    "lamp": "light.desk_lamp",
    "thermostat": "climate.thermostat",
    "camera": "camera.status",
}

INITIAL_STATES: Dict[str, str] = {
    "person.resident": "home",
    "sensor.sleep_state": "asleep",
    "binary_sensor.motion": "off",
    "binary_sensor.front_door": "closed",
    "lock.front_door": "locked",
    "binary_sensor.window": "closed",
    "light.ceiling": "off",
    "light.desk_lamp": "off",
    "climate.thermostat": "heat",
    "camera.status": "idle",
}

LIGHTS = ("light.ceiling", "light.desk_lamp")
CONTINUOUS_OFFSETS_MIN = {"sensor.temperature": 0.0, "sensor.humidity": 2.0, "sensor.sleep_confidence": 4.0}


class Rule(str, Enum):
    LIGHTS_OFF_WHEN_ABSENT = "lights-off-when-absent"
    CAMERA_FOLLOWS_PRESENCE = "camera-follows-presence"
    HEATING_OFF_WHEN_WINDOW_OPEN = "heating-off-when-window-open"
    LIGHTS_OFF_AT_NIGHT = "lights-off-at-night"


RULE_DEVICES: Dict[Rule, Tuple[str, ...]] = {
    Rule.LIGHTS_OFF_WHEN_ABSENT: ("person.resident", "light.ceiling"),
    Rule.CAMERA_FOLLOWS_PRESENCE: ("person.resident", "camera.status"),
    Rule.HEATING_OFF_WHEN_WINDOW_OPEN: ("binary_sensor.window", "climate.thermostat"),
    Rule.LIGHTS_OFF_AT_NIGHT: ("sensor.sleep_state", "light.ceiling"),
}


def _parse_hhmm(text: str) -> float:
    """'07:30' → minutes after midnight."""
    try:
        hours, minutes = text.split(":")
        value = int(hours) * 60 + int(minutes)
    except ValueError:
        raise ProfileError(f"invalid time of day {text!r} (expected HH:MM)")
    if not 0 <= value < 24 * 60:
        raise ProfileError(f"time of day {text!r} outside 00:00-23:59")
    return float(value)


@dataclass(frozen=True)
class HomeProfile:
    roster: Tuple[str, ...] = tuple(KNOWN_DEVICES)
    wake_time: str = "07:00"
    weekend_wake_time: str = "08:30"
    leave_time: str = "08:30"
    return_time: str = "17:30"
    lamp_time: str = "19:30"
    sleep_time: str = "23:00"
    weekend_outing_time: str = "14:00"
    jitter_min: float = 15.0
    weekend_outing_prob: float = 0.6
    ventilation_prob: float = 0.8
    forget_lights_prob: float = 0.5
    motion_per_hour: float = 1.0
    sample_every_min: float = 10.0
    rules: Tuple[Rule, ...] = tuple(Rule)
    rule_latency_s: Tuple[float, float] = (1.0, 3.0)
    temp_base: float = 20.5
    humidity_base: float = 45.0
    start_date: str = "2024-01-01"
    tz: str = "Europe/Berlin"
    seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "roster", tuple(self.roster))
        object.__setattr__(self, "rules", tuple(Rule(r) for r in self.rules))
        object.__setattr__(self, "rule_latency_s", tuple(float(x) for x in self.rule_latency_s))
        if not self.roster:
            raise ProfileError("roster must not be empty")
        unknown = [d for d in self.roster if d not in KNOWN_DEVICES]
        if unknown:
            raise ProfileError(f"unknown roster devices: {unknown}")
        if len(set(self.roster)) != len(self.roster):
            raise ProfileError("roster lists a device twice")
        for rule in self.rules:
            missing = [d for d in RULE_DEVICES[rule] if d not in self.roster]
            if missing:
                raise ProfileError(f"rule {rule.value} references devices outside the roster: {missing}")
        wake, leave, ret, sleep = (
            _parse_hhmm(t) for t in (self.wake_time, self.leave_time, self.return_time, self.sleep_time)
        )
        _parse_hhmm(self.weekend_wake_time)
        _parse_hhmm(self.lamp_time)
        _parse_hhmm(self.weekend_outing_time)
        if not wake < leave < ret < sleep:
            raise ProfileError("schedule must satisfy wake < leave < return < sleep")
        for name in ("weekend_outing_prob", "ventilation_prob", "forget_lights_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ProfileError(f"{name} must be in [0, 1]")
        if self.sample_every_min <= 0 or self.motion_per_hour < 0 or self.jitter_min < 0:
            raise ProfileError("cadence must be positive, motion rate and jitter non-negative")
        lo, hi = self.rule_latency_s
        if not 0 <= lo <= hi:
            raise ProfileError("rule latency must satisfy 0 <= low <= high")
        resolve_tz(self.tz)
        try:
            date.fromisoformat(self.start_date)
        except ValueError:
            raise ProfileError(f"invalid start_date {self.start_date!r}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HomeProfile":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ProfileError(f"unknown profile fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return {
            name: (list(v) if isinstance(v, tuple) else v)
            for name, v in ((f, getattr(self, f)) for f in self.__dataclass_fields__)
        } | {"rules": [r.value for r in self.rules]}


def default_profile(seed: int = 7) -> HomeProfile:
    """Single-inhabitant apartment with the full thirteen-device roster."""
    return HomeProfile(seed=seed)


# ─── Home generator ───────────────────────────────────────────


def _ms(ts: datetime) -> datetime:
    return ts.replace(microsecond=(ts.microsecond // 1000) * 1000)


class _HomeSimulation:
    """Agenda-driven replay of one home: a time-ordered heap of actions."""

    def __init__(self, profile: HomeProfile, rng: np.random.Generator):
        self.profile = profile
        self.rng = rng
        self.zone = resolve_tz(profile.tz)
        self.agenda: List[Tuple[datetime, int, str, str, Optional[str], bool]] = []
        self.seq = 0
        self.state: Dict[str, str] = {}
        self.updates: List[StatusUpdate] = []
        self.roster = set(profile.roster)

    # scheduling

    def at(self, day: date, minutes: float) -> datetime:
        local = datetime.combine(day, time(0, 0), tzinfo=self.zone) + timedelta(minutes=minutes)
        return _ms(local.astimezone(timezone.utc))

    def jitter(self, scale: float = 1.0) -> timedelta:
        sigma = self.profile.jitter_min * scale
        if sigma == 0:
            return timedelta(0)
        return timedelta(minutes=float(np.clip(self.rng.normal(0.0, sigma), -2 * sigma, 2 * sigma)))

    def push(self, ts: datetime, device: str, state: Optional[str], kind: str = "set", when_home_awake: bool = False) -> None:
        heapq.heappush(self.agenda, (_ms(ts), self.seq, kind, device, state, when_home_awake))
        self.seq += 1

    def schedule_initial(self, start: date) -> None:
        t0 = self.at(start, 0.0)
        for k, (device, state) in enumerate(INITIAL_STATES.items()):
            self.push(t0 + timedelta(milliseconds=k), device, state)

    def schedule_day(self, day: date) -> None:
        p = self.profile
        weekday = day.weekday() < 5
        wake = self.at(day, _parse_hhmm(p.wake_time if weekday else p.weekend_wake_time)) + self.jitter()
        sleep = self.at(day, _parse_hhmm(p.sleep_time)) + self.jitter()

        self.push(wake, "sensor.sleep_state", "awake")
        self.push(wake + timedelta(seconds=30), "light.ceiling", "on")
        self.motion(wake + timedelta(seconds=60))

        morning_done = wake + timedelta(minutes=15)
        if self.rng.random() < p.ventilation_prob:
            opened = wake + timedelta(minutes=20) + self.jitter(1 / 3)
            closed = opened + timedelta(minutes=10) + self.jitter(1 / 5)
            self.push(opened, "binary_sensor.window", "open")
            self.push(closed, "binary_sensor.window", "closed")
            self.push(closed + timedelta(seconds=60), "climate.thermostat", "heat")
            morning_done = closed + timedelta(minutes=2)

        if weekday:
            leave = max(self.at(day, _parse_hhmm(p.leave_time)) + self.jitter(2 / 3), morning_done + timedelta(minutes=5))
            back = self.at(day, _parse_hhmm(p.return_time)) + self.jitter()
            self.outing(leave, back)
        elif self.rng.random() < p.weekend_outing_prob:
            leave = max(self.at(day, _parse_hhmm(p.weekend_outing_time)) + self.jitter(2), morning_done + timedelta(minutes=5))
            back = leave + timedelta(hours=2) + self.jitter(2)
            self.outing(leave, back)

        self.push(self.at(day, _parse_hhmm(p.lamp_time)) + self.jitter(), "light.desk_lamp", "on", when_home_awake=True)
        self.push(sleep - timedelta(minutes=5), "light.desk_lamp", "off")
        if self.rng.random() >= p.forget_lights_prob:
            self.push(sleep - timedelta(minutes=2), "light.ceiling", "off")
        self.push(sleep, "sensor.sleep_state", "asleep")

        awake_hours = (sleep - wake).total_seconds() / 3600.0
        for _ in range(int(self.rng.poisson(p.motion_per_hour * awake_hours))):
            offset = float(self.rng.uniform(0.0, awake_hours))
            self.motion(wake + timedelta(hours=offset), when_home_awake=True)

    def motion(self, ts: datetime, when_home_awake: bool = False) -> None:
        self.push(ts, "binary_sensor.motion", "on", when_home_awake=when_home_awake)
        self.push(ts + timedelta(seconds=90), "binary_sensor.motion", "off")

    def outing(self, leave: datetime, back: datetime) -> None:
        s = timedelta(seconds=1)
        if self.rng.random() >= self.profile.forget_lights_prob:
            self.push(leave - 90 * s, "light.ceiling", "off")
        self.push(leave - 80 * s, "light.desk_lamp", "off")
        self.push(leave - 70 * s, "lock.front_door", "unlocked")
        self.push(leave - 60 * s, "binary_sensor.front_door", "open")
        self.push(leave - 50 * s, "binary_sensor.front_door", "closed")
        self.push(leave - 40 * s, "lock.front_door", "locked")
        # presence is geofenced: it flips once the resident is off the property
        self.push(leave + 60 * s, "person.resident", "not_home")

        # and back to home before the resident reaches the door
        self.push(back - 60 * s, "person.resident", "home")
        self.push(back, "lock.front_door", "unlocked")
        self.push(back + 10 * s, "binary_sensor.front_door", "open")
        self.push(back + 20 * s, "binary_sensor.front_door", "closed")
        self.push(back + 45 * s, "lock.front_door", "locked")
        self.push(back + 60 * s, "light.ceiling", "on")
        self.motion(back + 90 * s)

    def schedule_samples(self, start: date, days: int) -> None:
        step = self.profile.sample_every_min
        n = int(math.floor(days * 24 * 60 / step))
        for device, offset in CONTINUOUS_OFFSETS_MIN.items():
            if device not in self.roster:
                continue
            for k in range(n):
                ts = self.at(start, k * step + offset) + timedelta(milliseconds=float(self.rng.uniform(0, 1000)))
                self.push(ts, device, None, kind="sample")

    # replay

    def run(self, end: datetime) -> List[StatusUpdate]:
        while self.agenda:
            ts, _, kind, device, state, when_home_awake = heapq.heappop(self.agenda)
            if ts >= end:
                continue
            if kind == "sample":
                self.emit(ts, device, self.reading(device, ts))
                continue
            if when_home_awake and not self.home_awake():
                continue
            if self.state.get(device) == state:
                continue
            self.state[device] = state
            self.emit(ts, device, state)
            self.fire_rules(ts, device, state)
        return self.updates

    def home_awake(self) -> bool:
        return self.state.get("person.resident") == "home" and self.state.get("sensor.sleep_state") == "awake"

    def emit(self, ts: datetime, device: str, state) -> None:
        if device in self.roster:
            self.updates.append(StatusUpdate(ts, device, state))

    def latency(self) -> timedelta:
        lo, hi = self.profile.rule_latency_s
        return timedelta(seconds=float(self.rng.uniform(lo, hi)))

    def fire_rules(self, ts: datetime, device: str, state: str) -> None:
        rules = self.profile.rules
        if device == "person.resident":
            if state == "not_home" and Rule.LIGHTS_OFF_WHEN_ABSENT in rules:
                for light in LIGHTS:
                    if self.state.get(light) == "on":
                        self.push(ts + self.latency(), light, "off", kind="rule")
            if Rule.CAMERA_FOLLOWS_PRESENCE in rules:
                target = "recording" if state == "not_home" else "idle"
                self.push(ts + self.latency(), "camera.status", target, kind="rule")
        elif device == "binary_sensor.window" and state == "open":
            if Rule.HEATING_OFF_WHEN_WINDOW_OPEN in rules and self.state.get("climate.thermostat") == "heat":
                self.push(ts + self.latency(), "climate.thermostat", "off", kind="rule")
        elif device == "sensor.sleep_state" and state == "asleep":
            if Rule.LIGHTS_OFF_AT_NIGHT in rules:
                for light in LIGHTS:
                    if self.state.get(light) == "on":
                        self.push(ts + self.latency(), light, "off", kind="rule")

    def reading(self, device: str, ts: datetime) -> float:
        p = self.profile
        local = ts.astimezone(self.zone)
        hour = local.hour + local.minute / 60.0
        window_open = self.state.get("binary_sensor.window") == "open"
        if device == "sensor.temperature":
            heating = 1.0 if self.state.get("climate.thermostat") == "heat" else -1.5
            value = p.temp_base + 1.2 * math.sin(2 * math.pi * (hour - 10.0) / 24.0) + heating
            value += -2.5 if window_open else 0.0
            return round(value + float(self.rng.normal(0.0, 0.15)), 2)
        if device == "sensor.humidity":
            value = p.humidity_base + 3.0 * math.sin(2 * math.pi * (hour - 6.0) / 24.0)
            value += 6.0 if window_open else 0.0
            return round(float(np.clip(value + self.rng.normal(0.0, 0.4), 20.0, 95.0)), 1)
        asleep = self.state.get("sensor.sleep_state") == "asleep"
        value = self.rng.normal(94.0, 1.5) if asleep else self.rng.normal(4.0, 1.5)
        return round(float(np.clip(value, 0.0, 100.0)), 1)


def _catalog(profile: HomeProfile) -> Tuple[DeviceDescriptor, ...]:
    return tuple(DeviceDescriptor(d, KNOWN_DEVICES[d][0], KNOWN_DEVICES[d][1]) for d in profile.roster)


def generate_home(profile: HomeProfile, days: int, seed: Optional[int] = None) -> Trace:
    """
    Benign trace covering `days` local calendar days from profile.start_date.
    Deterministic given the seed (profile.seed unless overridden); all labels 0.
    """
    if days < 1:
        raise ProfileError(f"days must be >= 1 (got {days})")
    seed = profile.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    start = date.fromisoformat(profile.start_date)
    sim = _HomeSimulation(profile, rng)
    sim.schedule_initial(start)
    for d in range(days):
        sim.schedule_day(start + timedelta(days=d))
    sim.schedule_samples(start, days)
    updates = sim.run(end=sim.at(start + timedelta(days=days), 0.0))

    logger.info(f"Generated {len(updates)} updates over {days} days for {len(profile.roster)} devices")
    return Trace(
        devices=_catalog(profile),
        updates=tuple(updates),
        labels=(0,) * len(updates),
        tz=profile.tz,
        seed=seed,
    )


# ─── Context helpers ──────────────────────────────────────────

Interval = Tuple[datetime, datetime]


def state_intervals(trace: Trace, device_id: str, state: str) -> List[Interval]:
    """Maximal spans during which `device_id` reported `state`; an open span ends at the last update."""
    spans: List[Interval] = []
    opened: Optional[datetime] = None
    for u in trace.updates:
        if u.device_id != device_id:
            continue
        if u.state == state and opened is None:
            opened = u.timestamp
        elif u.state != state and opened is not None:
            spans.append((opened, u.timestamp))
            opened = None
    if opened is not None and trace.updates:
        spans.append((opened, trace.updates[-1].timestamp))
    return spans


def state_at(trace: Trace, device_id: str, ts: datetime, default: Any = None) -> Any:
    """Latest reported state of a device strictly before ts."""
    current = default
    for u in trace.updates:
        if u.timestamp >= ts:
            break
        if u.device_id == device_id:
            current = u.state
    return current


# ─── Attacks ──────────────────────────────────────────────────


class Category(str, Enum):
    ES = "ES"  # event spoofing
    EI = "EI"  # event interception
    CS = "CS"  # command spoofing
    CI = "CI"  # command interception


class AttackKind(str, Enum):
    DOOR_OPEN_WHILE_ABSENT = "door_open_while_absent"
    LIGHTS_ON_WHILE_ABSENT = "lights_on_while_absent"
    MOVEMENT_WHILE_ABSENT = "movement_while_absent"
    CAMERA_OFF_WHILE_ABSENT = "camera_off_while_absent"
    LIGHT_FLICKERING = "light_flickering"
    HEATING_WHILE_WINDOW_OPEN = "heating_while_window_open"
    LIGHTS_ON_DURING_NIGHT = "lights_on_during_night"
    FAKE_FIRE_CLOSED_WINDOWS = "fake_fire_closed_windows"
    FAKE_FIRE_OPEN_WINDOWS = "fake_fire_open_windows"


ATTACK_CATEGORIES: Dict[AttackKind, FrozenSet[Category]] = {
    AttackKind.DOOR_OPEN_WHILE_ABSENT: frozenset({Category.EI, Category.CS, Category.CI}),
    AttackKind.LIGHTS_ON_WHILE_ABSENT: frozenset({Category.ES, Category.CS}),
    AttackKind.MOVEMENT_WHILE_ABSENT: frozenset({Category.ES}),
    AttackKind.CAMERA_OFF_WHILE_ABSENT: frozenset({Category.ES, Category.CS}),
    AttackKind.LIGHT_FLICKERING: frozenset({Category.CS}),
    AttackKind.HEATING_WHILE_WINDOW_OPEN: frozenset({Category.ES, Category.EI, Category.CI}),
    AttackKind.LIGHTS_ON_DURING_NIGHT: frozenset({Category.CS}),
    AttackKind.FAKE_FIRE_CLOSED_WINDOWS: frozenset({Category.ES}),
    AttackKind.FAKE_FIRE_OPEN_WINDOWS: frozenset({Category.ES}),
}

DEFAULT_VARIANT: Dict[AttackKind, Category] = {
    AttackKind.DOOR_OPEN_WHILE_ABSENT: Category.CS,
    AttackKind.LIGHTS_ON_WHILE_ABSENT: Category.CS,
    AttackKind.MOVEMENT_WHILE_ABSENT: Category.ES,
    AttackKind.CAMERA_OFF_WHILE_ABSENT: Category.CS,
    AttackKind.LIGHT_FLICKERING: Category.CS,
    AttackKind.HEATING_WHILE_WINDOW_OPEN: Category.ES,
    AttackKind.LIGHTS_ON_DURING_NIGHT: Category.CS,
    AttackKind.FAKE_FIRE_CLOSED_WINDOWS: Category.ES,
    AttackKind.FAKE_FIRE_OPEN_WINDOWS: Category.ES,
}

DEFAULT_PARAMS: Dict[str, float] = {
    "duration_s": 600.0,      # how long a spoofed state is held before the attacker restores it
    "margin_s": 300.0,        # distance kept from the edges of the context interval
    "flicker_count": 20,
    "flicker_period_s": 2.0,  # seconds between successive toggles
    "spike_value": 60.0,
    "follow_up_s": 10.0,      # rule-consequence horizon for suppression variants
    "label_tail": 0,          # extra observed events after the attack marked as attack-affected
}


@dataclass(frozen=True)
class AttackScenario:
    kind: AttackKind
    start: datetime
    end: datetime
    variant: Optional[Category] = None
    targets: Dict[str, str] = field(default_factory=dict)
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        variant = DEFAULT_VARIANT[self.kind] if self.variant is None else Category(self.variant)
        object.__setattr__(self, "variant", variant)
        if variant not in ATTACK_CATEGORIES[self.kind]:
            raise ArgusError(f"{self.kind.value} has no {variant.value} variant")
        if not self.start < self.end:
            raise ArgusError("attack window must satisfy start < end")
        unknown = set(self.params) - set(DEFAULT_PARAMS)
        if unknown:
            raise ArgusError(f"unknown attack parameters: {sorted(unknown)}")
        unknown_roles = set(self.targets) - set(DEFAULT_ROLES)
        if unknown_roles:
            raise ArgusError(f"unknown attack target roles: {sorted(unknown_roles)}")

    @property
    def categories(self) -> FrozenSet[Category]:
        return ATTACK_CATEGORIES[self.kind]

    def role(self, name: str) -> str:
        return self.targets.get(name, DEFAULT_ROLES[name])

    def param(self, name: str) -> float:
        return self.params.get(name, DEFAULT_PARAMS[name])

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttackScenario":
        try:
            return cls(
                kind=AttackKind(data["kind"]),
                start=parse_timestamp(data["start"]),
                end=parse_timestamp(data["end"]),
                variant=data.get("variant"),
                targets=dict(data.get("targets", {})),
                params=dict(data.get("params", {})),
            )
        except KeyError as e:
            raise ArgusError(f"attack scenario missing field {e}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "start": format_timestamp(self.start),
            "end": format_timestamp(self.end),
            "variant": self.variant.value,
            "targets": dict(self.targets),
            "params": dict(self.params),
        }


@dataclass
class _Plan:
    injected: List[StatusUpdate] = field(default_factory=list)
    suppressed: List[int] = field(default_factory=list)

    def inject(self, ts: datetime, device: str, state) -> None:
        self.injected.append(StatusUpdate(_ms(ts), device, state, Origin.INJECTED))


def _context(trace: Trace, scenario: AttackScenario, role: str, state: str, needed: timedelta) -> Interval:
    """First interval of role=state inside the window that leaves room for margins plus `needed`."""
    device = scenario.role(role)
    margin = timedelta(seconds=scenario.param("margin_s"))
    for lo, hi in state_intervals(trace, device, state):
        lo, hi = max(lo, scenario.start) + margin, min(hi, scenario.end) - margin - needed
        if lo <= hi:
            return lo, hi
    raise PreconditionError(f"{device}={state}", f"{scenario.kind.value}: no {device}={state} interval in the attack window")


def _pick(rng: np.random.Generator, span: Interval) -> datetime:
    lo, hi = span
    return lo + timedelta(seconds=float(rng.uniform(0.0, (hi - lo).total_seconds())))


def _within(trace: Trace, scenario: AttackScenario, device: str, state: str) -> List[int]:
    return [
        i for i, u in enumerate(trace.updates)
        if u.device_id == device and u.state == state and scenario.start <= u.timestamp <= scenario.end
    ]


def _follow_ups(trace: Trace, index: int, devices: Sequence[str], horizon: timedelta) -> List[int]:
    anchor = trace.updates[index].timestamp
    out = []
    for j in range(index + 1, len(trace.updates)):
        u = trace.updates[j]
        if u.timestamp > anchor + horizon:
            break
        if u.device_id in devices:
            out.append(j)
    return out


def _absence_attack(spoof: Callable[[_Plan, datetime, AttackScenario], None]):
    def plan(trace: Trace, scenario: AttackScenario, rng: np.random.Generator) -> _Plan:
        duration = timedelta(seconds=scenario.param("duration_s") + 5)
        t = _pick(rng, _context(trace, scenario, "presence", "not_home", duration))
        out = _Plan()
        spoof(out, t, scenario)
        return out
    return plan


def _door(trace: Trace, scenario: AttackScenario, rng: np.random.Generator) -> _Plan:
    out = _Plan()
    horizon = timedelta(seconds=scenario.param("follow_up_s"))
    if scenario.variant == Category.CS:
        duration = timedelta(seconds=scenario.param("duration_s"))
        t = _pick(rng, _context(trace, scenario, "presence", "not_home", duration))
        out.inject(t, scenario.role("lock"), "unlocked")
        out.inject(t + timedelta(seconds=15), scenario.role("door"), "open")
        out.inject(t + timedelta(seconds=75), scenario.role("door"), "closed")
        out.inject(t + duration, scenario.role("lock"), "locked")
        return out

    # interception: the departure's lock action is dropped (CI), and for EI the
    # door's closed report goes with it, so the home looks open while empty
    lock, door, presence = scenario.role("lock"), scenario.role("door"), scenario.role("presence")
    for idx in _within(trace, scenario, lock, "locked"):
        # a departure lock is followed by presence flipping to not_home within minutes
        after = _follow_ups(trace, idx, (presence,), timedelta(minutes=5))
        if not after or trace.updates[after[0]].state != "not_home":
            continue
        out.suppressed = [idx]
        if scenario.variant == Category.EI:
            for j in range(idx - 1, -1, -1):
                u = trace.updates[j]
                if u.timestamp < trace.updates[idx].timestamp - horizon * 3:
                    break
                if u.device_id == door and u.state == "closed" and u.timestamp >= scenario.start:
                    out.suppressed.append(j)
                    break
        return out
    raise PreconditionError(f"{lock}=locked", "no departure lock event in the attack window")


def _lights_absent(out: _Plan, t: datetime, scenario: AttackScenario) -> None:
    duration = timedelta(seconds=scenario.param("duration_s"))
    light = scenario.role("light")
    if scenario.variant == Category.ES:
        presence = scenario.role("presence")
        out.inject(t, presence, "home")
        out.inject(t + timedelta(seconds=2), light, "on")
        out.inject(t + duration, light, "off")
        out.inject(t + duration + timedelta(seconds=2), presence, "not_home")
    else:
        out.inject(t, light, "on")
        out.inject(t + duration, light, "off")


def _movement(out: _Plan, t: datetime, scenario: AttackScenario) -> None:
    motion = scenario.role("motion")
    out.inject(t, motion, "on")
    out.inject(t + timedelta(seconds=90), motion, "off")


def _camera(out: _Plan, t: datetime, scenario: AttackScenario) -> None:
    duration = timedelta(seconds=scenario.param("duration_s"))
    camera = scenario.role("camera")
    if scenario.variant == Category.ES:
        presence = scenario.role("presence")
        out.inject(t, presence, "home")
        out.inject(t + timedelta(seconds=2), camera, "idle")
        out.inject(t + duration, presence, "not_home")
        out.inject(t + duration + timedelta(seconds=2), camera, "recording")
    else:
        out.inject(t, camera, "idle")
        out.inject(t + duration, camera, "recording")


def flicker_updates(start: datetime, light: str, initial: Optional[str], count: int, period_s: float) -> List[StatusUpdate]:
    """`count` alternating on/off toggles starting from the opposite of `initial`."""
    state = "on" if initial != "on" else "off"
    out = []
    for k in range(int(count)):
        out.append(StatusUpdate(_ms(start + timedelta(seconds=k * period_s)), light, state, Origin.INJECTED))
        state = "off" if state == "on" else "on"
    return out


def _flicker(trace: Trace, scenario: AttackScenario, rng: np.random.Generator) -> _Plan:
    count, period = int(scenario.param("flicker_count")), scenario.param("flicker_period_s")
    margin = timedelta(seconds=scenario.param("margin_s"))
    lo, hi = scenario.start, scenario.end - timedelta(seconds=count * period)
    if hi - margin < lo + margin:
        raise PreconditionError("time", "attack window too short for the flicker sequence")
    t = _pick(rng, (lo + margin, hi - margin))
    light = scenario.role("light")
    return _Plan(injected=flicker_updates(t, light, state_at(trace, light, t, "off"), count, period))


def _heating(trace: Trace, scenario: AttackScenario, rng: np.random.Generator) -> _Plan:
    out = _Plan()
    window, thermostat = scenario.role("window"), scenario.role("thermostat")
    horizon = timedelta(seconds=scenario.param("follow_up_s"))
    if scenario.variant == Category.ES:
        saved = scenario.param("margin_s")
        # ventilation intervals are short, so only a small edge margin applies
        narrow = replace(scenario, params={**scenario.params, "margin_s": min(saved, 30.0)})
        t = _pick(rng, _context(trace, narrow, "window", "open", timedelta(seconds=1)))
        out.inject(t, thermostat, "heat")
        return out

    openings = _within(trace, scenario, window, "open")
    for idx in openings:
        rule_offs = [
            j for j in _follow_ups(trace, idx, (thermostat,), horizon)
            if trace.updates[j].state == "off" and trace.updates[j].timestamp <= scenario.end
        ]
        if scenario.variant == Category.CI and rule_offs:
            out.suppressed = rule_offs[:1]
            return out
        if scenario.variant == Category.EI:
            out.suppressed = [idx] + rule_offs[:1]
            return out
    raise PreconditionError(f"{window}=open", "no window opening with a heating rule response in the attack window")


def _night(trace: Trace, scenario: AttackScenario, rng: np.random.Generator) -> _Plan:
    duration = timedelta(seconds=scenario.param("duration_s"))
    t = _pick(rng, _context(trace, scenario, "sleep", "asleep", duration))
    out = _Plan()
    out.inject(t, scenario.role("light"), "on")
    out.inject(t + duration, scenario.role("light"), "off")
    return out


def _fake_fire(open_windows: bool):
    def plan(trace: Trace, scenario: AttackScenario, rng: np.random.Generator) -> _Plan:
        duration = timedelta(seconds=scenario.param("duration_s"))
        t = _pick(rng, _context(trace, scenario, "window", "closed", duration + timedelta(seconds=60)))
        out = _Plan()
        spike = scenario.param("spike_value")
        temperature = scenario.role("temperature")
        for k in range(3):
            out.inject(t + timedelta(seconds=60 * k), temperature, round(spike + 2.0 * k, 2))
        if open_windows:
            out.inject(t + timedelta(seconds=5), scenario.role("window"), "open")
            out.inject(t + duration + timedelta(seconds=5), scenario.role("window"), "closed")
        return out
    return plan


_PLANNERS: Dict[AttackKind, Callable[[Trace, AttackScenario, np.random.Generator], _Plan]] = {
    AttackKind.DOOR_OPEN_WHILE_ABSENT: _door,
    AttackKind.LIGHTS_ON_WHILE_ABSENT: _absence_attack(_lights_absent),
    AttackKind.MOVEMENT_WHILE_ABSENT: _absence_attack(_movement),
    AttackKind.CAMERA_OFF_WHILE_ABSENT: _absence_attack(_camera),
    AttackKind.LIGHT_FLICKERING: _flicker,
    AttackKind.HEATING_WHILE_WINDOW_OPEN: _heating,
    AttackKind.LIGHTS_ON_DURING_NIGHT: _night,
    AttackKind.FAKE_FIRE_CLOSED_WINDOWS: _fake_fire(open_windows=False),
    AttackKind.FAKE_FIRE_OPEN_WINDOWS: _fake_fire(open_windows=True),
}


def merge_updates(
    trace: Trace,
    injected: Sequence[StatusUpdate],
    injected_labels: Sequence[int],
    injected_scenarios: Sequence[Optional[str]],
    labels: Optional[List[int]] = None,
    scenarios: Optional[List[Optional[str]]] = None,
) -> Tuple[List[StatusUpdate], List[int], List[Optional[str]]]:
    """Interleave new updates by timestamp; on ties existing updates stay first."""
    labels = labels if labels is not None else trace.label_list()
    scenarios = scenarios if scenarios is not None else trace.scenario_list()
    rows = [(u.timestamp, 0, i, u, labels[i], scenarios[i]) for i, u in enumerate(trace.updates)]
    rows += [(u.timestamp, 1, j, u, injected_labels[j], injected_scenarios[j]) for j, u in enumerate(injected)]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return [r[3] for r in rows], [r[4] for r in rows], [r[5] for r in rows]


def inject_attack(trace: Trace, scenario: AttackScenario, seed: int = 0) -> Trace:
    """
    Apply one attack scenario and return a labelled trace.

    Spoofing variants add Injected-origin updates labelled 1. Interception
    variants remove updates and label the first later update inside the
    window. With label_tail > 0 that many further observed updates inside the
    window are marked as attack-affected.
    """
    if not trace.updates:
        raise ArgusError("cannot attack an empty trace")
    first, last = trace.updates[0].timestamp, trace.updates[-1].timestamp
    if scenario.start < first or scenario.end > last:
        raise TraceSpanError(
            f"attack window {scenario.start.isoformat()}..{scenario.end.isoformat()} "
            f"is not inside the trace span {first.isoformat()}..{last.isoformat()}"
        )
    catalog = trace.device_map()
    for role, device in scenario.targets.items():
        if device not in catalog:
            raise UnknownDeviceError(device, f"attack target '{role}'")

    plan = _PLANNERS[scenario.kind](trace, scenario, np.random.default_rng(seed))
    for u in plan.injected:
        if u.device_id not in catalog:
            raise UnknownDeviceError(u.device_id, f"{scenario.kind.value} target")
    for u in plan.injected:
        if not scenario.start <= u.timestamp <= scenario.end:
            raise PreconditionError("time", f"{scenario.kind.value}: attack does not fit inside its window")

    kind = scenario.kind.value
    labels, scenarios = trace.label_list(), trace.scenario_list()
    removed = set(plan.suppressed)
    kept = [i for i in range(len(trace.updates)) if i not in removed]
    last_attack_ts = None

    if removed:
        last_removed = max(removed)
        follow = next((i for i in kept if i > last_removed and trace.updates[i].timestamp <= scenario.end), None)
        if follow is None:
            logger.warning(f"{kind}: no update after the suppressed event inside the window; nothing labelled")
        else:
            labels[follow], scenarios[follow] = 1, kind
            last_attack_ts = trace.updates[follow].timestamp

    base = trace.with_updates([trace.updates[i] for i in kept], [labels[i] for i in kept], [scenarios[i] for i in kept])
    updates, labels, scenarios = merge_updates(
        base, plan.injected, [1] * len(plan.injected), [kind] * len(plan.injected)
    )
    if plan.injected:
        last_attack_ts = max(u.timestamp for u in plan.injected)

    tail = int(scenario.param("label_tail"))
    if tail > 0 and last_attack_ts is not None:
        marked = 0
        for i, u in enumerate(updates):
            if marked >= tail or u.timestamp > scenario.end:
                break
            if u.timestamp > last_attack_ts and labels[i] == 0:
                labels[i], scenarios[i] = 1, kind
                marked += 1

    logger.info(
        f"Injected {kind} ({scenario.variant.value}): +{len(plan.injected)} / -{len(plan.suppressed)} updates"
    )
    return trace.with_updates(updates, labels, scenarios)


# ─── Noise ────────────────────────────────────────────────────


class NoiseMode(str, Enum):
    MAPPED = "mapped"  # perturbation channel, added to the mapped value
    RAW = "raw"        # added to the raw reading (continuous devices only)


@dataclass(frozen=True)
class NoiseConfig:
    device_id: str
    sigma: float
    mu: float = 1.0
    samples_per_draw: int = 100
    seed: int = 0
    mode: NoiseMode = NoiseMode.MAPPED

    def __post_init__(self):
        if self.sigma <= 0:
            raise ArgusError(f"noise sigma must be > 0 (got {self.sigma})")
        if self.samples_per_draw < 1:
            raise ArgusError("samples_per_draw must be >= 1")
        object.__setattr__(self, "mode", NoiseMode(self.mode))


def noise_draws(cfg: NoiseConfig, n: int) -> np.ndarray:
    """n draws, each the mean of samples_per_draw Normal(mu, sigma) samples."""
    rng = np.random.default_rng(cfg.seed)
    return rng.normal(cfg.mu, cfg.sigma, size=(n, cfg.samples_per_draw)).mean(axis=1)


def inject_noise(trace: Trace, cfg: NoiseConfig) -> Trace:
    devices = trace.device_map()
    if cfg.device_id not in devices:
        raise UnknownDeviceError(cfg.device_id, "noise target")
    if cfg.mode == NoiseMode.RAW and devices[cfg.device_id].kind != DeviceKind.CONTINUOUS:
        raise ArgusError(f"raw-value noise needs a continuous device, '{cfg.device_id}' is nominal")

    positions = [i for i, u in enumerate(trace.updates) if u.device_id == cfg.device_id]
    draws = noise_draws(cfg, len(positions))
    updates = list(trace.updates)
    for i, noise in zip(positions, draws):
        u = updates[i]
        if cfg.mode == NoiseMode.MAPPED:
            updates[i] = replace(u, perturbation=u.perturbation + float(noise))
        elif u.state is not None:
            updates[i] = replace(u, state=float(u.state) + float(noise))
    return trace.with_updates(updates, trace.labels, trace.scenarios)


# ─── Poisoning ────────────────────────────────────────────────


def flicker_pool(
    trace: Trace,
    episodes: int,
    seed: int = 0,
    light: str = DEFAULT_ROLES["light"],
    count: int = 20,
    period_s: float = 2.0,
) -> Trace:
    """Flicker episodes at random times across the trace span, as a labelled attack-only trace."""
    if light not in trace.device_map():
        raise UnknownDeviceError(light, "flicker pool")
    if len(trace.updates) < 2:
        raise ArgusError("flicker pool needs a trace with a time span")
    rng = np.random.default_rng(seed)
    lo, hi = trace.updates[0].timestamp, trace.updates[-1].timestamp - timedelta(seconds=count * period_s)
    span = (hi - lo).total_seconds()
    starts = sorted(lo + timedelta(seconds=float(s)) for s in rng.uniform(0.0, span, size=episodes))
    updates: List[StatusUpdate] = []
    for start in starts:
        updates.extend(flicker_updates(start, light, state_at(trace, light, start, "off"), count, period_s))
    updates.sort(key=lambda u: u.timestamp)
    kind = AttackKind.LIGHT_FLICKERING.value
    return trace.with_updates(updates, [1] * len(updates), [kind] * len(updates))


def poison_count(n_train: int, fraction: float) -> int:
    """Injected events k such that k / (n + k) is closest to fraction."""
    if not 0.0 <= fraction < 1.0:
        raise ArgusError(f"poison fraction must be in [0, 1) (got {fraction})")
    return int(round(fraction * n_train / (1.0 - fraction)))


def poison_training(train: Trace, attack_events: Trace, fraction: float) -> Trace:
    """Interleave the first k pool events into train so that k / total ≈ fraction."""
    k = poison_count(len(train.updates), fraction)
    if k == 0:
        return train
    if k > len(attack_events.updates):
        raise ArgusError(f"fraction {fraction} needs {k} attack events, pool has {len(attack_events.updates)}")
    catalog = train.device_map()
    chosen = list(attack_events.updates[:k])
    for u in chosen:
        if u.device_id not in catalog:
            raise UnknownDeviceError(u.device_id, "poison pool")
    pool_scenarios = attack_events.scenario_list()[:k]
    updates, labels, scenarios = merge_updates(train, chosen, [1] * k, pool_scenarios)
    logger.info(f"Poisoned training trace with {k} events ({k / len(updates):.4%})")
    return train.with_updates(updates, labels, scenarios)


# ─── Benchmark ────────────────────────────────────────────────


@dataclass
class Benchmark:
    trace: Trace
    train: Trace
    test_benign: Trace
    test: Trace
    scenarios: List[AttackScenario]
    profile: HomeProfile
    seed: int
    train_days: int


def _at_least(spans: List[Interval], minimum: timedelta) -> List[Interval]:
    return [s for s in spans if s[1] - s[0] >= minimum]


def plan_benchmark_attacks(test: Trace, label_tail: int = 0) -> List[AttackScenario]:
    """
    One scenario per attack kind, each in its own context interval of the
    test trace: weekday absences, nights, ventilation openings and an evening
    at home.
    """
    roles = DEFAULT_ROLES
    absences = _at_least(state_intervals(test, roles["presence"], "not_home"), timedelta(hours=1))
    nights = _at_least(state_intervals(test, roles["sleep"], "asleep"), timedelta(hours=2))
    ventilations = _at_least(state_intervals(test, roles["window"], "open"), timedelta(minutes=3))
    awake = _at_least(state_intervals(test, roles["sleep"], "awake"), timedelta(hours=4))

    needs = {"absence": (absences, 5), "night": (nights, 2), "ventilation": (ventilations, 1), "awake": (awake, 2)}
    for name, (spans, n) in needs.items():
        if len(spans) < n:
            raise PreconditionError(name, f"benchmark test span has {len(spans)} {name} intervals, needs {n}")

    params = {"label_tail": label_tail}
    evening = awake[-1]
    evening = (max(evening[0], evening[1] - timedelta(hours=4)), evening[1])
    plan = [
        (AttackKind.DOOR_OPEN_WHILE_ABSENT, absences[0]),
        (AttackKind.LIGHTS_ON_WHILE_ABSENT, absences[1]),
        (AttackKind.MOVEMENT_WHILE_ABSENT, absences[2]),
        (AttackKind.CAMERA_OFF_WHILE_ABSENT, absences[3]),
        (AttackKind.FAKE_FIRE_OPEN_WINDOWS, absences[4]),
        (AttackKind.LIGHTS_ON_DURING_NIGHT, nights[0]),
        (AttackKind.FAKE_FIRE_CLOSED_WINDOWS, nights[1]),
        (AttackKind.HEATING_WHILE_WINDOW_OPEN, ventilations[0]),
        (AttackKind.LIGHT_FLICKERING, evening),
    ]
    return [AttackScenario(kind, lo, hi, params=dict(params)) for kind, (lo, hi) in plan]


def build_benchmark(
    seed: int = 7,
    days: int = 14,
    train_days: int = 7,
    profile: Optional[HomeProfile] = None,
    label_tail: int = 0,
) -> Benchmark:
    """
    Generate a home, split off the training days and inject all nine attacks
    into the remaining days.
    """
    profile = replace(profile or default_profile(), seed=seed)
    trace = generate_home(profile, days)
    train, rest = split_by_days(trace, train_days)
    scenarios = plan_benchmark_attacks(rest, label_tail)
    test = rest
    for k, scenario in enumerate(scenarios):
        test = inject_attack(test, scenario, seed=seed + k)
    return Benchmark(trace, train, rest, test, scenarios, profile, seed, train_days)
