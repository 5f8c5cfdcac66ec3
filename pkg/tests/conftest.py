"""Shared fixtures: hand-built traces, a short simulated home and a tiny trained detector."""

from datetime import datetime, timedelta, timezone

import pytest

from ml.detector import fit
from ml.nn import TrainConfig
from ml.simulator import default_profile, generate_home
from ml.threshold import ThresholdConfig
from ml.trace import DeviceDescriptor, DeviceKind, Origin, StatusUpdate, Trace, split_by_days

T0 = datetime(2024, 1, 1, 8, 0, tzinfo=timezone.utc)


def at(seconds: float) -> datetime:
    return T0 + timedelta(seconds=seconds)


def make_trace(rows, devices=None, labels=None, scenarios=None, tz="UTC") -> Trace:
    """rows: (seconds after T0, device_id, state[, origin])."""
    updates = []
    for row in rows:
        seconds, device_id, state = row[:3]
        origin = row[3] if len(row) > 3 else Origin.OBSERVED
        updates.append(StatusUpdate(at(seconds), device_id, state, origin))
    if devices is None:
        kinds = {}
        for u in updates:
            kinds.setdefault(u.device_id, DeviceKind.CONTINUOUS if isinstance(u.state, float) else DeviceKind.NOMINAL)
        devices = [DeviceDescriptor(d, k) for d, k in kinds.items()]
    return Trace(
        devices=tuple(devices),
        updates=tuple(updates),
        labels=tuple(labels) if labels is not None else None,
        scenarios=tuple(scenarios) if scenarios is not None else None,
        tz=tz,
    )


@pytest.fixture
def lock_temp_trace() -> Trace:
    return make_trace(
        [
            (0, "lock.front", "locked"),
            (10, "sensor.temp", 10.0),
            (20, "lock.front", "unlocked"),
            (30, "sensor.temp", 30.0),
            (40, "sensor.temp", 21.3),
        ],
        devices=[
            DeviceDescriptor("lock.front", DeviceKind.NOMINAL, "Front lock"),
            DeviceDescriptor("sensor.temp", DeviceKind.CONTINUOUS),
        ],
    )


@pytest.fixture(scope="session")
def home_trace() -> Trace:
    return generate_home(default_profile(seed=3), days=4)


@pytest.fixture(scope="session")
def home_split(home_trace):
    return split_by_days(home_trace, 3)


@pytest.fixture(scope="session")
def tiny_train_cfg() -> TrainConfig:
    return TrainConfig(
        hidden=(4, 2),
        max_epochs=3,
        lr_milestones=(),
        dropout=0.0,
        batch_size=32,
        seed=0,
    )


@pytest.fixture(scope="session")
def tiny_detector(home_split, tiny_train_cfg):
    train, _ = home_split
    return fit(train, tiny_train_cfg, ThresholdConfig(), l=4, context_depth=3)
