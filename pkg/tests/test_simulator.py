from dataclasses import replace
from datetime import timedelta

import numpy as np
import pytest

from ml.error_handling import ArgusError, PreconditionError, ProfileError, TraceSpanError, UnknownDeviceError
from ml.simulator import (
    AttackKind,
    AttackScenario,
    Category,
    HomeProfile,
    NoiseConfig,
    NoiseMode,
    Rule,
    build_benchmark,
    default_profile,
    flicker_pool,
    generate_home,
    inject_attack,
    inject_noise,
    merge_updates,
    noise_draws,
    poison_count,
    poison_training,
    state_at,
    state_intervals,
)
from ml.trace import Origin, StatusUpdate, day_index, validate_trace, write_trace
from tests.conftest import at, make_trace


@pytest.fixture(scope="module")
def ventilated():
    return generate_home(replace(default_profile(seed=5), ventilation_prob=1.0), days=2)


def _absence(trace, k=0):
    return state_intervals(trace, "person.resident", "not_home")[k]


def _night(trace, k=0):
    return [s for s in state_intervals(trace, "sensor.sleep_state", "asleep") if s[1] - s[0] > timedelta(hours=4)][k]


def _observed(trace):
    return [u for u in trace.updates if u.origin == Origin.OBSERVED]


def _attacked(trace, kind, span, variant=None, **params):
    scenario = AttackScenario(kind, span[0], span[1], variant=variant, params=params)
    return scenario, inject_attack(trace, scenario, seed=1)


# ─── home generator ───


def test_generation_is_deterministic():
    profile = default_profile(seed=11)
    assert write_trace(generate_home(profile, 2)) == write_trace(generate_home(profile, 2))
    assert write_trace(generate_home(profile, 2, seed=12)) != write_trace(generate_home(profile, 2))


def test_generated_trace_is_valid_and_benign(home_trace):
    assert validate_trace(home_trace) == []
    assert set(home_trace.label_list()) == {0}
    reporting = {u.device_id for u in home_trace.updates}
    assert reporting == {d.device_id for d in home_trace.devices}


def test_generated_trace_covers_requested_days(home_trace):
    assert sorted(set(day_index(home_trace))) == [0, 1, 2, 3]


def test_weekday_absences_exist(home_trace):
    absences = state_intervals(home_trace, "person.resident", "not_home")
    assert len(absences) == 4
    assert all(hi - lo > timedelta(hours=6) for lo, hi in absences)


def test_lights_and_camera_follow_departures(home_trace):
    state = {}
    updates = home_trace.updates
    for i, u in enumerate(updates):
        if u.device_id == "person.resident" and u.state == "not_home":
            soon = [w for w in updates[i + 1:i + 40] if w.timestamp <= u.timestamp + timedelta(seconds=3.001)]
            for light in ("light.ceiling", "light.desk_lamp"):
                if state.get(light) == "on":
                    assert any(w.device_id == light and w.state == "off" for w in soon)
            assert any(w.device_id == "camera.status" and w.state == "recording" for w in soon)
        state[u.device_id] = u.state


def test_heating_switches_off_when_window_opens(ventilated):
    updates = ventilated.updates
    openings = [i for i, u in enumerate(updates) if u.device_id == "binary_sensor.window" and u.state == "open"]
    assert len(openings) == 2
    for i in openings:
        soon = [w for w in updates[i + 1:i + 20] if w.timestamp <= updates[i].timestamp + timedelta(seconds=3.001)]
        assert any(w.device_id == "climate.thermostat" and w.state == "off" for w in soon)


def test_partial_roster():
    profile = replace(
        default_profile(), roster=("person.resident", "sensor.sleep_state", "light.ceiling", "sensor.temperature"),
        rules=(Rule.LIGHTS_OFF_WHEN_ABSENT, Rule.LIGHTS_OFF_AT_NIGHT),
    )
    trace = generate_home(profile, 1)
    assert {d.device_id for d in trace.devices} == set(profile.roster)
    assert {u.device_id for u in trace.updates} <= set(profile.roster)


@pytest.mark.parametrize(
    "changes",
    [
        {"roster": ("person.resident", "toaster")},
        {"roster": ("person.resident", "light.ceiling")},
        {"wake_time": "18:00"},
        {"wake_time": "7h"},
        {"forget_lights_prob": 1.5},
        {"tz": "Mars/Olympus"},
    ],
)
def test_invalid_profiles(changes):
    with pytest.raises((ProfileError, ValueError)):
        replace(default_profile(), **changes)


def test_profile_dict_round_trip():
    profile = default_profile(seed=4)
    assert HomeProfile.from_dict(profile.to_dict()) == profile
    with pytest.raises(ProfileError):
        HomeProfile.from_dict({"pets": 2})


def test_zero_days_is_rejected():
    with pytest.raises(ProfileError):
        generate_home(default_profile(), 0)


# ─── context helpers ───


def test_state_intervals_and_state_at():
    trace = make_trace([(0, "p", "home"), (10, "p", "away"), (20, "p", "away"), (30, "p", "home"), (40, "p", "away")])
    assert state_intervals(trace, "p", "away") == [(at(10), at(30)), (at(40), at(40))]
    assert state_at(trace, "p", at(10)) == "home"
    assert state_at(trace, "p", at(10.5)) == "away"
    assert state_at(trace, "q", at(10.5), default="off") == "off"


def test_merge_keeps_existing_updates_first_on_ties():
    trace = make_trace([(0, "a", "x"), (5, "a", "y")], labels=[0, 0])
    injected = [StatusUpdate(at(5), "a", "z", Origin.INJECTED)]
    updates, labels, scenarios = merge_updates(trace, injected, [1], ["k"])
    assert [u.state for u in updates] == ["x", "y", "z"]
    assert labels == [0, 0, 1] and scenarios == [None, None, "k"]


# ─── attacks ───


@pytest.mark.parametrize(
    "kind, variant, injected",
    [
        (AttackKind.LIGHTS_ON_WHILE_ABSENT, Category.CS, 2),
        (AttackKind.LIGHTS_ON_WHILE_ABSENT, Category.ES, 4),
        (AttackKind.MOVEMENT_WHILE_ABSENT, Category.ES, 2),
        (AttackKind.CAMERA_OFF_WHILE_ABSENT, Category.CS, 2),
        (AttackKind.CAMERA_OFF_WHILE_ABSENT, Category.ES, 4),
        (AttackKind.DOOR_OPEN_WHILE_ABSENT, Category.CS, 4),
        (AttackKind.FAKE_FIRE_OPEN_WINDOWS, Category.ES, 5),
    ],
)
def test_spoofing_during_absence(home_trace, kind, variant, injected):
    scenario, attacked = _attacked(home_trace, kind, _absence(home_trace, 1), variant)
    extra = [u for u in attacked.updates if u.origin == Origin.INJECTED]
    assert len(extra) == injected
    assert all(scenario.start <= u.timestamp <= scenario.end for u in extra)
    assert sum(attacked.label_list()) == injected
    assert set(s for s in attacked.scenario_list() if s) == {kind.value}
    assert _observed(attacked) == list(home_trace.updates)
    assert validate_trace(attacked) == []


def test_door_spoofing_unlocks_then_relocks(home_trace):
    _, attacked = _attacked(home_trace, AttackKind.DOOR_OPEN_WHILE_ABSENT, _absence(home_trace), Category.CS)
    extra = [(u.device_id, u.state) for u in attacked.updates if u.origin == Origin.INJECTED]
    assert extra == [
        ("lock.front_door", "unlocked"),
        ("binary_sensor.front_door", "open"),
        ("binary_sensor.front_door", "closed"),
        ("lock.front_door", "locked"),
    ]


def _departure_window(trace):
    lo, _ = _absence(trace)
    return lo - timedelta(minutes=5), lo + timedelta(minutes=30)


def test_door_interception_drops_departure_lock(home_trace):
    span = _departure_window(home_trace)
    _, attacked = _attacked(home_trace, AttackKind.DOOR_OPEN_WHILE_ABSENT, span, Category.CI)
    assert len(attacked.updates) == len(home_trace.updates) - 1

    def locks(t):
        return [u.state for u in t.updates if u.device_id == "lock.front_door" and span[0] <= u.timestamp <= span[1]]

    assert locks(home_trace) == ["unlocked", "locked"]
    assert locks(attacked) == ["unlocked"]
    assert sum(attacked.label_list()) == 1


def test_door_event_interception_also_drops_closed_report(home_trace):
    span = _departure_window(home_trace)
    _, attacked = _attacked(home_trace, AttackKind.DOOR_OPEN_WHILE_ABSENT, span, Category.EI)
    assert len(attacked.updates) == len(home_trace.updates) - 2
    doors = [u.state for u in attacked.updates if u.device_id == "binary_sensor.front_door" and span[0] <= u.timestamp <= span[1]]
    assert doors == ["open"]


def test_door_interception_without_lock_event_fails(home_trace):
    lo, hi = _absence(home_trace)
    with pytest.raises(PreconditionError) as err:
        _attacked(home_trace, AttackKind.DOOR_OPEN_WHILE_ABSENT, (lo + timedelta(hours=1), hi - timedelta(hours=1)), Category.EI)
    assert err.value.missing_context == "lock.front_door=locked"


def test_absence_attack_outside_absence_fails(home_trace):
    night = _night(home_trace)
    with pytest.raises(PreconditionError):
        _attacked(home_trace, AttackKind.LIGHTS_ON_WHILE_ABSENT, night)


def test_flicker_toggles_twenty_times(home_trace):
    lo, hi = _absence(home_trace, 2)
    _, attacked = _attacked(home_trace, AttackKind.LIGHT_FLICKERING, (lo, hi))
    extra = [u for u in attacked.updates if u.origin == Origin.INJECTED]
    assert len(extra) == 20
    assert all(u.device_id == "light.ceiling" for u in extra)
    assert all(a.state != b.state for a, b in zip(extra, extra[1:]))
    gaps = {round((b.timestamp - a.timestamp).total_seconds(), 3) for a, b in zip(extra, extra[1:])}
    assert gaps <= {1.999, 2.0, 2.001}


def test_flicker_count_and_period_are_parameters(home_trace):
    _, attacked = _attacked(home_trace, AttackKind.LIGHT_FLICKERING, _absence(home_trace), flicker_count=6, flicker_period_s=5.0)
    assert sum(u.origin == Origin.INJECTED for u in attacked.updates) == 6


def test_lights_on_during_night(home_trace):
    night = _night(home_trace)
    _, attacked = _attacked(home_trace, AttackKind.LIGHTS_ON_DURING_NIGHT, night)
    extra = [(u.device_id, u.state) for u in attacked.updates if u.origin == Origin.INJECTED]
    assert extra == [("light.ceiling", "on"), ("light.ceiling", "off")]


def test_fake_fire_with_closed_windows(home_trace):
    _, attacked = _attacked(home_trace, AttackKind.FAKE_FIRE_CLOSED_WINDOWS, _night(home_trace))
    extra = [(u.device_id, u.state) for u in attacked.updates if u.origin == Origin.INJECTED]
    assert extra == [("sensor.temperature", 60.0), ("sensor.temperature", 62.0), ("sensor.temperature", 64.0)]


def test_heating_spoofed_while_window_open(ventilated):
    lo, hi = state_intervals(ventilated, "binary_sensor.window", "open")[0]
    _, attacked = _attacked(ventilated, AttackKind.HEATING_WHILE_WINDOW_OPEN, (lo, hi))
    extra = [u for u in attacked.updates if u.origin == Origin.INJECTED]
    assert [(u.device_id, u.state) for u in extra] == [("climate.thermostat", "heat")]
    assert lo < extra[0].timestamp < hi


@pytest.mark.parametrize("variant, removed", [(Category.CI, 1), (Category.EI, 2)])
def test_heating_rule_interception(ventilated, variant, removed):
    lo, _ = state_intervals(ventilated, "binary_sensor.window", "open")[0]
    span = (lo - timedelta(minutes=1), lo + timedelta(minutes=4))
    _, attacked = _attacked(ventilated, AttackKind.HEATING_WHILE_WINDOW_OPEN, span, variant)
    assert len(attacked.updates) == len(ventilated.updates) - removed
    offs = [
        u for u in attacked.updates
        if u.device_id == "climate.thermostat" and u.state == "off" and span[0] <= u.timestamp <= span[1]
    ]
    assert offs == []
    assert sum(attacked.label_list()) == 1


def test_heating_interception_keeps_rule_response_after_window_end(ventilated):
    lo, _ = state_intervals(ventilated, "binary_sensor.window", "open")[0]
    span = (lo - timedelta(minutes=1), lo)
    with pytest.raises(PreconditionError):
        _attacked(ventilated, AttackKind.HEATING_WHILE_WINDOW_OPEN, span, Category.CI)
    _, attacked = _attacked(ventilated, AttackKind.HEATING_WHILE_WINDOW_OPEN, span, Category.EI)
    assert len(attacked.updates) == len(ventilated.updates) - 1
    offs = [
        u for u in attacked.updates
        if u.device_id == "climate.thermostat" and u.state == "off" and lo < u.timestamp <= lo + timedelta(seconds=10)
    ]
    assert len(offs) == 1


def test_door_interception_needs_presence_to_follow_the_lock(home_trace):
    lo, hi = _absence(home_trace)
    # the return lock is followed by the next morning's departure, hours later
    span = (hi - timedelta(minutes=1), hi + timedelta(minutes=10))
    with pytest.raises(PreconditionError):
        _attacked(home_trace, AttackKind.DOOR_OPEN_WHILE_ABSENT, span, Category.CI)


def test_label_tail_marks_following_events(home_trace):
    _, attacked = _attacked(home_trace, AttackKind.MOVEMENT_WHILE_ABSENT, _absence(home_trace), label_tail=5)
    assert sum(attacked.label_list()) == 2 + 5


def test_labels_outside_window_stay_benign(home_trace):
    scenario, attacked = _attacked(home_trace, AttackKind.CAMERA_OFF_WHILE_ABSENT, _absence(home_trace), label_tail=3)
    for u, y in zip(attacked.updates, attacked.label_list()):
        if not scenario.start <= u.timestamp <= scenario.end:
            assert y == 0


def test_attacks_compose(home_trace):
    _, once = _attacked(home_trace, AttackKind.MOVEMENT_WHILE_ABSENT, _absence(home_trace, 0))
    _, twice = _attacked(once, AttackKind.LIGHTS_ON_DURING_NIGHT, _night(once))
    assert set(twice.scenario_list()) == {None, "movement_while_absent", "lights_on_during_night"}
    assert validate_trace(twice) == []


def test_unknown_target_device(home_trace):
    lo, hi = _absence(home_trace)
    scenario = AttackScenario(AttackKind.LIGHTS_ON_WHILE_ABSENT, lo, hi, targets={"light": "light.garage"})
    with pytest.raises(UnknownDeviceError):
        inject_attack(home_trace, scenario)


def test_scenario_validation(home_trace):
    lo, hi = _absence(home_trace)
    with pytest.raises(ArgusError):
        AttackScenario(AttackKind.LIGHT_FLICKERING, lo, hi, variant=Category.ES)
    with pytest.raises(ArgusError):
        AttackScenario(AttackKind.LIGHT_FLICKERING, hi, lo)
    with pytest.raises(ArgusError):
        AttackScenario(AttackKind.LIGHT_FLICKERING, lo, hi, params={"speed": 3})
    late = home_trace.updates[-1].timestamp + timedelta(days=1)
    with pytest.raises(ArgusError):
        inject_attack(home_trace, AttackScenario(AttackKind.LIGHT_FLICKERING, late, late + timedelta(hours=1)))


@pytest.mark.parametrize("edge", ["start", "end"])
def test_attack_window_past_trace_edges_is_rejected(home_trace, edge):
    first, last = home_trace.updates[0].timestamp, home_trace.updates[-1].timestamp
    lo, hi = _absence(home_trace)
    span = (first - timedelta(minutes=1), lo) if edge == "start" else (hi, last + timedelta(minutes=1))
    with pytest.raises(TraceSpanError):
        _attacked(home_trace, AttackKind.LIGHT_FLICKERING, span)


def test_scenario_dict_round_trip(home_trace):
    lo, hi = _absence(home_trace)
    scenario = AttackScenario("door_open_while_absent", lo, hi, variant="EI", params={"label_tail": 4})
    assert AttackScenario.from_dict(scenario.to_dict()) == scenario


# ─── noise ───


def test_noise_draws_average_to_mu():
    draws = noise_draws(NoiseConfig("sensor.temperature", sigma=1.0, seed=0), 10_000)
    assert 0.99 <= draws.mean() <= 1.01
    assert draws.std() == pytest.approx(0.1, rel=0.05)


def test_mapped_noise_touches_only_the_target(home_trace):
    noisy = inject_noise(home_trace, NoiseConfig("light.ceiling", sigma=0.5, seed=2))
    for before, after in zip(home_trace.updates, noisy.updates):
        if before.device_id == "light.ceiling":
            assert after.perturbation != 0.0 and after.state == before.state
        else:
            assert after == before


def test_raw_noise_shifts_continuous_readings(home_trace):
    noisy = inject_noise(home_trace, NoiseConfig("sensor.humidity", sigma=1.0, seed=2, mode=NoiseMode.RAW))
    shifted = [(a.state - b.state) for a, b in zip(noisy.updates, home_trace.updates) if b.device_id == "sensor.humidity"]
    assert 0.9 < float(np.mean(shifted)) < 1.1


def test_noise_config_errors(home_trace):
    with pytest.raises(ArgusError):
        NoiseConfig("light.ceiling", sigma=0.0)
    with pytest.raises(ArgusError):
        inject_noise(home_trace, NoiseConfig("light.ceiling", sigma=1.0, mode=NoiseMode.RAW))
    with pytest.raises(UnknownDeviceError):
        inject_noise(home_trace, NoiseConfig("light.garage", sigma=1.0))


# ─── poisoning ───


def test_poison_count():
    assert poison_count(10_000, 0.006) in (59, 60, 61)
    assert poison_count(500, 0.0) == 0
    with pytest.raises(ArgusError):
        poison_count(100, 1.0)


def test_flicker_pool_is_labelled_attack_events(home_trace):
    pool = flicker_pool(home_trace, episodes=3, seed=1)
    assert len(pool.updates) == 60
    assert set(pool.label_list()) == {1}
    assert set(pool.scenario_list()) == {"light_flickering"}


def test_poisoned_training_share(home_trace):
    pool = flicker_pool(home_trace, episodes=50, seed=1)
    poisoned = poison_training(home_trace, pool, 0.05)
    k = poison_count(len(home_trace.updates), 0.05)
    assert sum(poisoned.label_list()) == k
    assert k / len(poisoned.updates) == pytest.approx(0.05, abs=0.001)
    assert validate_trace(poisoned) == []
    assert poison_training(home_trace, pool, 0.0) is home_trace


def test_pool_too_small(home_trace):
    pool = flicker_pool(home_trace, episodes=1, seed=1)
    with pytest.raises(ArgusError):
        poison_training(home_trace, pool, 0.5)


# ─── benchmark ───


def test_benchmark_injects_all_nine_attacks():
    bench = build_benchmark(seed=7)
    kinds = {s for s in bench.test.scenario_list() if s}
    assert kinds == {k.value for k in AttackKind}
    assert len(bench.scenarios) == 9
    assert set(bench.train.label_list()) == {0}
    assert validate_trace(bench.test) == []
    assert write_trace(build_benchmark(seed=7).test) == write_trace(bench.test)
