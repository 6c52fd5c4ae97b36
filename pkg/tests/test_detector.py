"""Detector strategy logic, fusion invariants, and event grouping."""

import dataclasses

import numpy as np
import pytest

from spoofbench.attacks import (
    find_stop_windows,
    find_turn_events,
    make_slow_drift,
    make_turn_by_turn,
    make_wrong_turn,
    apply_event,
)
from spoofbench.detector import (
    DetectorConfig,
    Flag,
    distance_strategy,
    motion_state,
    motion_strategy,
    report_to_text,
    parse_report_verdicts,
    run,
    turn_strategy,
)
from spoofbench.errors import ValidationError
from spoofbench.forest import fit, make_gyro_set, smote_resample
from spoofbench.geodesy import GeoPoint, TurnClass
from spoofbench.lstm import ShiftPredictor, TrainConfig, build_dataset, train
from spoofbench.simulator import NoiseProfile, RouteSpec, TelemetryRecord, simulate_trip
from spoofbench.store import TelemetryStore

ORIGIN = GeoPoint(33.2, -87.5)


def record(t, vel=(0.0, 0.0, 0.0), lat=33.2, lon=-87.5):
    return TelemetryRecord(
        t=t, lat=lat, lon=lon,
        accel_x=0.0, accel_y=0.0, accel_z=0.0,
        gyro_x=0.0, gyro_y=0.0, gyro_z=0.0,
        vel_n=vel[0], vel_e=vel[1], vel_u=vel[2],
    )


class TestMotionState:
    def test_all_zero_is_standstill(self):
        assert motion_state(record(0)) is False

    def test_exactly_at_threshold_is_standstill(self):
        assert motion_state(record(0, vel=(0.03, 0.03, 0.03))) is False

    def test_just_above_threshold_is_moving(self):
        assert motion_state(record(0, vel=(0.031, 0.0, 0.0))) is True

    def test_nonfinite_velocity_rejected(self):
        with pytest.raises(ValidationError):
            motion_state(record(0, vel=(float("nan"), 0, 0)))


@pytest.fixture(scope="module")
def world():
    """Trip, trained small models, and a clean store shared by the tests."""
    segments = []
    for k in range(16):
        segments.append(("N" if k % 2 == 0 else "S", 4))
        segments.append(("E", 1))
    segments.append(("N", 4))
    route = RouteSpec(ORIGIN, 100.0, tuple(segments), stop_probability=0.35)
    trip = simulate_trip(route, NoiseProfile(seed=51))
    split = build_dataset(trip, window=10)
    lstm_model = ShiftPredictor.new(hidden_size=32, window=10, seed=8)
    train(lstm_model, split.train, TrainConfig(epochs=40, batch_size=12, seed=8),
          validation=split.validation)
    gset = make_gyro_set(trip)
    forest_model = fit(smote_resample(gset, seed=8), n_trees=40, seed=8)
    return trip, lstm_model, forest_model


@pytest.fixture()
def clean_store(world):
    return TelemetryStore.from_trip(world[0])


class TestDistanceStrategy:
    def test_not_ready_at_start(self, world, clean_store):
        _, lstm_model, _ = world
        flag, residual = distance_strategy(lstm_model, clean_store, 0, DetectorConfig())
        assert flag is Flag.NOT_READY and residual is None

    def test_clean_cruise_ok(self, world, clean_store):
        trip, lstm_model, _ = world
        config = DetectorConfig()
        cruise = [r.t for r in trip.records if r.truth_moving and r.truth_shift > 11.0]
        flags = [distance_strategy(lstm_model, clean_store, t, config) for t in cruise[5:25]]
        assert all(f is Flag.OK for f, _ in flags)
        assert all(res < 0.3 for _, res in flags)

    def test_turn_by_turn_onset_alarm(self, world):
        trip, lstm_model, _ = world
        store = TelemetryStore.from_trip(trip)
        event = make_turn_by_turn(trip, 60, 20)
        apply_event(event, store)
        flag, residual = distance_strategy(lstm_model, store, 60, DetectorConfig())
        assert flag is Flag.ALARM
        assert residual > 50.0


class TestTurnStrategy:
    def test_clean_turns_ok(self, world, clean_store):
        trip, _, forest_model = world
        config = DetectorConfig()
        for onset, end, _ in find_turn_events(trip):
            for t in range(onset, end + 1):
                flag, gyro, gnss = turn_strategy(forest_model, clean_store, t, config)
                assert flag in (Flag.OK, Flag.NOT_READY)

    def test_wrong_turn_attack_alarms(self, world):
        trip, _, forest_model = world
        rights = [e for e in find_turn_events(trip) if e[2] is TurnClass.RIGHT]
        event = make_wrong_turn(trip, rights[0][0], TurnClass.LEFT, continue_s=15)
        store = TelemetryStore.from_trip(trip)
        apply_event(event, store)
        config = DetectorConfig()
        flags = [
            turn_strategy(forest_model, store, t, config)[0]
            for t in range(event.t_start, event.t_start + 10)
        ]
        assert Flag.ALARM in flags

    def test_standstill_suppression(self, world):
        trip, _, forest_model = world
        stops = find_stop_windows(trip)
        assert stops
        store = TelemetryStore.from_trip(trip)
        config = DetectorConfig()
        t0, t1 = stops[0]
        for t in range(max(t0, 2), t1 + 1):
            flag, _, _ = turn_strategy(forest_model, store, t, config)
            assert flag is Flag.OK


class TestMotionStrategy:
    def test_standstill_small_shift_ok(self):
        store = TelemetryStore()
        store.append(record(0))
        # 0.02 m north of the first fix.
        store.append(record(1, lat=33.2 + 0.02 / 111_317.0))
        assert motion_strategy(store, 1, DetectorConfig()) is Flag.OK

    def test_standstill_large_shift_alarm(self):
        store = TelemetryStore()
        store.append(record(0))
        store.append(record(1, lat=33.2 + 11.0 / 111_317.0))
        assert motion_strategy(store, 1, DetectorConfig()) is Flag.ALARM

    def test_moving_consistent_ok(self):
        store = TelemetryStore()
        store.append(record(0, vel=(11.18, 0, 0)))
        store.append(record(1, vel=(11.18, 0, 0), lat=33.2 + 11.2 / 111_317.0))
        assert motion_strategy(store, 1, DetectorConfig()) is Flag.OK

    def test_moving_gross_speed_mismatch_alarm(self):
        store = TelemetryStore()
        store.append(record(0, vel=(11.18, 0, 0)))
        store.append(record(1, vel=(11.18, 0, 0), lat=33.2 + 30.0 / 111_317.0))
        assert motion_strategy(store, 1, DetectorConfig()) is Flag.ALARM


class TestRun:
    def test_fused_is_or_of_strategies(self, world, clean_store):
        trip, lstm_model, forest_model = world
        report = run(lstm_model, forest_model, clean_store)
        for v in report.verdicts:
            expected = Flag.ALARM in (v.distance_flag, v.turn_flag, v.motion_flag)
            assert v.fused == expected

    def test_clean_trip_quiet_after_warmup(self, world, clean_store):
        trip, lstm_model, forest_model = world
        report = run(lstm_model, forest_model, clean_store)
        assert len(report.alarmed_timestamps()) <= 2
        assert len(report.events) <= 1

    def test_replay_determinism(self, world, clean_store):
        trip, lstm_model, forest_model = world
        a = report_to_text(run(lstm_model, forest_model, clean_store))
        b = report_to_text(run(lstm_model, forest_model, clean_store))
        assert a == b

    def test_matches_per_timestamp_strategies(self, world, clean_store):
        trip, lstm_model, forest_model = world
        config = DetectorConfig()
        report = run(lstm_model, forest_model, clean_store, config=config)
        sample = report.verdicts[::37]
        for v in sample:
            d_flag, residual = distance_strategy(lstm_model, clean_store, v.t, config)
            t_flag, _, _ = turn_strategy(forest_model, clean_store, v.t, config)
            m_flag = motion_strategy(clean_store, v.t, config)
            assert v.distance_flag is d_flag
            assert v.turn_flag is t_flag
            assert v.motion_flag is m_flag
            if residual is None:
                assert v.residual is None
            else:
                assert v.residual == pytest.approx(residual, abs=1e-9)

    def test_strategy_independence(self, world):
        trip, lstm_model, forest_model = world
        store = TelemetryStore.from_trip(trip)
        event = make_turn_by_turn(trip, 60, 15)
        apply_event(event, store)
        full = run(lstm_model, forest_model, store)
        no_turn = run(
            lstm_model, forest_model, store,
            config=DetectorConfig(enable_turn=False),
        )
        no_motion = run(
            lstm_model, forest_model, store,
            config=DetectorConfig(enable_motion=False),
        )
        for a, b in zip(full.verdicts, no_turn.verdicts):
            assert a.distance_flag is b.distance_flag
            assert a.motion_flag is b.motion_flag
        for a, b in zip(full.verdicts, no_motion.verdicts):
            assert a.distance_flag is b.distance_flag
            assert a.turn_flag is b.turn_flag

    def test_three_attacks_three_events(self, world):
        trip, lstm_model, forest_model = world
        store = TelemetryStore.from_trip(trip)
        events = [
            make_turn_by_turn(trip, 60, 12),
            make_turn_by_turn(trip, 140, 12),
            make_turn_by_turn(trip, 240, 12),
        ]
        for e in events:
            apply_event(e, store)
        report = run(lstm_model, forest_model, store, attacks=events)
        detected = {e.matched_attack for e in report.events if e.matched_attack is not None}
        assert detected == {0, 1, 2}
        assert not report.false_alarm_events()

    def test_slow_drift_detected_at_standstill(self, world):
        trip, lstm_model, forest_model = world
        stops = find_stop_windows(trip)
        long_stops = [s for s in stops if s[1] - s[0] >= 3 and s[0] > 15]
        assert long_stops
        t_on = long_stops[0][0] + 1
        drift = make_slow_drift(trip, t_on, 30, rate=0.2)
        store = TelemetryStore.from_trip(trip)
        apply_event(drift, store)
        report = run(lstm_model, forest_model, store, attacks=[drift])
        matched = [e for e in report.events if e.matched_attack == 0]
        assert matched
        delay = min(e.onset for e in matched) - t_on
        assert 1 <= delay <= 5

    def test_window_argument(self, world, clean_store):
        trip, lstm_model, forest_model = world
        report = run(lstm_model, forest_model, clean_store, window=(50, 100))
        assert report.verdicts[0].t == 50
        assert report.verdicts[-1].t == 100
        with pytest.raises(ValidationError):
            run(lstm_model, forest_model, clean_store, window=(-5, 10))


class TestReportFormat:
    def test_report_round_trip(self, world, clean_store):
        trip, lstm_model, forest_model = world
        report = run(lstm_model, forest_model, clean_store, window=(0, 80))
        text = report_to_text(report)
        rows = parse_report_verdicts(text)
        assert len(rows) == len(report.verdicts)
        assert rows[0]["t"] == 0
        assert rows[-1]["fused"] == report.verdicts[-1].fused
