"""Simulator tests: route geometry, kinematic identities, noise, interchange."""

import math

import numpy as np
import pytest

from spoofbench.errors import FormatError, ValidationError
from spoofbench.geodesy import GeoPoint, TurnClass, geo_to_enu, haversine_distance
from spoofbench.simulator import (
    NoiseProfile,
    RouteSpec,
    Trip,
    ZERO_NOISE,
    build_path,
    generate_route,
    label_turn_windows,
    parse_trip,
    simulate_trip,
    trip_to_text,
)

ORIGIN = GeoPoint(33.2, -87.5)


def straight_route(blocks=5, **kw):
    return RouteSpec(ORIGIN, 100.0, (("N", blocks),), **kw)


class TestRouteSpec:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValidationError):
            RouteSpec(ORIGIN, 0.0, (("N", 1),))
        with pytest.raises(ValidationError):
            RouteSpec(ORIGIN, 100.0, ())
        with pytest.raises(ValidationError):
            RouteSpec(ORIGIN, 100.0, (("N", 0),))
        with pytest.raises(ValidationError):
            RouteSpec(ORIGIN, 100.0, (("X", 1),))

    def test_rejects_repeated_and_opposite_directions(self):
        with pytest.raises(ValidationError):
            RouteSpec(ORIGIN, 100.0, (("N", 1), ("N", 1)))
        with pytest.raises(ValidationError):
            RouteSpec(ORIGIN, 100.0, (("N", 1), ("S", 1)))

    def test_rejects_self_overlap(self):
        # A loop that comes back to the start node.
        with pytest.raises(ValidationError):
            RouteSpec(ORIGIN, 100.0, (("N", 1), ("E", 1), ("S", 1), ("W", 1)))

    def test_round_trips_through_dict(self):
        spec = RouteSpec(ORIGIN, 80.0, (("N", 2), ("E", 1)), 9.0, 0.25)
        assert RouteSpec.from_dict(spec.to_dict()) == spec


class TestGenerateRoute:
    def test_straight_polyline(self):
        points = generate_route(RouteSpec(ORIGIN, 100.0, (("N", 2),)))
        assert len(points) == 201
        enu = [geo_to_enu(p, ORIGIN) for p in points]
        assert all(abs(q.east) < 1e-6 for q in enu)
        assert enu[-1].north == pytest.approx(200.0, abs=1e-6)

    def test_single_right_turn_geometry(self):
        spec = RouteSpec(ORIGIN, 100.0, (("N", 1), ("E", 1)))
        points = generate_route(spec)
        enu = [geo_to_enu(p, ORIGIN) for p in points]
        # Ends one block north and one block east of the start, on the grid.
        assert enu[-1].east == pytest.approx(100.0, abs=0.01)
        assert enu[-1].north == pytest.approx(100.0, abs=0.01)

    def test_total_length_matches_arc_corrections(self):
        radius = 8.0
        spec = RouteSpec(ORIGIN, 100.0, (("N", 2), ("E", 1), ("N", 2)))
        path = build_path(spec, radius)
        blocks = 500.0
        n_turns = 2
        expected = blocks - n_turns * 2 * radius + n_turns * radius * math.pi / 2
        assert path.total_length == pytest.approx(expected, abs=1e-9)

    def test_segment_shorter_than_radius_rejected(self):
        spec = RouteSpec(ORIGIN, 10.0, (("N", 1), ("E", 1), ("N", 1)))
        with pytest.raises(ValidationError):
            build_path(spec, arc_radius=8.0)


class TestSimulateTrip:
    def test_zero_noise_constant_speed_shifts(self):
        trip = simulate_trip(straight_route(), ZERO_NOISE, start_at_cruise=True)
        for rec in trip.records[1:]:
            assert rec.truth_shift == pytest.approx(11.18, abs=0.01)
            assert rec.truth_moving
        fixes = [r.fix for r in trip.records]
        for a, b in zip(fixes, fixes[1:]):
            assert haversine_distance(a, b) == pytest.approx(11.18, abs=0.01)

    def test_zero_noise_standstill_prefix(self):
        trip = simulate_trip(straight_route(), ZERO_NOISE, lead_in_stop_s=10.0)
        head = trip.records[:9]
        for rec in head:
            assert rec.vel_n == 0.0 and rec.vel_e == 0.0 and rec.vel_u == 0.0
            assert rec.truth_moving is False

    def test_fixed_seed_byte_identical(self):
        route = straight_route(stop_probability=0.5)
        noise = NoiseProfile(seed=11)
        a = trip_to_text(simulate_trip(route, noise))
        b = trip_to_text(simulate_trip(route, noise))
        assert a == b
        c = trip_to_text(simulate_trip(route, NoiseProfile(seed=12)))
        assert a != c

    def test_consecutive_fix_distance_matches_truth_shift(self):
        # Planar-vs-sphere discrepancy at 11 m steps stays under 1 mm.
        route = RouteSpec(ORIGIN, 100.0, (("N", 3), ("E", 1), ("S", 3)))
        trip = simulate_trip(route, ZERO_NOISE)
        for i in range(1, len(trip.records)):
            d = haversine_distance(trip.records[i - 1].fix, trip.records[i].fix)
            assert abs(d - trip.records[i].truth_shift) < 1e-3

    def test_gyro_integral_matches_turn_heading_change(self):
        route = RouteSpec(ORIGIN, 100.0, (("N", 2), ("E", 2)))
        trip = simulate_trip(route, ZERO_NOISE)
        total = sum(rec.gyro_z for rec in trip.records)
        # Right turn: compass heading +90, z-up gyro integral -90.
        assert total == pytest.approx(-90.0, abs=1.0)

    def test_velocity_noise_realization(self):
        noise = NoiseProfile(seed=5)
        trip = simulate_trip(straight_route(1), noise, lead_in_stop_s=11000.0)
        standstill = [r for r in trip.records if not r.truth_moving]
        assert len(standstill) >= 10_000
        for axis in ("vel_n", "vel_e", "vel_u"):
            values = np.array([getattr(r, axis) for r in standstill])
            assert abs(values.std() - noise.vel_std) / noise.vel_std < 0.2

    def test_turn_labels_cover_turns(self):
        route = RouteSpec(ORIGIN, 100.0, (("N", 2), ("E", 1), ("N", 2)))
        trip = simulate_trip(route, ZERO_NOISE)
        labels = [r.truth_turn for r in trip.records]
        rights = sum(1 for l in labels if l is TurnClass.RIGHT)
        lefts = sum(1 for l in labels if l is TurnClass.LEFT)
        assert rights >= 2  # N->E right turn spans multiple 1 Hz samples
        assert lefts >= 2  # E->N comes back as a left turn
        # Straight stretch stays unlabeled.
        assert labels[0] is TurnClass.NO_TURN

    def test_label_turn_windows_relabels(self):
        trip = simulate_trip(straight_route(2), ZERO_NOISE)
        relabeled = label_turn_windows(trip)
        assert all(r.truth_turn is TurnClass.NO_TURN for r in relabeled.records)
        stripped = Trip(records=trip.records)
        with pytest.raises(ValidationError):
            label_turn_windows(stripped)

    def test_stop_probability_draws_change_profile(self):
        route = straight_route(6, stop_probability=1.0)
        spec2 = RouteSpec(ORIGIN, 100.0, (("N", 3), ("E", 1), ("N", 2)), stop_probability=1.0)
        trip = simulate_trip(spec2, ZERO_NOISE)
        assert any(not r.truth_moving for r in trip.records)


class TestInterchange:
    def test_round_trip_bytes(self):
        route = straight_route(2, stop_probability=0.3)
        trip = simulate_trip(route, NoiseProfile(seed=3))
        text = trip_to_text(trip)
        again = trip_to_text(parse_trip(text))
        assert text == again

    def test_field_mode_without_truth(self):
        trip = simulate_trip(straight_route(1), ZERO_NOISE)
        bare = Trip(
            records=[
                type(trip.records[0])(
                    **{
                        **{k: getattr(r, k) for k in (
                            "t", "lat", "lon", "accel_x", "accel_y", "accel_z",
                            "gyro_x", "gyro_y", "gyro_z", "vel_n", "vel_e", "vel_u",
                        )}
                    }
                )
                for r in trip.records
            ]
        )
        text = trip_to_text(bare)
        assert "truth_turn" not in text.splitlines()[0]
        loaded = parse_trip(text)
        assert loaded.records[0].truth_shift is None

    def test_parse_errors_name_line(self):
        with pytest.raises(FormatError, match="header"):
            parse_trip("a,b,c\n")
        trip = simulate_trip(straight_route(1), ZERO_NOISE)
        text = trip_to_text(trip)
        lines = text.splitlines()
        lines[2] = lines[2].replace(",", ";", 1)
        with pytest.raises(FormatError, match="line 3"):
            parse_trip("\n".join(lines))

    def test_nine_significant_digit_floats(self):
        trip = simulate_trip(straight_route(1), NoiseProfile(seed=1))
        row = trip_to_text(trip).splitlines()[3].split(",")
        for token in row[1:12]:
            mantissa = token.lstrip("-").replace(".", "").split("e")[0].lstrip("0")
            assert len(mantissa) <= 9
