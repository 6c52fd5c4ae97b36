"""Geodesy unit tests against independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofbench.errors import DegenerateGeometryError, DomainError, RangeError
from spoofbench.geodesy import (
    EARTH_RADIUS_M,
    EnuPoint,
    GeoPoint,
    TurnClass,
    classify_gnss_turn,
    enu_to_geo,
    geo_to_enu,
    gnss_turn_angle,
    haversine_distance,
)


def law_of_cosines_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Independent spherical-law-of-cosines oracle."""
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dl = math.radians(b.lon - a.lon)
    x = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_M * math.acos(max(-1.0, min(1.0, x)))


class TestHaversine:
    def test_identical_points(self):
        p = GeoPoint(10.0, 20.0)
        assert haversine_distance(p, p) == 0.0

    def test_quarter_circle(self):
        d = haversine_distance(GeoPoint(0, 0), GeoPoint(0, 90))
        expected = EARTH_RADIUS_M * math.pi / 2.0
        assert abs(d - expected) / expected < 1e-12
        assert round(expected) == 10018539

    def test_meridian_degree(self):
        d = haversine_distance(GeoPoint(0, 0), GeoPoint(1, 0))
        expected = EARTH_RADIUS_M * math.pi / 180.0
        assert abs(d - expected) / expected < 1e-12
        assert round(expected) == 111317

    def test_agrees_with_law_of_cosines(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            a = GeoPoint(rng.uniform(-89, 89), rng.uniform(-180, 180))
            b = GeoPoint(rng.uniform(-89, 89), rng.uniform(-180, 180))
            d = haversine_distance(a, b)
            if d < 10_000 or d > 0.95 * math.pi * EARTH_RADIUS_M:
                continue  # oracle ill-conditioned near coincident/antipodal pairs
            assert abs(d - law_of_cosines_distance(a, b)) / d < 1e-9

    @given(
        st.floats(-90, 90),
        st.floats(-180, 180),
        st.floats(-90, 90),
        st.floats(-180, 180),
    )
    @settings(max_examples=200)
    def test_symmetric_and_nonnegative(self, lat1, lon1, lat2, lon2):
        a, b = GeoPoint(lat1, lon1), GeoPoint(lat2, lon2)
        assert haversine_distance(a, b) == haversine_distance(b, a)
        assert haversine_distance(a, b) >= 0.0

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            GeoPoint(float("nan"), 0.0)
        with pytest.raises(DomainError):
            GeoPoint(91.0, 0.0)
        with pytest.raises(DomainError):
            GeoPoint(0.0, 181.0)


class TestTangentPlane:
    def test_origin_maps_to_zero(self):
        origin = GeoPoint(33.2, -87.5)
        e = geo_to_enu(origin, origin)
        assert e.east == 0.0 and e.north == 0.0

    def test_meridian_arc_inverse(self):
        g = enu_to_geo(EnuPoint(0.0, 111_317.0), GeoPoint(0, 0))
        assert g.lat == pytest.approx(1.0, abs=1e-5)
        assert g.lon == 0.0

    def test_round_trip_property(self):
        origin = GeoPoint(33.2, -87.5)
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(1000):
            p = EnuPoint(rng.uniform(-5000, 5000), rng.uniform(-5000, 5000))
            q = geo_to_enu(enu_to_geo(p, origin), origin)
            worst = max(worst, abs(q.east - p.east), abs(q.north - p.north))
        assert worst < 1e-6

    def test_range_errors(self):
        with pytest.raises(RangeError):
            geo_to_enu(GeoPoint(34.5, -87.5), GeoPoint(33.2, -87.5))
        with pytest.raises(RangeError):
            enu_to_geo(EnuPoint(0.0, 200_000.0), GeoPoint(0, 0))


def triple_from_enu(coords, origin=GeoPoint(33.2, -87.5)):
    return [enu_to_geo(EnuPoint(e, n), origin) for e, n in coords]


class TestTurnAngle:
    def test_collinear_north(self):
        p0, p1, p2 = triple_from_enu([(0, 0), (0, 11), (0, 22)])
        assert abs(gnss_turn_angle(p0, p1, p2)) < 1e-6

    def test_right_angle(self):
        p0, p1, p2 = triple_from_enu([(0, 0), (0, 11), (11, 11)])
        assert gnss_turn_angle(p0, p1, p2) == pytest.approx(90.0, abs=0.01)

    def test_left_angle_mirror(self):
        p0, p1, p2 = triple_from_enu([(0, 0), (0, 11), (-11, 11)])
        assert gnss_turn_angle(p0, p1, p2) == pytest.approx(-90.0, abs=0.01)

    def test_degenerate_segment(self):
        p = GeoPoint(33.2, -87.5)
        q = GeoPoint(33.2001, -87.5)
        with pytest.raises(DegenerateGeometryError):
            gnss_turn_angle(p, p, q)
        with pytest.raises(DegenerateGeometryError):
            gnss_turn_angle(q, p, p)

    def test_mirror_reflection_negates(self):
        # Reflect the third point across the first segment's line; the turn
        # angle must flip sign.
        rng = np.random.default_rng(3)
        for _ in range(300):
            ax, ay = rng.uniform(-50, 50, 2)
            hx, hy = rng.uniform(-1, 1, 2)
            norm = math.hypot(hx, hy)
            if norm < 1e-3:
                continue
            hx, hy = hx / norm, hy / norm
            seg = rng.uniform(5, 30)
            bx, by = ax + seg * hx, ay + seg * hy
            t = rng.uniform(5, 30)
            u = rng.uniform(-30, 30)
            # c = b + t*heading + u*left-normal; mirror flips u.
            cx, cy = bx + t * hx - u * hy, by + t * hy + u * hx
            mx, my = bx + t * hx + u * hy, by + t * hy - u * hx
            p0, p1, p2 = triple_from_enu([(ax, ay), (bx, by), (cx, cy)])
            _, _, p2m = triple_from_enu([(ax, ay), (bx, by), (mx, my)])
            a1 = gnss_turn_angle(p0, p1, p2)
            a2 = gnss_turn_angle(p0, p1, p2m)
            assert a1 == pytest.approx(-a2, abs=0.05)


class TestClassifyTurn:
    @pytest.mark.parametrize(
        "angle,expected",
        [
            (0.0, TurnClass.NO_TURN),
            (90.0, TurnClass.RIGHT),
            (-20.0, TurnClass.LEFT),
            (14.999, TurnClass.NO_TURN),
            (15.0, TurnClass.RIGHT),
            (-15.0, TurnClass.LEFT),
        ],
    )
    def test_threshold_buckets(self, angle, expected):
        assert classify_gnss_turn(angle, 15.0) is expected

    @given(st.floats(-180, 180), st.floats(1.0, 90.0))
    @settings(max_examples=200)
    def test_mirror_symmetry(self, angle, threshold):
        assert (
            classify_gnss_turn(-angle, threshold)
            is classify_gnss_turn(angle, threshold).mirrored()
        )

    def test_bad_inputs(self):
        with pytest.raises(DomainError):
            classify_gnss_turn(float("nan"), 15.0)
        with pytest.raises(DomainError):
            classify_gnss_turn(10.0, 0.0)
