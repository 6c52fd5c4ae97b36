"""Spherical geodesy: great-circle distance, local tangent plane, turn angles.

All operations are pure functions over immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import DegenerateGeometryError, DomainError, RangeError

EARTH_RADIUS_M = 6_378_000.0

# Equirectangular tangent-plane mapping is only trusted this close to its origin.
MAX_TANGENT_OFFSET_DEG = 1.0

DEFAULT_TURN_ANGLE_THRESHOLD_DEG = 15.0


class TurnClass(Enum):
    RIGHT = "right"
    LEFT = "left"
    NO_TURN = "no_turn"

    def mirrored(self) -> "TurnClass":
        if self is TurnClass.RIGHT:
            return TurnClass.LEFT
        if self is TurnClass.LEFT:
            return TurnClass.RIGHT
        return TurnClass.NO_TURN


@dataclass(frozen=True)
class GeoPoint:
    """Geographic fix in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise DomainError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise DomainError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise DomainError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class EnuPoint:
    """Planar offset in meters from a tangent-plane origin (east, north)."""

    east: float
    north: float

    def __post_init__(self):
        if not (math.isfinite(self.east) and math.isfinite(self.north)):
            raise DomainError(f"non-finite ENU offset ({self.east}, {self.north})")


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius EARTH_RADIUS_M.

    Symmetric in its arguments and always >= 0.
    """
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = math.radians(b.lat - a.lat)
    dlon = math.radians(b.lon - a.lon)
    s = (
        math.sin(dlat / 2.0) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    )
    # Clamp guards rounding just above 1 for near-antipodal pairs.
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(s)))


def geo_to_enu(p: GeoPoint, origin: GeoPoint) -> EnuPoint:
    """Project a nearby point onto the tangent plane anchored at ``origin``.

    Uses the equirectangular small-area approximation; points more than
    MAX_TANGENT_OFFSET_DEG from the origin are rejected.
    """
    if abs(p.lat - origin.lat) >= MAX_TANGENT_OFFSET_DEG:
        raise RangeError(
            f"latitude offset {p.lat - origin.lat:.4f} deg exceeds tangent-plane bound"
        )
    if abs(p.lon - origin.lon) >= MAX_TANGENT_OFFSET_DEG:
        raise RangeError(
            f"longitude offset {p.lon - origin.lon:.4f} deg exceeds tangent-plane bound"
        )
    east = math.radians(p.lon - origin.lon) * EARTH_RADIUS_M * math.cos(
        math.radians(origin.lat)
    )
    north = math.radians(p.lat - origin.lat) * EARTH_RADIUS_M
    return EnuPoint(east, north)


def enu_to_geo(e: EnuPoint, origin: GeoPoint) -> GeoPoint:
    """Inverse of :func:`geo_to_enu` for the same origin."""
    dlat = math.degrees(e.north / EARTH_RADIUS_M)
    cos_lat = math.cos(math.radians(origin.lat))
    if cos_lat <= 0.0:
        raise RangeError("tangent plane undefined at the poles")
    dlon = math.degrees(e.east / (EARTH_RADIUS_M * cos_lat))
    if abs(dlat) >= MAX_TANGENT_OFFSET_DEG or abs(dlon) >= MAX_TANGENT_OFFSET_DEG:
        raise RangeError(
            f"ENU offset ({e.east:.1f}, {e.north:.1f}) m exceeds tangent-plane bound"
        )
    return GeoPoint(origin.lat + dlat, origin.lon + dlon)


def initial_bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Forward azimuth from a to b in degrees [0, 360), clockwise from north."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlon = math.radians(b.lon - a.lon)
    y = math.sin(dlon) * math.cos(lat2)
    x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    return math.degrees(math.atan2(y, x)) % 360.0


def wrap_angle(deg: float) -> float:
    """Wrap an angle to (-180, 180]."""
    a = deg % 360.0
    if a > 180.0:
        a -= 360.0
    return a


def gnss_turn_angle(p0: GeoPoint, p1: GeoPoint, p2: GeoPoint) -> float:
    """Signed heading change from segment p0->p1 to p1->p2, in (-180, 180].

    Positive means a clockwise (right) heading change. Raises
    DegenerateGeometryError when either segment has zero length.
    """
    if haversine_distance(p0, p1) == 0.0 or haversine_distance(p1, p2) == 0.0:
        raise DegenerateGeometryError("zero-length segment in turn-angle triple")
    return wrap_angle(initial_bearing(p1, p2) - initial_bearing(p0, p1))


def classify_gnss_turn(
    angle: float, threshold: float = DEFAULT_TURN_ANGLE_THRESHOLD_DEG
) -> TurnClass:
    """Bucket a signed heading change into Right / Left / NoTurn."""
    if not math.isfinite(angle):
        raise DomainError(f"non-finite turn angle {angle}")
    if threshold <= 0.0:
        raise DomainError(f"turn threshold must be positive, got {threshold}")
    if angle >= threshold:
        return TurnClass.RIGHT
    if angle <= -threshold:
        return TurnClass.LEFT
    return TurnClass.NO_TURN
