"""Synthetic urban trips: grid routes, vehicle kinematics, and sensor noise.

A trip is generated in three stages. First the route is laid out on a street
grid as straight runs joined by circular arcs. Then a speed profile is planned
over the path (trapezoidal ramps, slower arcs, optional stops at junctions).
Finally the planned motion is sampled at 1 Hz and turned into telemetry
records with seeded sensor noise. Generation is a pure function of
(route, noise profile); the same inputs always produce byte-identical trips.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .geodesy import (
    EnuPoint,
    GeoPoint,
    TurnClass,
    enu_to_geo,
    haversine_distance,
    wrap_angle,
)

DEFAULT_CRUISE_SPEED = 11.18  # m/s, 25 mph
DEFAULT_ARC_RADIUS_M = 8.0
RAMP_ACCEL = 2.0  # m/s^2, symmetric accel/decel ramps
TURN_LAT_ACCEL = 2.5  # m/s^2 cap, sets the speed limit inside arcs
STOP_DWELL_S = 10.0
SPEED_SMOOTHING_S = 2.0  # box half-width; applied twice, so accel is continuous
TURN_LABEL_YAW_DEG_S = 5.0  # |yaw rate| above this gets a turn label
GRAVITY = 9.80665

_HEADINGS = {"N": 0.0, "E": 90.0, "S": 180.0, "W": 270.0}
_STEPS = {"N": (0, 1), "E": (1, 0), "S": (0, -1), "W": (-1, 0)}
_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}

FIELD_NAMES = (
    "t",
    "lat",
    "lon",
    "accel_x",
    "accel_y",
    "accel_z",
    "gyro_x",
    "gyro_y",
    "gyro_z",
    "vel_n",
    "vel_e",
    "vel_u",
)
TRUTH_FIELD_NAMES = ("truth_turn", "truth_shift", "truth_moving")


@dataclass(frozen=True)
class RouteSpec:
    """A grid route: ordered legs of whole blocks in compass directions."""

    origin: GeoPoint
    block_size: float
    segments: tuple[tuple[str, int], ...]
    cruise_speed: float = DEFAULT_CRUISE_SPEED
    stop_probability: float = 0.0

    def __post_init__(self):
        if self.block_size <= 0:
            raise ValidationError(f"block_size must be positive, got {self.block_size}")
        if self.cruise_speed <= 0:
            raise ValidationError(f"cruise_speed must be positive, got {self.cruise_speed}")
        if not 0.0 <= self.stop_probability <= 1.0:
            raise ValidationError(f"stop_probability {self.stop_probability} outside [0, 1]")
        segs = tuple((str(d), int(n)) for d, n in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValidationError("route needs at least one segment")
        for d, n in segs:
            if d not in _HEADINGS:
                raise ValidationError(f"unknown direction {d!r}")
            if n < 1:
                raise ValidationError(f"segment block count must be >= 1, got {n}")
        for (d1, _), (d2, _) in zip(segs, segs[1:]):
            if d1 == d2:
                raise ValidationError(f"consecutive segments share direction {d1}")
            if _OPPOSITE[d1] == d2:
                raise ValidationError(f"u-turn {d1}->{d2} not representable on the grid")
        self._check_self_overlap(segs)

    @staticmethod
    def _check_self_overlap(segments) -> None:
        node = (0, 0)
        seen = {node}
        for d, n in segments:
            de, dn = _STEPS[d]
            for _ in range(n):
                node = (node[0] + de, node[1] + dn)
                if node in seen:
                    raise ValidationError(f"route revisits grid node {node}")
                seen.add(node)

    def to_dict(self) -> dict:
        return {
            "origin": [self.origin.lat, self.origin.lon],
            "block_size": self.block_size,
            "segments": [list(s) for s in self.segments],
            "cruise_speed": self.cruise_speed,
            "stop_probability": self.stop_probability,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RouteSpec":
        try:
            return cls(
                origin=GeoPoint(float(d["origin"][0]), float(d["origin"][1])),
                block_size=float(d["block_size"]),
                segments=tuple((s[0], int(s[1])) for s in d["segments"]),
                cruise_speed=float(d.get("cruise_speed", DEFAULT_CRUISE_SPEED)),
                stop_probability=float(d.get("stop_probability", 0.0)),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise FormatError(f"bad route spec: {exc}") from exc


@dataclass(frozen=True)
class NoiseProfile:
    """Sensor error model. Random-walk densities are per-sqrt-hour units."""

    gnss_pos_std: float = 0.025  # m per horizontal axis
    vel_std: float = 0.01  # m/s per axis
    gyro_arw: float = 0.06  # deg/sqrt(hr)
    gyro_bias_instability: float = 0.45  # deg/hr
    accel_vrw: float = 0.06  # (m/s)/sqrt(hr)
    accel_bias_instability: float = 0.075  # milli-g
    seed: int = 0

    def __post_init__(self):
        for name in (
            "gnss_pos_std",
            "vel_std",
            "gyro_arw",
            "gyro_bias_instability",
            "accel_vrw",
            "accel_bias_instability",
        ):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "gnss_pos_std": self.gnss_pos_std,
            "vel_std": self.vel_std,
            "gyro_arw": self.gyro_arw,
            "gyro_bias_instability": self.gyro_bias_instability,
            "accel_vrw": self.accel_vrw,
            "accel_bias_instability": self.accel_bias_instability,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseProfile":
        try:
            return cls(
                gnss_pos_std=float(d.get("gnss_pos_std", 0.025)),
                vel_std=float(d.get("vel_std", 0.01)),
                gyro_arw=float(d.get("gyro_arw", 0.06)),
                gyro_bias_instability=float(d.get("gyro_bias_instability", 0.45)),
                accel_vrw=float(d.get("accel_vrw", 0.06)),
                accel_bias_instability=float(d.get("accel_bias_instability", 0.075)),
                seed=int(d.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad noise profile: {exc}") from exc


ZERO_NOISE = NoiseProfile(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, seed=0)


@dataclass(frozen=True)
class TelemetryRecord:
    """One 1 Hz sample. Truth fields are None outside simulation."""

    t: int
    lat: float
    lon: float
    accel_x: float
    accel_y: float
    accel_z: float
    gyro_x: float
    gyro_y: float
    gyro_z: float
    vel_n: float
    vel_e: float
    vel_u: float
    truth_turn: TurnClass | None = None
    truth_shift: float | None = None
    truth_moving: bool | None = None

    @property
    def fix(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)

    @property
    def gyro(self) -> tuple[float, float, float]:
        return (self.gyro_x, self.gyro_y, self.gyro_z)


@dataclass
class Trip:
    """An ordered 1 Hz record sequence plus its generation provenance.

    ``true_positions`` / ``true_yaw_deg_s`` are simulation-side ground truth
    kept out of the interchange format; trips loaded from disk have neither.
    """

    records: list[TelemetryRecord]
    route: RouteSpec | None = None
    noise: NoiseProfile | None = None
    true_positions: list[GeoPoint] | None = None
    true_yaw_deg_s: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    def truncated(self, n: int) -> "Trip":
        """First n records, truth side-arrays sliced to match."""
        return Trip(
            records=self.records[:n],
            route=self.route,
            noise=self.noise,
            true_positions=None if self.true_positions is None else self.true_positions[:n],
            true_yaw_deg_s=None if self.true_yaw_deg_s is None else self.true_yaw_deg_s[:n],
        )


# ---------------------------------------------------------------------------
# Path geometry


@dataclass(frozen=True)
class _Straight:
    s0: float
    length: float
    start_e: float
    start_n: float
    heading: float  # compass degrees

    def point(self, s: float) -> tuple[float, float]:
        h = math.radians(self.heading)
        d = s - self.s0
        return (self.start_e + d * math.sin(h), self.start_n + d * math.cos(h))

    def heading_at(self, s: float) -> float:
        return self.heading

    curvature_sign = 0.0
    radius = math.inf


@dataclass(frozen=True)
class _Arc:
    s0: float
    length: float
    center_e: float
    center_n: float
    radius: float
    entry_heading: float
    sign: float  # +1 clockwise (right), -1 counterclockwise (left)

    def point(self, s: float) -> tuple[float, float]:
        swept = math.degrees((s - self.s0) / self.radius)
        h = math.radians(self.entry_heading + self.sign * swept)
        # Radial from center to the path point.
        re, rn = math.cos(h), -math.sin(h)
        return (
            self.center_e - self.sign * self.radius * re,
            self.center_n - self.sign * self.radius * rn,
        )

    def heading_at(self, s: float) -> float:
        return self.entry_heading + self.sign * math.degrees((s - self.s0) / self.radius)

    @property
    def curvature_sign(self) -> float:
        return self.sign


class _Path:
    """Piecewise straight/arc path with arc-length parameterization."""

    def __init__(self, primitives: list, junction_s: list[float]):
        self.primitives = primitives
        self.junction_s = junction_s  # arc entry points, one per grid junction
        self.cum = np.array([p.s0 for p in primitives] + [primitives[-1].s0 + primitives[-1].length])

    @property
    def total_length(self) -> float:
        return float(self.cum[-1])

    def _prim_index(self, s: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.cum, s, side="right") - 1
        return np.clip(idx, 0, len(self.primitives) - 1)

    def sample(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Positions (east, north), heading deg, signed curvature 1/m at s."""
        idx = self._prim_index(np.asarray(s, dtype=float))
        e = np.empty(len(idx))
        n = np.empty(len(idx))
        h = np.empty(len(idx))
        k = np.empty(len(idx))
        for i, (si, pi) in enumerate(zip(np.asarray(s, dtype=float), idx)):
            prim = self.primitives[pi]
            e[i], n[i] = prim.point(si)
            h[i] = prim.heading_at(si)
            k[i] = prim.curvature_sign / prim.radius if math.isfinite(prim.radius) else 0.0
        return e, n, h, k

    def speed_limit(self, s: np.ndarray, cruise: float) -> np.ndarray:
        idx = self._prim_index(np.asarray(s, dtype=float))
        per_prim = np.array(
            [
                min(cruise, math.sqrt(TURN_LAT_ACCEL * p.radius))
                if isinstance(p, _Arc)
                else cruise
                for p in self.primitives
            ]
        )
        return per_prim[idx]


def _turn_sign(d_in: str, d_out: str) -> float:
    h_in, h_out = _HEADINGS[d_in], _HEADINGS[d_out]
    delta = (h_out - h_in) % 360.0
    if delta == 90.0:
        return 1.0
    if delta == 270.0:
        return -1.0
    raise ValidationError(f"junction {d_in}->{d_out} is not a quarter turn")


def build_path(spec: RouteSpec, arc_radius: float = DEFAULT_ARC_RADIUS_M) -> _Path:
    """Lay the route out in the tangent plane as straights joined by arcs."""
    if arc_radius <= 0:
        raise ValidationError(f"arc radius must be positive, got {arc_radius}")
    prims: list = []
    junction_s: list[float] = []
    last = len(spec.segments) - 1
    pos_e, pos_n = 0.0, 0.0
    s = 0.0
    for i, (d, blocks) in enumerate(spec.segments):
        length = blocks * spec.block_size
        trim = (arc_radius if i > 0 else 0.0) + (arc_radius if i < last else 0.0)
        straight_len = length - trim
        if straight_len <= 0:
            raise ValidationError(
                f"segment {i} ({d} x{blocks}) too short for turn radius {arc_radius}"
            )
        heading = _HEADINGS[d]
        prims.append(_Straight(s, straight_len, pos_e, pos_n, heading))
        h = math.radians(heading)
        pos_e += straight_len * math.sin(h)
        pos_n += straight_len * math.cos(h)
        s += straight_len
        if i < last:
            sign = _turn_sign(d, spec.segments[i + 1][0])
            # Center sits one radius to the inside of the corner.
            ce = pos_e + sign * arc_radius * math.cos(h)
            cn = pos_n - sign * arc_radius * math.sin(h)
            arc_len = arc_radius * math.pi / 2.0
            junction_s.append(s)
            prims.append(_Arc(s, arc_len, ce, cn, arc_radius, heading, sign))
            s += arc_len
            exit_h = math.radians(heading + sign * 90.0)
            # Arc endpoint: center minus rotated radial.
            pos_e = ce - sign * arc_radius * math.cos(exit_h)
            pos_n = cn + sign * arc_radius * math.sin(exit_h)
    return _Path(prims, junction_s)


def generate_route(
    spec: RouteSpec, arc_radius: float = DEFAULT_ARC_RADIUS_M, resolution: float = 1.0
) -> list[GeoPoint]:
    """Route waypoints at roughly ``resolution``-meter spacing."""
    path = build_path(spec, arc_radius)
    n = max(2, int(round(path.total_length / resolution)) + 1)
    s = np.linspace(0.0, path.total_length, n)
    e, nn, _, _ = path.sample(s)
    return [enu_to_geo(EnuPoint(float(ei), float(ni)), spec.origin) for ei, ni in zip(e, nn)]


# ---------------------------------------------------------------------------
# Speed planning and 1 Hz sampling


def _plan_speed(
    path: _Path,
    spec: RouteSpec,
    rng: np.random.Generator,
    start_at_cruise: bool,
    ds: float = 0.25,
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Forward/backward-pass speed profile over a distance grid.

    Returns (s grid, v at grid, indices of planned stops). Stop decisions are
    drawn here so they consume the RNG in a fixed order.
    """
    n = int(math.ceil(path.total_length / ds)) + 1
    s = np.linspace(0.0, path.total_length, n)
    v = path.speed_limit(s, spec.cruise_speed)

    stop_idx: list[int] = []
    for js in path.junction_s:
        stop_here = rng.random() < spec.stop_probability
        if stop_here:
            stop_idx.append(int(np.searchsorted(s, js)))
    for i in stop_idx:
        v[i] = 0.0

    step = s[1] - s[0] if n > 1 else ds
    if not start_at_cruise:
        v[0] = 0.0
        v[-1] = 0.0
    for i in range(n - 1):  # forward: limit acceleration
        cap = math.sqrt(v[i] * v[i] + 2.0 * RAMP_ACCEL * step)
        if v[i + 1] > cap:
            v[i + 1] = cap
    for i in range(n - 2, -1, -1):  # backward: limit deceleration
        cap = math.sqrt(v[i + 1] * v[i + 1] + 2.0 * RAMP_ACCEL * step)
        if v[i] > cap:
            v[i] = cap
    return s, v, stop_idx


def _time_knots(
    s: np.ndarray,
    v: np.ndarray,
    stop_idx: list[int],
    lead_in_stop_s: float,
    lead_out_stop_s: float,
    start_at_cruise: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Piecewise-linear (t, s, v) knots including dwell intervals."""
    ts: list[float] = []
    ss: list[float] = []
    vs: list[float] = []
    t = 0.0
    if lead_in_stop_s > 0:
        ts.extend([0.0, lead_in_stop_s])
        ss.extend([s[0], s[0]])
        vs.extend([0.0, 0.0])
        t = lead_in_stop_s
    ts.append(t)
    ss.append(float(s[0]))
    vs.append(float(v[0]))
    stops = set(stop_idx)
    for i in range(len(s) - 1):
        vmid = 0.5 * (v[i] + v[i + 1])
        if vmid <= 1e-9:
            raise ValidationError("speed plan stalls between stop points")
        t += (s[i + 1] - s[i]) / vmid
        ts.append(t)
        ss.append(float(s[i + 1]))
        vs.append(float(v[i + 1]))
        if (i + 1) in stops:
            t += STOP_DWELL_S
            ts.append(t)
            ss.append(float(s[i + 1]))
            vs.append(0.0)
    if lead_out_stop_s > 0 and not start_at_cruise:
        t += lead_out_stop_s
        ts.append(t)
        ss.append(float(s[-1]))
        vs.append(0.0)
    return np.array(ts), np.array(ss), np.array(vs)


def _white_noise_std_per_sample(density_per_sqrt_hr: float, dt: float = 1.0) -> float:
    # density [u/sqrt(hr)] -> white noise std [u/s] at sampling interval dt.
    return density_per_sqrt_hr / 60.0 / math.sqrt(dt)


def _smooth_speed(v: np.ndarray, dt: float, width_s: float = SPEED_SMOOTHING_S) -> np.ndarray:
    """Jerk-limit a speed trace with a double box filter (edge padded).

    Keeps exact zeros in the interior of long dwells and leaves constant
    cruise stretches untouched; corners of the trapezoidal plan become
    smooth speed transitions a driver would actually produce.
    """
    w = max(1, int(round(width_s / dt)))
    kernel = np.ones(w) / w
    padded = np.concatenate([np.full(w, v[0]), v, np.full(w, v[-1])])
    out = np.convolve(padded, kernel, mode="same")
    out = np.convolve(out, kernel, mode="same")
    return out[w:-w]


def simulate_trip(
    route: RouteSpec,
    noise: NoiseProfile,
    *,
    lead_in_stop_s: float = 0.0,
    lead_out_stop_s: float = 0.0,
    start_at_cruise: bool = False,
    flip_y: bool = False,
    arc_radius: float = DEFAULT_ARC_RADIUS_M,
) -> Trip:
    """Generate a 1 Hz telemetry trip along the route.

    ``start_at_cruise`` skips the initial and final ramps (the vehicle enters
    and leaves the path at cruise speed). ``flip_y`` negates the body-frame
    y-axis outputs of accelerometer and gyroscope.
    """
    path = build_path(route, arc_radius)
    rng = np.random.default_rng(noise.seed)

    s_grid, v_grid, stop_idx = _plan_speed(path, route, rng, start_at_cruise)
    tk, sk, vk = _time_knots(
        s_grid, v_grid, stop_idx, lead_in_stop_s, lead_out_stop_s, start_at_cruise
    )

    t_end = tk[-1]
    fine_dt = 0.05
    tf = np.arange(0.0, t_end + fine_dt, fine_dt)
    vf = _smooth_speed(np.interp(tf, tk, vk), fine_dt)
    sf = np.concatenate([[0.0], np.cumsum(0.5 * (vf[1:] + vf[:-1]) * fine_dt)])
    end_idx = int(np.searchsorted(sf, path.total_length - 1e-9))
    if end_idx < len(sf) - 1:
        # Smoothing shifted the integral; stop when the path runs out.
        tf, vf, sf = tf[: end_idx + 1], vf[: end_idx + 1], sf[: end_idx + 1]
        t_end = tf[-1]
    sf = np.minimum(sf, path.total_length)
    af = np.gradient(vf, fine_dt)

    n = int(math.floor(t_end)) + 1
    t = np.arange(n, dtype=float)
    s_t = np.interp(t, tf, sf)
    v_t = np.interp(t, tf, vf)
    a_t = np.interp(t, tf, af)

    east, north, heading, curv = path.sample(s_t)
    # The 1 Hz gyro channel reports the average rate over each sample
    # interval; summing it telescopes to the exact heading change of a turn.
    yaw_deg_s = np.zeros(n)
    for i in range(1, n):
        yaw_deg_s[i] = wrap_angle(heading[i] - heading[i - 1])
    yaw_rad_inst = v_t * curv  # instantaneous, for the centripetal term

    # Noise draws in fixed order for reproducibility.
    gnss_e = rng.normal(0.0, noise.gnss_pos_std, n) if noise.gnss_pos_std > 0 else np.zeros(n)
    gnss_n = rng.normal(0.0, noise.gnss_pos_std, n) if noise.gnss_pos_std > 0 else np.zeros(n)
    vel_noise = (
        rng.normal(0.0, noise.vel_std, (n, 3)) if noise.vel_std > 0 else np.zeros((n, 3))
    )
    gyro_white = _white_noise_std_per_sample(noise.gyro_arw)
    gyro_bias_std = noise.gyro_bias_instability / 3600.0
    gyro_bias = (
        rng.normal(0.0, gyro_bias_std, 3) if gyro_bias_std > 0 else np.zeros(3)
    )
    gyro_noise = rng.normal(0.0, gyro_white, (n, 3)) if gyro_white > 0 else np.zeros((n, 3))
    accel_white = _white_noise_std_per_sample(noise.accel_vrw)
    accel_bias_std = noise.accel_bias_instability * 1e-3 * GRAVITY
    accel_bias = (
        rng.normal(0.0, accel_bias_std, 3) if accel_bias_std > 0 else np.zeros(3)
    )
    accel_noise = (
        rng.normal(0.0, accel_white, (n, 3)) if accel_white > 0 else np.zeros((n, 3))
    )

    h_rad = np.radians(heading)
    vel_n_true = v_t * np.cos(h_rad)
    vel_e_true = v_t * np.sin(h_rad)
    # Body frame: x forward, y left, z up. Lateral accel of a clockwise turn
    # points right, i.e. negative y. z-up makes clockwise yaw negative.
    accel_x_true = a_t
    accel_y_true = -v_t * yaw_rad_inst
    gyro_z_true = -yaw_deg_s

    y_sign = -1.0 if flip_y else 1.0

    true_points = [
        enu_to_geo(EnuPoint(float(e), float(nn)), route.origin) for e, nn in zip(east, north)
    ]
    fixes = [
        enu_to_geo(EnuPoint(float(e + de), float(nn + dn)), route.origin)
        for e, nn, de, dn in zip(east, north, gnss_e, gnss_n)
    ]

    records: list[TelemetryRecord] = []
    for i in range(n):
        if i == 0:
            shift = 0.0
        else:
            shift = haversine_distance(true_points[i - 1], true_points[i])
        records.append(
            TelemetryRecord(
                t=i,
                lat=fixes[i].lat,
                lon=fixes[i].lon,
                accel_x=float(accel_x_true[i] + accel_bias[0] + accel_noise[i, 0]),
                accel_y=float(y_sign * (accel_y_true[i] + accel_bias[1] + accel_noise[i, 1])),
                accel_z=float(accel_bias[2] + accel_noise[i, 2]),
                gyro_x=float(gyro_bias[0] + gyro_noise[i, 0]),
                gyro_y=float(y_sign * (gyro_bias[1] + gyro_noise[i, 1])),
                gyro_z=float(gyro_z_true[i] + gyro_bias[2] + gyro_noise[i, 2]),
                vel_n=float(vel_n_true[i] + vel_noise[i, 0]),
                vel_e=float(vel_e_true[i] + vel_noise[i, 1]),
                vel_u=float(vel_noise[i, 2]),
                truth_turn=_label_for_yaw(float(yaw_deg_s[i])),
                truth_shift=shift,
                truth_moving=bool(v_t[i] > 1e-9),
            )
        )
    return Trip(
        records=records,
        route=route,
        noise=noise,
        true_positions=true_points,
        true_yaw_deg_s=yaw_deg_s,
    )


def _label_for_yaw(yaw_deg_s: float, threshold: float = TURN_LABEL_YAW_DEG_S) -> TurnClass:
    if yaw_deg_s > threshold:
        return TurnClass.RIGHT
    if yaw_deg_s < -threshold:
        return TurnClass.LEFT
    return TurnClass.NO_TURN


def label_turn_windows(trip: Trip, threshold: float = TURN_LABEL_YAW_DEG_S) -> Trip:
    """Relabel truth_turn from the trip's ground-truth yaw rate."""
    if trip.true_yaw_deg_s is None:
        raise ValidationError("trip has no ground-truth yaw rate to label from")
    if len(trip.true_yaw_deg_s) != len(trip.records):
        raise ValidationError("yaw-rate array length does not match records")
    records = [
        replace(rec, truth_turn=_label_for_yaw(float(y), threshold))
        for rec, y in zip(trip.records, trip.true_yaw_deg_s)
    ]
    return Trip(
        records=records,
        route=trip.route,
        noise=trip.noise,
        true_positions=trip.true_positions,
        true_yaw_deg_s=trip.true_yaw_deg_s,
    )


# ---------------------------------------------------------------------------
# Interchange format

_TURN_TO_TEXT = {TurnClass.RIGHT: "right", TurnClass.LEFT: "left", TurnClass.NO_TURN: "no_turn"}
_TEXT_TO_TURN = {v: k for k, v in _TURN_TO_TEXT.items()}


def format_float(x: float) -> str:
    return format(float(x), ".9g")


def _record_line(rec: TelemetryRecord, with_truth: bool) -> str:
    parts = [str(rec.t)] + [
        format_float(getattr(rec, name)) for name in FIELD_NAMES[1:]
    ]
    if with_truth:
        parts.append(_TURN_TO_TEXT[rec.truth_turn])
        parts.append(format_float(rec.truth_shift))
        parts.append("1" if rec.truth_moving else "0")
    return ",".join(parts)


def trip_to_text(trip: Trip) -> str:
    """Serialize a trip in the interchange format (meta lines, header, rows)."""
    lines: list[str] = []
    if trip.route is not None:
        lines.append("# route: " + json.dumps(trip.route.to_dict(), sort_keys=True))
    if trip.noise is not None:
        lines.append("# noise: " + json.dumps(trip.noise.to_dict(), sort_keys=True))
    with_truth = bool(trip.records) and trip.records[0].truth_shift is not None
    header = FIELD_NAMES + (TRUTH_FIELD_NAMES if with_truth else ())
    lines.append(",".join(header))
    for rec in trip.records:
        lines.append(_record_line(rec, with_truth))
    return "\n".join(lines) + "\n"


def write_trip(trip: Trip, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(trip_to_text(trip))


def parse_trip(text: str) -> Trip:
    route = None
    noise = None
    header: tuple[str, ...] | None = None
    records: list[TelemetryRecord] = []
    with_truth = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("route:"):
                route = RouteSpec.from_dict(_parse_meta_json(body, "route", lineno))
            elif body.startswith("noise:"):
                noise = NoiseProfile.from_dict(_parse_meta_json(body, "noise", lineno))
            continue
        if header is None:
            header = tuple(line.split(","))
            if header == FIELD_NAMES + TRUTH_FIELD_NAMES:
                with_truth = True
            elif header == FIELD_NAMES:
                with_truth = False
            else:
                raise FormatError(f"line {lineno}: unrecognized header {line!r}")
            continue
        parts = line.split(",")
        expected = len(FIELD_NAMES) + (len(TRUTH_FIELD_NAMES) if with_truth else 0)
        if len(parts) != expected:
            raise FormatError(f"line {lineno}: expected {expected} fields, got {len(parts)}")
        try:
            t = int(parts[0])
            floats = [float(p) for p in parts[1 : len(FIELD_NAMES)]]
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
        kwargs = dict(zip(FIELD_NAMES[1:], floats))
        if with_truth:
            turn_text = parts[len(FIELD_NAMES)]
            if turn_text not in _TEXT_TO_TURN:
                raise FormatError(f"line {lineno}: bad truth_turn {turn_text!r}")
            try:
                kwargs["truth_shift"] = float(parts[len(FIELD_NAMES) + 1])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from exc
            moving_text = parts[len(FIELD_NAMES) + 2]
            if moving_text not in ("0", "1"):
                raise FormatError(f"line {lineno}: bad truth_moving {moving_text!r}")
            kwargs["truth_turn"] = _TEXT_TO_TURN[turn_text]
            kwargs["truth_moving"] = moving_text == "1"
        records.append(TelemetryRecord(t=t, **kwargs))
    if header is None:
        raise FormatError("no header line found")
    for a, b in zip(records, records[1:]):
        if b.t <= a.t:
            raise FormatError(f"timestamps not strictly increasing at t={b.t}")
    return Trip(records=records, route=route, noise=noise)


def _parse_meta_json(body: str, key: str, lineno: int) -> dict:
    try:
        return json.loads(body.split(":", 1)[1])
    except json.JSONDecodeError as exc:
        raise FormatError(f"line {lineno}: bad {key} metadata: {exc}") from exc


def read_trip(path) -> Trip:
    with open(path, "r", encoding="utf-8") as f:
        return parse_trip(f.read())
