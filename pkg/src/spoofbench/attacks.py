"""Spoofed-route generators: adjacent-road shift, wrong turn, slow drift.

Each generator produces an :class:`AttackEvent` whose point sequence covers an
injection window one-for-one; :func:`apply_event` substitutes it into a store.
Generators work from the trip's ground-truth trajectory when present and fall
back to the stored fixes (centimeter noise is irrelevant at attack scale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import FormatError, ValidationError
from .geodesy import EnuPoint, GeoPoint, TurnClass, enu_to_geo, geo_to_enu
from .simulator import Trip

DEFAULT_SPOOF_SPACING = 11.18  # m between consecutive spoofed fixes at 1 Hz
DEFAULT_WRONG_TURN_CONTINUE_S = 30
DEFAULT_WRONG_TURN_ARC_RADIUS = 8.0


class AttackKind(Enum):
    TURN_BY_TURN = "turn_by_turn"
    WRONG_TURN = "wrong_turn"
    SLOW_DRIFT = "slow_drift"


@dataclass(frozen=True)
class AttackScenario:
    """Declarative attack description; ``trigger`` may be a symbolic anchor.

    Symbolic triggers are resolved against a concrete trip:
    ``turn:right:2`` is the onset of the trip's 2nd true right turn,
    ``stop:1`` is one second into the trip's 1st standstill window.
    """

    kind: AttackKind
    trigger: int | str
    duration: int | None = None
    spoof_spacing: float = DEFAULT_SPOOF_SPACING
    direction: TurnClass | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.duration is not None and self.duration < 1:
            raise ValidationError(f"duration must be >= 1, got {self.duration}")
        if self.spoof_spacing <= 0:
            raise ValidationError(f"spoof_spacing must be positive, got {self.spoof_spacing}")
        if self.kind is AttackKind.SLOW_DRIFT:
            if self.rate is None or self.rate <= 0:
                raise ValidationError(f"slow drift needs a positive rate, got {self.rate}")
        if self.kind is AttackKind.WRONG_TURN:
            if self.direction not in (TurnClass.RIGHT, TurnClass.LEFT):
                raise ValidationError("wrong turn needs direction right or left")


@dataclass(frozen=True)
class AttackEvent:
    """A realized attack: window, points to inject, and ground-truth onset."""

    scenario: AttackScenario
    t_start: int
    t_end: int
    spoofed_points: tuple[GeoPoint, ...]
    onset_truth: int

    def __post_init__(self):
        if len(self.spoofed_points) != self.t_end - self.t_start + 1:
            raise ValidationError("spoofed point count does not match window length")

    @property
    def window(self) -> tuple[int, int]:
        return (self.t_start, self.t_end)


def apply_event(event: AttackEvent, store) -> None:
    store.inject_positions(event.window, event.spoofed_points, event.scenario.kind.value)


# ---------------------------------------------------------------------------
# Trip introspection helpers


def _anchor(trip: Trip) -> GeoPoint:
    if trip.route is not None:
        return trip.route.origin
    if not trip.records:
        raise ValidationError("empty trip")
    return trip.records[0].fix


def _base_enu(trip: Trip) -> tuple[GeoPoint, np.ndarray, np.ndarray]:
    """(anchor, east[], north[]) of the trip's base trajectory."""
    anchor = _anchor(trip)
    points = trip.true_positions if trip.true_positions is not None else [
        rec.fix for rec in trip.records
    ]
    enu = [geo_to_enu(p, anchor) for p in points]
    return anchor, np.array([q.east for q in enu]), np.array([q.north for q in enu])


def _headings(east: np.ndarray, north: np.ndarray, min_step: float = 0.05) -> np.ndarray:
    """Compass heading of motion at each index, carried through standstill."""
    n = len(east)
    h = np.full(n, np.nan)
    for i in range(1, n):
        de = east[i] - east[i - 1]
        dn = north[i] - north[i - 1]
        if math.hypot(de, dn) >= min_step:
            h[i] = math.degrees(math.atan2(de, dn)) % 360.0
    last = np.nan
    for i in range(n):
        if not math.isnan(h[i]):
            last = h[i]
        elif not math.isnan(last):
            h[i] = last
    nxt = np.nan
    for i in range(n - 1, -1, -1):
        if not math.isnan(h[i]):
            nxt = h[i]
        elif not math.isnan(nxt):
            h[i] = nxt
    if np.isnan(h).any():
        raise ValidationError("trip never moves; headings undefined")
    return h


def _perp_right(heading_deg: float) -> tuple[float, float]:
    h = math.radians(heading_deg)
    return (math.cos(h), -math.sin(h))


def find_turn_events(trip: Trip) -> list[tuple[int, int, TurnClass]]:
    """Contiguous true-turn windows as (t_onset, t_end, direction)."""
    events = []
    run_start = None
    run_dir = None
    for rec in trip.records:
        label = rec.truth_turn
        if label in (TurnClass.RIGHT, TurnClass.LEFT):
            if run_dir is label:
                continue
            if run_start is not None:
                events.append((run_start, prev_t, run_dir))
            run_start, run_dir = rec.t, label
        else:
            if run_start is not None:
                events.append((run_start, prev_t, run_dir))
                run_start, run_dir = None, None
        prev_t = rec.t
    if run_start is not None:
        events.append((run_start, trip.records[-1].t, run_dir))
    return events


def find_stop_windows(trip: Trip) -> list[tuple[int, int]]:
    """Maximal standstill windows (t_start, t_end) from truth_moving."""
    windows = []
    start = None
    for rec in trip.records:
        if rec.truth_moving is False:
            if start is None:
                start = rec.t
        else:
            if start is not None:
                windows.append((start, prev_t))
                start = None
        prev_t = rec.t
    if start is not None:
        windows.append((start, trip.records[-1].t))
    return windows


def _require_window(trip: Trip, t_start: int, n: int, history: int) -> None:
    t0 = trip.records[0].t
    t_last = trip.records[-1].t
    if n < 1:
        raise ValidationError(f"window needs at least one point, got {n}")
    if t_start < t0 + history:
        raise ValidationError(f"trigger {t_start} too close to trip start")
    if t_start + n - 1 > t_last:
        raise ValidationError(
            f"window [{t_start}, {t_start + n - 1}] runs past trip end {t_last}"
        )


def _walk_polyline(
    east: np.ndarray, north: np.ndarray, arcs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Points at given arclengths along a polyline, extended past its end."""
    de = np.diff(east)
    dn = np.diff(north)
    seg = np.hypot(de, dn)
    keep = seg > 1e-9
    xs = [east[0]]
    ys = [north[0]]
    for i in np.nonzero(keep)[0]:
        xs.append(east[i + 1])
        ys.append(north[i + 1])
    xs = np.array(xs)
    ys = np.array(ys)
    if len(xs) < 2:
        raise ValidationError("base trajectory has no extent to resample")
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(xs), np.diff(ys)))])
    total = cum[-1]
    he = (xs[-1] - xs[-2]) / (cum[-1] - cum[-2])
    hn = (ys[-1] - ys[-2]) / (cum[-1] - cum[-2])
    out_e = np.interp(np.minimum(arcs, total), cum, xs)
    out_n = np.interp(np.minimum(arcs, total), cum, ys)
    over = arcs > total
    out_e[over] += (arcs[over] - total) * he
    out_n[over] += (arcs[over] - total) * hn
    return out_e, out_n


# ---------------------------------------------------------------------------
# Generators


def make_turn_by_turn(
    trip: Trip,
    trigger_t: int,
    duration: int,
    *,
    side: TurnClass = TurnClass.RIGHT,
    spacing: float = DEFAULT_SPOOF_SPACING,
    offset_m: float | None = None,
) -> AttackEvent:
    """Shift the route one block toward the adjacent parallel road.

    The spoofed route is the base trajectory translated laterally (toward
    ``side`` of the heading at the trigger) and re-walked at constant spacing,
    so the spoofed vehicle appears to keep average speed on the parallel road.
    """
    if side not in (TurnClass.RIGHT, TurnClass.LEFT):
        raise ValidationError("side must be right or left")
    if offset_m is None:
        if trip.route is None:
            raise ValidationError("offset_m required for trips without a route spec")
        offset_m = trip.route.block_size
    _require_window(trip, trigger_t, duration, history=1)
    anchor, east, north = _base_enu(trip)
    headings = _headings(east, north)
    i0 = trigger_t - trip.records[0].t
    pe, pn = _perp_right(headings[i0])
    if side is TurnClass.LEFT:
        pe, pn = -pe, -pn
    arcs = spacing * np.arange(duration, dtype=float)
    se, sn = _walk_polyline(east[i0:], north[i0:], arcs)
    points = tuple(
        enu_to_geo(EnuPoint(float(e + offset_m * pe), float(nn + offset_m * pn)), anchor)
        for e, nn in zip(se, sn)
    )
    scenario = AttackScenario(
        AttackKind.TURN_BY_TURN, trigger_t, duration, spacing, direction=side
    )
    return AttackEvent(scenario, trigger_t, trigger_t + duration - 1, points, trigger_t)


def make_wrong_turn(
    trip: Trip,
    intersection_t: int,
    direction: TurnClass,
    *,
    continue_s: int = DEFAULT_WRONG_TURN_CONTINUE_S,
    spacing: float = DEFAULT_SPOOF_SPACING,
    arc_radius: float = DEFAULT_WRONG_TURN_ARC_RADIUS,
) -> AttackEvent:
    """Spoof the opposite turn at a true intersection maneuver.

    The spoofed route leaves the last clean fix, sweeps a quarter arc toward
    ``direction`` and continues straight for ``continue_s`` seconds, moving at
    one spacing per second throughout.
    """
    if direction not in (TurnClass.RIGHT, TurnClass.LEFT):
        raise ValidationError("direction must be right or left")
    turn = None
    for t_on, t_end, d in find_turn_events(trip):
        if t_on <= intersection_t <= t_end:
            turn = (t_on, t_end, d)
            break
    if turn is None:
        raise ValidationError(f"no true turn at t={intersection_t}")
    t_on, t_end, true_dir = turn
    if true_dir is not direction.mirrored():
        raise ValidationError(
            f"true turn at t={intersection_t} is {true_dir.value}, "
            f"cannot spoof {direction.value}"
        )
    n = (t_end - t_on + 1) + continue_s
    _require_window(trip, t_on, n, history=2)
    anchor, east, north = _base_enu(trip)
    headings = _headings(east, north)
    i_prev = t_on - 1 - trip.records[0].t
    base_e, base_n = east[i_prev], north[i_prev]
    h0 = headings[i_prev]
    sign = 1.0 if direction is TurnClass.RIGHT else -1.0
    arc_len = arc_radius * math.pi / 2.0
    h0_rad = math.radians(h0)
    ce = base_e + sign * arc_radius * math.cos(h0_rad)
    cn = base_n - sign * arc_radius * math.sin(h0_rad)
    exit_h = math.radians(h0 + sign * 90.0)
    exit_e = ce - sign * arc_radius * math.cos(exit_h)
    exit_n = cn + sign * arc_radius * math.sin(exit_h)
    points = []
    for k in range(1, n + 1):
        a = k * spacing
        if a <= arc_len:
            swept = math.degrees(a / arc_radius)
            h = math.radians(h0 + sign * swept)
            e = ce - sign * arc_radius * math.cos(h)
            nn = cn + sign * arc_radius * math.sin(h)
        else:
            d = a - arc_len
            e = exit_e + d * math.sin(exit_h)
            nn = exit_n + d * math.cos(exit_h)
        points.append(enu_to_geo(EnuPoint(float(e), float(nn)), anchor))
    scenario = AttackScenario(
        AttackKind.WRONG_TURN, t_on, n, spacing, direction=direction
    )
    return AttackEvent(scenario, t_on, t_on + n - 1, tuple(points), t_on)


def make_slow_drift(
    trip: Trip,
    trigger_t: int,
    duration: int,
    rate: float,
    *,
    side: TurnClass = TurnClass.RIGHT,
) -> AttackEvent:
    """Cross-track drift growing by ``rate`` meters each second from onset."""
    if rate <= 0:
        raise ValidationError(f"drift rate must be positive, got {rate}")
    if side not in (TurnClass.RIGHT, TurnClass.LEFT):
        raise ValidationError("side must be right or left")
    _require_window(trip, trigger_t, duration, history=1)
    anchor, east, north = _base_enu(trip)
    headings = _headings(east, north)
    i0 = trigger_t - trip.records[0].t
    points = []
    for k in range(duration):
        pe, pn = _perp_right(headings[i0 + k])
        if side is TurnClass.LEFT:
            pe, pn = -pe, -pn
        off = k * rate
        points.append(
            enu_to_geo(
                EnuPoint(float(east[i0 + k] + off * pe), float(north[i0 + k] + off * pn)),
                anchor,
            )
        )
    scenario = AttackScenario(
        AttackKind.SLOW_DRIFT, trigger_t, duration, rate=rate, direction=side
    )
    return AttackEvent(scenario, trigger_t, trigger_t + duration - 1, tuple(points), trigger_t)


# ---------------------------------------------------------------------------
# Scenario files and realization


def realize_scenario(scenario: AttackScenario, trip: Trip) -> AttackEvent:
    """Resolve a scenario (symbolic triggers included) against a trip."""
    trigger = _resolve_trigger(scenario, trip)
    if scenario.kind is AttackKind.TURN_BY_TURN:
        if scenario.duration is None:
            raise ValidationError("turn_by_turn scenario needs a duration")
        return make_turn_by_turn(
            trip,
            trigger,
            scenario.duration,
            side=scenario.direction or TurnClass.RIGHT,
            spacing=scenario.spoof_spacing,
        )
    if scenario.kind is AttackKind.WRONG_TURN:
        continue_s = (
            scenario.duration
            if scenario.duration is not None
            else DEFAULT_WRONG_TURN_CONTINUE_S
        )
        return make_wrong_turn(
            trip,
            trigger,
            scenario.direction,
            continue_s=continue_s,
            spacing=scenario.spoof_spacing,
        )
    if scenario.duration is None:
        raise ValidationError("slow_drift scenario needs a duration")
    return make_slow_drift(trip, trigger, scenario.duration, scenario.rate)


def _resolve_trigger(scenario: AttackScenario, trip: Trip) -> int:
    trig = scenario.trigger
    if isinstance(trig, int):
        return trig
    parts = str(trig).split(":")
    if parts[0] == "turn" and len(parts) == 3:
        want = {"right": TurnClass.RIGHT, "left": TurnClass.LEFT}.get(parts[1])
        if want is None:
            raise ValidationError(f"bad turn anchor {trig!r}")
        idx = int(parts[2])
        turns = [e for e in find_turn_events(trip) if e[2] is want]
        if not 1 <= idx <= len(turns):
            raise ValidationError(
                f"anchor {trig!r}: trip has {len(turns)} {parts[1]} turns"
            )
        return turns[idx - 1][0]
    if parts[0] == "stop" and len(parts) == 2:
        idx = int(parts[1])
        stops = find_stop_windows(trip)
        if not 1 <= idx <= len(stops):
            raise ValidationError(f"anchor {trig!r}: trip has {len(stops)} stops")
        return stops[idx - 1][0] + 1
    raise ValidationError(f"unrecognized trigger {trig!r}")


_SCENARIO_KINDS = {k.value: k for k in AttackKind}
_DIRECTIONS = {"right": TurnClass.RIGHT, "left": TurnClass.LEFT}


def parse_scenario_line(line: str, lineno: int = 0) -> AttackScenario:
    parts = line.split()
    if not parts:
        raise FormatError(f"line {lineno}: empty scenario")
    kind = _SCENARIO_KINDS.get(parts[0])
    if kind is None:
        raise FormatError(f"line {lineno}: unknown attack kind {parts[0]!r}")
    kv: dict[str, str] = {}
    for item in parts[1:]:
        if "=" not in item:
            raise FormatError(f"line {lineno}: expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        kv[key] = value
    try:
        trigger: int | str = kv.get("trigger", "")
        if trigger == "":
            raise FormatError(f"line {lineno}: scenario needs trigger=")
        try:
            trigger = int(trigger)
        except ValueError:
            pass
        duration = int(kv["duration"]) if "duration" in kv else None
        spacing = float(kv.get("spacing", DEFAULT_SPOOF_SPACING))
        direction = _DIRECTIONS.get(kv["direction"]) if "direction" in kv else None
        if "direction" in kv and direction is None:
            raise FormatError(f"line {lineno}: bad direction {kv['direction']!r}")
        if "side" in kv:
            direction = _DIRECTIONS.get(kv["side"])
            if direction is None:
                raise FormatError(f"line {lineno}: bad side {kv['side']!r}")
        rate = float(kv["rate"]) if "rate" in kv else None
    except ValueError as exc:
        raise FormatError(f"line {lineno}: {exc}") from exc
    try:
        return AttackScenario(
            kind=kind,
            trigger=trigger,
            duration=duration,
            spoof_spacing=spacing,
            direction=direction,
            rate=rate,
        )
    except ValidationError as exc:
        raise FormatError(f"line {lineno}: {exc}") from exc


def parse_scenarios(text: str) -> list[AttackScenario]:
    scenarios = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        scenarios.append(parse_scenario_line(line, lineno))
    return scenarios


def read_scenarios(path) -> list[AttackScenario]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_scenarios(f.read())


def scenario_to_line(s: AttackScenario) -> str:
    parts = [s.kind.value, f"trigger={s.trigger}"]
    if s.duration is not None:
        parts.append(f"duration={s.duration}")
    if s.kind is not AttackKind.SLOW_DRIFT and s.spoof_spacing != DEFAULT_SPOOF_SPACING:
        parts.append(f"spacing={s.spoof_spacing}")
    if s.direction is not None:
        key = "side" if s.kind is AttackKind.TURN_BY_TURN else "direction"
        parts.append(f"{key}={s.direction.value}")
    if s.rate is not None:
        parts.append(f"rate={s.rate}")
    return " ".join(parts)
