"""Real-time fusion of distance, turn, and motion-state consistency checks.

Each strategy is evaluated independently per timestamp over an immutable
store snapshot; the fused alarm is their OR. Contiguous fused-alarm runs are
grouped into detection events and, when attack windows are supplied, each
event is attributed to the first window whose span (plus a grace period)
contains the event onset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateGeometryError, FormatError, ValidationError
from .geodesy import TurnClass, classify_gnss_turn, gnss_turn_angle, haversine_distance
from .lstm import FEATURE_NAMES, ShiftPredictor, normalize_features, predict_meters
from .forest import TurnForest, predict_batch
from .simulator import TelemetryRecord


class Flag(Enum):
    OK = "ok"
    ALARM = "alarm"
    NOT_READY = "not_ready"


@dataclass(frozen=True)
class DetectorConfig:
    distance_threshold: float = 0.5  # m, LSTM-vs-GNSS residual
    turn_angle_threshold: float = 15.0  # deg, GNSS turn classification
    turn_mismatch_debounce: int = 3  # consecutive mismatched timestamps
    velocity_threshold: float = 0.03  # m/s, moving/standstill split
    standstill_shift_threshold: float = 0.15  # m, GNSS shift allowed at standstill
    moving_speed_margin: float = 3.0  # m/s, coarse GNSS-speed cross-check
    event_grace_s: int = 5  # s past an attack window an onset still counts
    enable_distance: bool = True
    enable_turn: bool = True
    enable_motion: bool = True

    def __post_init__(self):
        for name in (
            "distance_threshold",
            "turn_angle_threshold",
            "velocity_threshold",
            "standstill_shift_threshold",
            "moving_speed_margin",
        ):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.turn_mismatch_debounce < 1:
            raise ValidationError("turn_mismatch_debounce must be >= 1")
        if self.event_grace_s < 0:
            raise ValidationError("event_grace_s must be >= 0")

    def to_dict(self) -> dict:
        return {
            "distance_threshold": self.distance_threshold,
            "turn_angle_threshold": self.turn_angle_threshold,
            "turn_mismatch_debounce": self.turn_mismatch_debounce,
            "velocity_threshold": self.velocity_threshold,
            "standstill_shift_threshold": self.standstill_shift_threshold,
            "moving_speed_margin": self.moving_speed_margin,
            "event_grace_s": self.event_grace_s,
            "enable_distance": self.enable_distance,
            "enable_turn": self.enable_turn,
            "enable_motion": self.enable_motion,
        }


@dataclass(frozen=True)
class StrategyVerdict:
    t: int
    distance_flag: Flag
    turn_flag: Flag
    motion_flag: Flag
    fused: bool
    residual: float | None
    gyro_turn: TurnClass
    gnss_turn: TurnClass
    moving: bool


@dataclass(frozen=True)
class DetectionEvent:
    event_id: int
    onset: int
    end: int
    strategies: frozenset[str]
    matched_attack: int | None = None

    @property
    def duration(self) -> int:
        return self.end - self.onset + 1


@dataclass
class DetectionReport:
    verdicts: list[StrategyVerdict]
    events: list[DetectionEvent]
    config: DetectorConfig
    attack_windows: list[tuple[int, int]] = field(default_factory=list)

    def alarmed_timestamps(self) -> list[int]:
        return [v.t for v in self.verdicts if v.fused]

    def false_alarm_events(self) -> list[DetectionEvent]:
        return [e for e in self.events if e.matched_attack is None]


# ---------------------------------------------------------------------------
# Per-timestamp strategy logic


def motion_state(record: TelemetryRecord, threshold: float = 0.03) -> bool:
    """True (moving) iff any velocity component exceeds the threshold."""
    for v in (record.vel_n, record.vel_e, record.vel_u):
        if not math.isfinite(v):
            raise ValidationError(f"non-finite velocity at t={record.t}")
    return (
        abs(record.vel_n) > threshold
        or abs(record.vel_e) > threshold
        or abs(record.vel_u) > threshold
    )


def _gnss_shift(store, t: int) -> float | None:
    a = store.record_at(t - 1)
    b = store.record_at(t)
    if a is None or b is None:
        return None
    return haversine_distance(a.fix, b.fix)


def _distance_core(
    predicted: float | None, shift: float | None, config: DetectorConfig
) -> tuple[Flag, float | None]:
    if predicted is None or shift is None:
        return Flag.NOT_READY, None
    residual = abs(predicted - shift)
    return (Flag.ALARM if residual > config.distance_threshold else Flag.OK), residual


def distance_strategy(
    model: ShiftPredictor, store, t: int, config: DetectorConfig
) -> tuple[Flag, float | None]:
    """Compare the LSTM's predicted shift with the GNSS-measured one."""
    from .lstm import predict_shift

    return _distance_core(predict_shift(model, store, t), _gnss_shift(store, t), config)


def _gnss_turn_at(store, t: int, config: DetectorConfig) -> TurnClass | None:
    """GNSS turn class from the t-2..t fix triple; None when history is short."""
    p0 = store.record_at(t - 2)
    p1 = store.record_at(t - 1)
    p2 = store.record_at(t)
    if p0 is None or p1 is None or p2 is None:
        return None
    try:
        angle = gnss_turn_angle(p0.fix, p1.fix, p2.fix)
    except DegenerateGeometryError:
        # Zero-length segments only occur at standstill; no maneuver then.
        return TurnClass.NO_TURN
    return classify_gnss_turn(angle, config.turn_angle_threshold)


_MISMATCH, _MATCH, _SUPPRESSED, _NOT_READY = "mismatch", "match", "suppressed", "not_ready"


def _turn_state(
    store,
    t: int,
    gyro_turn_at: Callable[[int], TurnClass | None],
    config: DetectorConfig,
) -> tuple[str, TurnClass, TurnClass]:
    rec = store.record_at(t)
    gyro = gyro_turn_at(t) or TurnClass.NO_TURN
    if rec is None:
        return _NOT_READY, gyro, TurnClass.NO_TURN
    if not motion_state(rec, config.velocity_threshold):
        return _SUPPRESSED, gyro, TurnClass.NO_TURN
    gnss = _gnss_turn_at(store, t, config)
    if gnss is None:
        return _NOT_READY, gyro, TurnClass.NO_TURN
    state = _MISMATCH if gyro is not gnss else _MATCH
    return state, gyro, gnss


def turn_strategy(
    forest_model: TurnForest, store, t: int, config: DetectorConfig
) -> tuple[Flag, TurnClass, TurnClass]:
    """Cross-check gyro-classified maneuvers against GNSS turn geometry.

    Alarms only after ``turn_mismatch_debounce`` consecutive mismatching
    timestamps; standstill suppresses the check entirely.
    """

    def gyro_at(ti: int) -> TurnClass | None:
        rec = store.record_at(ti)
        if rec is None:
            return None
        from .forest import predict

        return predict(forest_model, rec.gyro)[0]

    state, gyro, gnss = _turn_state(store, t, gyro_at, config)
    if state == _NOT_READY:
        return Flag.NOT_READY, gyro, gnss
    if state in (_SUPPRESSED, _MATCH):
        return Flag.OK, gyro, gnss
    run = 1
    ti = t - 1
    while run < config.turn_mismatch_debounce:
        prev_state, _, _ = _turn_state(store, ti, gyro_at, config)
        if prev_state != _MISMATCH:
            break
        run += 1
        ti -= 1
    flag = Flag.ALARM if run >= config.turn_mismatch_debounce else Flag.OK
    return flag, gyro, gnss


def _motion_core(
    record: TelemetryRecord, shift: float | None, config: DetectorConfig
) -> tuple[Flag, bool]:
    moving = motion_state(record, config.velocity_threshold)
    if shift is None:
        return Flag.OK, moving
    if not moving:
        flag = Flag.ALARM if shift > config.standstill_shift_threshold else Flag.OK
        return flag, moving
    speed = math.sqrt(record.vel_n**2 + record.vel_e**2 + record.vel_u**2)
    flag = Flag.ALARM if abs(shift - speed) > config.moving_speed_margin else Flag.OK
    return flag, moving


def motion_strategy(store, t: int, config: DetectorConfig) -> Flag:
    """Flag standstill position jumps and gross GNSS-speed inconsistency."""
    rec = store.record_at(t)
    if rec is None:
        return Flag.OK
    return _motion_core(rec, _gnss_shift(store, t), config)[0]


# ---------------------------------------------------------------------------
# Full run


def run(
    lstm_model: ShiftPredictor | None,
    forest_model: TurnForest | None,
    store,
    window: tuple[int, int] | None = None,
    config: DetectorConfig | None = None,
    attacks: Sequence | None = None,
) -> DetectionReport:
    """One verdict per timestamp in the window, plus grouped events.

    Models may be None only for strategies disabled in the config. ``attacks``
    is a sequence of AttackEvent or (t_start, t_end) windows used to attribute
    detection events.
    """
    config = config or DetectorConfig()
    if config.enable_distance and lstm_model is None:
        raise ValidationError("distance strategy enabled but no LSTM model given")
    if config.enable_turn and forest_model is None:
        raise ValidationError("turn strategy enabled but no forest model given")
    records = store.snapshot()
    if not records:
        raise ValidationError("empty store")
    by_t = {rec.t: rec for rec in records}
    t0, t1 = records[0].t, records[-1].t
    if window is not None:
        t0, t1 = int(window[0]), int(window[1])
        if t0 < records[0].t or t1 > records[-1].t:
            raise ValidationError(f"window [{t0}, {t1}] outside stored range")

    class _Snap:
        def record_at(self, t):
            return by_t.get(t)

    snap = _Snap()
    ts = [t for t in range(t0, t1 + 1) if t in by_t]

    predictions: dict[int, float] = {}
    if config.enable_distance:
        predictions = _batch_predictions(lstm_model, by_t, ts)
    gyro_classes: dict[int, TurnClass] = {}
    if config.enable_turn:
        rows = np.array([by_t[t].gyro for t in ts], dtype=float)
        codes, _ = predict_batch(forest_model, rows)
        from .forest import CLASS_ORDER

        gyro_classes = {t: CLASS_ORDER[c] for t, c in zip(ts, codes)}

    verdicts: list[StrategyVerdict] = []
    mismatch_run = 0
    prev_t = None
    for t in ts:
        rec = by_t[t]
        shift = _gnss_shift(snap, t)
        if config.enable_distance:
            d_flag, residual = _distance_core(predictions.get(t), shift, config)
        else:
            d_flag, residual = Flag.NOT_READY, None
        if config.enable_motion:
            m_flag, moving = _motion_core(rec, shift, config)
        else:
            m_flag = Flag.OK
            moving = motion_state(rec, config.velocity_threshold)
        if config.enable_turn:
            state, gyro, gnss = _turn_state(
                snap, t, lambda ti: gyro_classes.get(ti), config
            )
            if prev_t is not None and t != prev_t + 1:
                mismatch_run = 0  # gap in the stream breaks any mismatch run
            if state == _MISMATCH:
                mismatch_run += 1
            else:
                mismatch_run = 0
            if state == _NOT_READY:
                t_flag = Flag.NOT_READY
            elif mismatch_run >= config.turn_mismatch_debounce:
                t_flag = Flag.ALARM
            else:
                t_flag = Flag.OK
        else:
            t_flag, gyro, gnss = Flag.NOT_READY, TurnClass.NO_TURN, TurnClass.NO_TURN
        fused = Flag.ALARM in (d_flag, t_flag, m_flag)
        verdicts.append(
            StrategyVerdict(
                t=t,
                distance_flag=d_flag,
                turn_flag=t_flag,
                motion_flag=m_flag,
                fused=fused,
                residual=residual,
                gyro_turn=gyro,
                gnss_turn=gnss,
                moving=moving,
            )
        )
        prev_t = t

    windows = _attack_windows(attacks)
    events = _group_events(verdicts, windows, config.event_grace_s)
    return DetectionReport(
        verdicts=verdicts, events=events, config=config, attack_windows=windows
    )


def _batch_predictions(model: ShiftPredictor, by_t: dict, ts: list[int]) -> dict[int, float]:
    if model.feature_bounds is None:
        raise ValidationError("model has no feature bounds; train or load it first")
    w = model.window
    ready = []
    stacked = []
    for t in ts:
        rows = []
        for ti in range(t - w, t):
            rec = by_t.get(ti)
            if rec is None:
                rows = None
                break
            rows.append([getattr(rec, name) for name in FEATURE_NAMES])
        if rows is not None:
            ready.append(t)
            stacked.append(rows)
    out: dict[int, float] = {}
    if not ready:
        return out
    x = normalize_features(np.array(stacked, dtype=float), model.feature_bounds)
    for start in range(0, len(ready), 1024):
        y = predict_meters(model, x[start : start + 1024])
        for t, val in zip(ready[start : start + 1024], np.atleast_1d(y)):
            out[t] = float(val)
    return out


def _attack_windows(attacks: Sequence | None) -> list[tuple[int, int]]:
    if not attacks:
        return []
    windows = []
    for a in attacks:
        if hasattr(a, "window"):
            windows.append((int(a.window[0]), int(a.window[1])))
        else:
            windows.append((int(a[0]), int(a[1])))
    return windows


def _group_events(
    verdicts: list[StrategyVerdict],
    attack_windows: list[tuple[int, int]],
    grace: int,
) -> list[DetectionEvent]:
    events: list[DetectionEvent] = []
    run_start = None
    run_strategies: set[str] = set()
    prev_t = None

    def close(end_t: int) -> None:
        onset = run_start
        matched = None
        for i, (a0, a1) in enumerate(attack_windows):
            if a0 <= onset <= a1 + grace:
                matched = i
                break
        events.append(
            DetectionEvent(
                event_id=len(events),
                onset=onset,
                end=end_t,
                strategies=frozenset(run_strategies),
                matched_attack=matched,
            )
        )

    for v in verdicts:
        contiguous = prev_t is not None and v.t == prev_t + 1
        if v.fused:
            if run_start is not None and not contiguous:
                close(prev_t)
                run_start = None
            if run_start is None:
                run_start = v.t
                run_strategies = set()
            if v.distance_flag is Flag.ALARM:
                run_strategies.add("distance")
            if v.turn_flag is Flag.ALARM:
                run_strategies.add("turn")
            if v.motion_flag is Flag.ALARM:
                run_strategies.add("motion")
        else:
            if run_start is not None:
                close(prev_t)
                run_start = None
        prev_t = v.t
    if run_start is not None:
        close(prev_t)
    return events


# ---------------------------------------------------------------------------
# Report serialization

_REPORT_MAGIC = "# spoofbench-report v1"
_FLAG_TEXT = {Flag.OK: "ok", Flag.ALARM: "alarm", Flag.NOT_READY: "not_ready"}
_TEXT_FLAG = {v: k for k, v in _FLAG_TEXT.items()}


def report_to_text(report: DetectionReport, header_extra: dict | None = None) -> str:
    lines = [_REPORT_MAGIC]
    cfg = " ".join(f"{k}={v}" for k, v in report.config.to_dict().items())
    lines.append(f"# config: {cfg}")
    for key, value in (header_extra or {}).items():
        lines.append(f"# {key}: {value}")
    if report.attack_windows:
        spans = " ".join(f"{i}:{a}-{b}" for i, (a, b) in enumerate(report.attack_windows))
        lines.append(f"# attacks: {spans}")
    lines.append("t,distance,turn,motion,fused,residual,gyro_turn,gnss_turn,moving")
    for v in report.verdicts:
        residual = "" if v.residual is None else format(v.residual, ".9g")
        lines.append(
            ",".join(
                [
                    str(v.t),
                    _FLAG_TEXT[v.distance_flag],
                    _FLAG_TEXT[v.turn_flag],
                    _FLAG_TEXT[v.motion_flag],
                    "1" if v.fused else "0",
                    residual,
                    v.gyro_turn.value,
                    v.gnss_turn.value,
                    "1" if v.moving else "0",
                ]
            )
        )
    lines.append(f"# events: {len(report.events)}")
    for e in report.events:
        matched = "-" if e.matched_attack is None else str(e.matched_attack)
        strategies = ",".join(sorted(e.strategies)) or "-"
        lines.append(
            f"# event {e.event_id} onset={e.onset} end={e.end} "
            f"strategies={strategies} matched={matched}"
        )
    return "\n".join(lines) + "\n"


def write_report(report: DetectionReport, path, header_extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(report_to_text(report, header_extra))


def parse_report_verdicts(text: str) -> list[dict]:
    """Verdict rows of a report file as dicts (for plotting and tooling)."""
    rows = []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != "t,distance,turn,motion,fused,residual,gyro_turn,gnss_turn,moving":
                raise FormatError(f"line {lineno}: unrecognized report header")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise FormatError(f"line {lineno}: expected 9 fields, got {len(parts)}")
        try:
            rows.append(
                {
                    "t": int(parts[0]),
                    "distance": _TEXT_FLAG[parts[1]],
                    "turn": _TEXT_FLAG[parts[2]],
                    "motion": _TEXT_FLAG[parts[3]],
                    "fused": parts[4] == "1",
                    "residual": None if parts[5] == "" else float(parts[5]),
                    "moving": parts[8] == "1",
                }
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
    if not header_seen:
        raise FormatError("no verdict header found")
    return rows
