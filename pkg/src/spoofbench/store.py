"""Append-only, timestamp-indexed telemetry store with a position attack surface.

The store plays the role of the vehicle's onboard database. Its only mutation
beyond append is :meth:`TelemetryStore.inject_positions`, which substitutes
lat/lon over a time window and leaves every other field untouched. Every
injection is logged so a spoofed store can be rebuilt from the clean trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import FormatError, ValidationError
from .geodesy import GeoPoint
from .simulator import TelemetryRecord, Trip, read_trip, trip_to_text


@dataclass(frozen=True)
class InjectionEntry:
    """One applied injection: window, scenario kind, substituted points."""

    t_start: int
    t_end: int
    kind: str
    points: tuple[GeoPoint, ...]

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "t_start": self.t_start,
                "t_end": self.t_end,
                "kind": self.kind,
                "count": len(self.points),
                "points": [[p.lat, p.lon] for p in self.points],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json_line(cls, line: str, lineno: int = 0) -> "InjectionEntry":
        try:
            d = json.loads(line)
            points = tuple(GeoPoint(float(p[0]), float(p[1])) for p in d["points"])
            entry = cls(int(d["t_start"]), int(d["t_end"]), str(d["kind"]), points)
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise FormatError(f"injection log line {lineno}: {exc}") from exc
        if "count" in d and int(d["count"]) != len(points):
            raise FormatError(f"injection log line {lineno}: count mismatch")
        return entry


class TelemetryStore:
    """Single-writer record store; snapshots are immutable views."""

    def __init__(self) -> None:
        self._records: list[TelemetryRecord] = []
        self._index: dict[int, int] = {}
        self.injection_log: list[InjectionEntry] = []
        self.route = None
        self.noise = None

    @classmethod
    def from_trip(cls, trip: Trip) -> "TelemetryStore":
        store = cls()
        store.route = trip.route
        store.noise = trip.noise
        for rec in trip.records:
            store.append(rec)
        return store

    def __len__(self) -> int:
        return len(self._records)

    @property
    def first_t(self) -> int | None:
        return self._records[0].t if self._records else None

    @property
    def last_t(self) -> int | None:
        return self._records[-1].t if self._records else None

    def append(self, record: TelemetryRecord) -> None:
        if self._records and record.t <= self._records[-1].t:
            raise ValidationError(
                f"timestamp {record.t} not after last stored {self._records[-1].t}"
            )
        self._index[record.t] = len(self._records)
        self._records.append(record)

    def record_at(self, t: int) -> TelemetryRecord | None:
        i = self._index.get(t)
        return None if i is None else self._records[i]

    def snapshot(self, window: tuple[int, int] | None = None) -> tuple[TelemetryRecord, ...]:
        """Immutable view of records with t in the inclusive window."""
        if window is None:
            return tuple(self._records)
        t0, t1 = window
        return tuple(r for r in self._records if t0 <= r.t <= t1)

    def inject_positions(
        self,
        window: tuple[int, int],
        spoofed: Sequence[GeoPoint],
        kind: str = "manual",
    ) -> None:
        """Substitute lat/lon over the window, atomically.

        The spoofed sequence must cover the window exactly (one point per
        stored timestamp); on any validation failure the store is unchanged.
        """
        t0, t1 = int(window[0]), int(window[1])
        if t1 < t0:
            raise ValidationError(f"empty injection window [{t0}, {t1}]")
        positions: list[int] = []
        for t in range(t0, t1 + 1):
            i = self._index.get(t)
            if i is None:
                raise ValidationError(f"injection window covers missing timestamp {t}")
            positions.append(i)
        if len(spoofed) != len(positions):
            raise ValidationError(
                f"{len(spoofed)} spoofed points for a {len(positions)}-record window"
            )
        points = tuple(
            p if isinstance(p, GeoPoint) else GeoPoint(float(p[0]), float(p[1]))
            for p in spoofed
        )
        replaced = [
            replace(self._records[i], lat=p.lat, lon=p.lon)
            for i, p in zip(positions, points)
        ]
        for i, rec in zip(positions, replaced):
            self._records[i] = rec
        self.injection_log.append(InjectionEntry(t0, t1, kind, points))

    # -- persistence --------------------------------------------------------

    def to_trip(self) -> Trip:
        return Trip(records=list(self._records), route=self.route, noise=self.noise)

    def save(self, path, log_path=None) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            f.write(trip_to_text(self.to_trip()))
        if log_path is None:
            log_path = path.with_suffix(path.suffix + ".inj")
        if self.injection_log:
            with open(log_path, "w", encoding="utf-8") as f:
                for entry in self.injection_log:
                    f.write(entry.to_json_line() + "\n")

    @classmethod
    def load(cls, path, log_path=None) -> "TelemetryStore":
        path = Path(path)
        store = cls.from_trip(read_trip(path))
        if log_path is None:
            log_path = path.with_suffix(path.suffix + ".inj")
        log_path = Path(log_path)
        if log_path.exists():
            store.injection_log = read_injection_log(log_path)
        return store


def read_injection_log(path) -> list[InjectionEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if line:
                entries.append(InjectionEntry.from_json_line(line, lineno))
    return entries


def replay_injections(clean_trip: Trip, log: Iterable[InjectionEntry]) -> TelemetryStore:
    """Rebuild the spoofed store by replaying a log against the clean trip."""
    store = TelemetryStore.from_trip(clean_trip)
    for entry in log:
        store.inject_positions((entry.t_start, entry.t_end), entry.points, entry.kind)
    return store
