"""Scripted experiment suites: attack injection, detection, and metric tables.

A suite file declares a route, a noise profile, attack scenarios (symbolic
triggers allowed), and a seed list. Each seed yields an independent trip;
scenarios are realized against it, injected, and detected. Results aggregate
across seeds into event-level tables (per attack kind and direction) plus
timestamp-level confusion counts. Event metrics are primary: an attack counts
as detected when some detection event is attributed to its window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackEvent, AttackKind, AttackScenario, apply_event, parse_scenario_line, realize_scenario
from .detector import DetectionReport, DetectorConfig, run
from .errors import ConfigError, FormatError, ValidationError
from .forest import TurnForest
from .lstm import ShiftPredictor
from .metrics import ClassMetrics, binary_metrics
from .simulator import NoiseProfile, RouteSpec, simulate_trip
from .store import TelemetryStore


@dataclass
class SuiteSpec:
    route: RouteSpec
    noise: NoiseProfile
    seeds: list[int]
    scenarios: list[AttackScenario]
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    sim: dict = field(default_factory=dict)
    description: str = ""
    model_paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ValidationError("suite needs at least one seed")


def suite_from_dict(d: dict) -> SuiteSpec:
    try:
        route = RouteSpec.from_dict(d["route"])
        noise = NoiseProfile.from_dict(d.get("noise", {}))
        seeds = [int(s) for s in d.get("seeds", [0])]
        scenarios = [
            parse_scenario_line(line, i + 1) for i, line in enumerate(d.get("scenarios", []))
        ]
        detector = DetectorConfig(**d.get("detector", {}))
        sim = dict(d.get("sim", {}))
        return SuiteSpec(
            route=route,
            noise=noise,
            seeds=seeds,
            scenarios=scenarios,
            detector=detector,
            sim=sim,
            description=str(d.get("description", "")),
            model_paths=dict(d.get("models", {})),
        )
    except KeyError as exc:
        raise FormatError(f"suite missing key {exc}") from exc
    except TypeError as exc:
        raise FormatError(f"bad suite value: {exc}") from exc


def load_suite(path) -> SuiteSpec:
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"suite file: {exc}") from exc
    return suite_from_dict(d)


@dataclass
class AttackOutcome:
    kind: str
    direction: str | None
    t_start: int
    t_end: int
    detected: bool
    delay: int | None  # onset of first attributed event minus t_start


@dataclass
class SeedResult:
    seed: int
    n_timestamps: int
    attacks: list[AttackOutcome]
    events_total: int
    events_matched: int
    false_events: list[tuple[int, int]]  # (onset, end) of unmatched events
    alarmed_timestamps: int
    ts_tp: int
    ts_fp: int
    ts_fn: int
    ts_tn: int


@dataclass
class SuiteReport:
    description: str
    seeds: list[int]
    seed_results: list[SeedResult]
    rows: dict  # (kind, direction) -> aggregated event metrics
    event_precision: float | None
    event_recall: float | None
    detector: DetectorConfig


def run_seed(
    suite: SuiteSpec,
    seed: int,
    lstm_model: ShiftPredictor,
    forest_model: TurnForest,
    config: DetectorConfig,
) -> tuple[SeedResult, DetectionReport, list[AttackEvent]]:
    noise = replace(suite.noise, seed=seed)
    trip = simulate_trip(suite.route, noise, **suite.sim)
    events = [realize_scenario(s, trip) for s in suite.scenarios]
    events.sort(key=lambda e: e.t_start)
    for a, b in zip(events, events[1:]):
        if b.t_start <= a.t_end:
            raise ValidationError(
                f"attack windows [{a.t_start},{a.t_end}] and [{b.t_start},{b.t_end}] overlap"
            )
    store = TelemetryStore.from_trip(trip)
    for event in events:
        apply_event(event, store)
    report = run(lstm_model, forest_model, store, config=config, attacks=events)

    outcomes = []
    for i, event in enumerate(events):
        matching = [e for e in report.events if e.matched_attack == i]
        detected = bool(matching)
        delay = min(e.onset for e in matching) - event.t_start if detected else None
        outcomes.append(
            AttackOutcome(
                kind=event.scenario.kind.value,
                direction=event.scenario.direction.value if event.scenario.direction else None,
                t_start=event.t_start,
                t_end=event.t_end,
                detected=detected,
                delay=delay,
            )
        )
    false_events = [(e.onset, e.end) for e in report.false_alarm_events()]
    attacked = np.zeros(len(report.verdicts), dtype=bool)
    t_index = {v.t: i for i, v in enumerate(report.verdicts)}
    for event in events:
        for t in range(event.t_start, event.t_end + 1):
            if t in t_index:
                attacked[t_index[t]] = True
    alarmed = np.array([v.fused for v in report.verdicts], dtype=bool)
    result = SeedResult(
        seed=seed,
        n_timestamps=len(report.verdicts),
        attacks=outcomes,
        events_total=len(report.events),
        events_matched=sum(1 for e in report.events if e.matched_attack is not None),
        false_events=false_events,
        alarmed_timestamps=int(alarmed.sum()),
        ts_tp=int((alarmed & attacked).sum()),
        ts_fp=int((alarmed & ~attacked).sum()),
        ts_fn=int((~alarmed & attacked).sum()),
        ts_tn=int((~alarmed & ~attacked).sum()),
    )
    return result, report, events


def run_suite(
    suite: SuiteSpec,
    lstm_model: ShiftPredictor,
    forest_model: TurnForest,
    config: DetectorConfig | None = None,
) -> SuiteReport:
    config = config or suite.detector
    seed_results = []
    for seed in suite.seeds:
        result, _, _ = run_seed(suite, seed, lstm_model, forest_model, config)
        seed_results.append(result)
    rows = _aggregate_rows(seed_results)
    total_attacks = sum(len(r.attacks) for r in seed_results)
    detected = sum(1 for r in seed_results for a in r.attacks if a.detected)
    matched = sum(r.events_matched for r in seed_results)
    total_events = sum(r.events_total for r in seed_results)
    event_precision = None if total_events == 0 else matched / total_events
    event_recall = None if total_attacks == 0 else detected / total_attacks
    return SuiteReport(
        description=suite.description,
        seeds=list(suite.seeds),
        seed_results=seed_results,
        rows=rows,
        event_precision=event_precision,
        event_recall=event_recall,
        detector=config,
    )


def _nearest_direction(onset: int, attacks: list[AttackOutcome]) -> tuple[str, str | None] | None:
    best = None
    best_d = None
    for a in attacks:
        d = 0 if a.t_start <= onset <= a.t_end else min(
            abs(onset - a.t_start), abs(onset - a.t_end)
        )
        if best is None or d < best:
            best = d
            best_d = (a.kind, a.direction)
    return best_d


def _aggregate_rows(seed_results: list[SeedResult]) -> dict:
    """Event tallies per (kind, direction), false alarms charged to the
    nearest attack's row."""
    rows: dict = {}

    def row(key):
        if key not in rows:
            rows[key] = {"tp": 0, "fn": 0, "fp": 0, "delays": []}
        return rows[key]

    for r in seed_results:
        for a in r.attacks:
            entry = row((a.kind, a.direction))
            if a.detected:
                entry["tp"] += 1
                entry["delays"].append(a.delay)
            else:
                entry["fn"] += 1
        for onset, _ in r.false_events:
            key = _nearest_direction(onset, r.attacks)
            entry = row(key if key is not None else ("none", None))
            entry["fp"] += 1

    out = {}
    for key, entry in rows.items():
        m: ClassMetrics = binary_metrics(entry["tp"], entry["fp"], entry["fn"])
        denom = entry["tp"] + entry["fp"] + entry["fn"]
        out[key] = {
            "tp": entry["tp"],
            "fp": entry["fp"],
            "fn": entry["fn"],
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
            "accuracy": None if denom == 0 else entry["tp"] / denom,
            "mean_delay": None
            if not entry["delays"]
            else float(np.mean(entry["delays"])),
            "max_delay": None if not entry["delays"] else int(max(entry["delays"])),
        }
    return out


# ---------------------------------------------------------------------------
# Report rendering


def _fmt_metric(v) -> str:
    return "undef" if v is None else f"{v:.2f}"


def suite_report_to_dict(report: SuiteReport) -> dict:
    return {
        "description": report.description,
        "seeds": report.seeds,
        "detector": report.detector.to_dict(),
        "event_precision": report.event_precision,
        "event_recall": report.event_recall,
        "rows": [
            {
                "kind": kind,
                "direction": direction,
                **{k: v for k, v in row.items()},
            }
            for (kind, direction), row in sorted(
                report.rows.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))
            )
        ],
        "per_seed": [
            {
                "seed": r.seed,
                "timestamps": r.n_timestamps,
                "alarmed_timestamps": r.alarmed_timestamps,
                "events_total": r.events_total,
                "events_matched": r.events_matched,
                "false_events": r.false_events,
                "timestamp_confusion": {
                    "tp": r.ts_tp,
                    "fp": r.ts_fp,
                    "fn": r.ts_fn,
                    "tn": r.ts_tn,
                },
                "attacks": [
                    {
                        "kind": a.kind,
                        "direction": a.direction,
                        "window": [a.t_start, a.t_end],
                        "detected": a.detected,
                        "delay": a.delay,
                    }
                    for a in r.attacks
                ],
            }
            for r in report.seed_results
        ],
    }


def suite_report_to_text(report: SuiteReport) -> str:
    lines = []
    if report.description:
        lines.append(report.description)
    lines.append(f"seeds: {', '.join(str(s) for s in report.seeds)}")
    lines.append("")
    lines.append("event-level detection")
    header = f"{'attack':<14} {'direction':<10} {'precision':>9} {'recall':>7} {'accuracy':>9} {'f1':>6} {'tp':>4} {'fp':>4} {'fn':>4} {'delay':>6}"
    lines.append(header)
    lines.append("-" * len(header))
    for (kind, direction), row in sorted(
        report.rows.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))
    ):
        delay = "-" if row["mean_delay"] is None else f"{row['mean_delay']:.1f}s"
        lines.append(
            f"{kind:<14} {direction or '-':<10} "
            f"{_fmt_metric(row['precision']):>9} {_fmt_metric(row['recall']):>7} "
            f"{_fmt_metric(row['accuracy']):>9} {_fmt_metric(row['f1']):>6} "
            f"{row['tp']:>4} {row['fp']:>4} {row['fn']:>4} {delay:>6}"
        )
    lines.append("")
    lines.append(
        f"overall event precision {_fmt_metric(report.event_precision)}, "
        f"recall {_fmt_metric(report.event_recall)}"
    )
    lines.append("")
    lines.append("per-seed timestamps")
    sub = f"{'seed':>6} {'samples':>8} {'alarmed':>8} {'events':>7} {'matched':>8} {'ts_fp':>6}"
    lines.append(sub)
    lines.append("-" * len(sub))
    for r in report.seed_results:
        lines.append(
            f"{r.seed:>6} {r.n_timestamps:>8} {r.alarmed_timestamps:>8} "
            f"{r.events_total:>7} {r.events_matched:>8} {r.ts_fp:>6}"
        )
    return "\n".join(lines) + "\n"


def classifier_table_text(cv_report) -> str:
    """Aligned per-class table for a forest cross-validation report."""
    lines = ["turn classifier cross-validation"]
    header = f"{'turn type':<10} {'precision':>9} {'recall':>7} {'accuracy':>9} {'f1':>6}"
    lines.append(header)
    lines.append("-" * len(header))
    for label, row in cv_report.per_class.items():
        lines.append(
            f"{label.value:<10} {_fmt_metric(row['precision']):>9} "
            f"{_fmt_metric(row['recall']):>7} {_fmt_metric(cv_report.accuracy):>9} "
            f"{_fmt_metric(row['f1']):>6}"
        )
    return "\n".join(lines) + "\n"
