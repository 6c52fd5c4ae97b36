"""Command-line pipeline: generate, inject, train, detect, evaluate, plot.

Every output is written atomically (temp file + rename) and is byte
reproducible from the same inputs and seeds. Exit codes: 0 success, 2 parse
error, 3 validation error, 4 configuration error, 5 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import attacks as attacks_mod
from . import evaluation
from .detector import DetectorConfig, parse_report_verdicts, report_to_text, run
from .errors import ConfigError, FormatError, SpoofbenchError, ValidationError
from .forest import cross_validate, fit, load_forest, make_gyro_set, save_forest
from .geodesy import GeoPoint, geo_to_enu
from .lstm import (
    ShiftPredictor,
    TrainConfig,
    build_dataset,
    load_lstm,
    save_lstm,
    train,
)
from .simulator import (
    NoiseProfile,
    RouteSpec,
    Trip,
    read_trip,
    simulate_trip,
    trip_to_text,
)
from .store import TelemetryStore, read_injection_log, replay_injections


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_json(path, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} file not found: {path}")
    try:
        with open(p, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{what} file {path}: {exc}") from exc


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} file not found: {path}")
    return p


def _parse_overrides(pairs: list[str]) -> dict:
    out: dict = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValidationError(f"expected key=value override, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = value
    return out


def _coerce_overrides(overrides: dict, template) -> dict:
    coerced = {}
    for key, value in overrides.items():
        if not hasattr(template, key):
            raise ValidationError(f"unknown config key {key!r}")
        current = getattr(template, key)
        if isinstance(current, bool):
            coerced[key] = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            coerced[key] = int(value)
        elif isinstance(current, float):
            coerced[key] = float(value)
        else:
            coerced[key] = value
    return coerced


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    route = RouteSpec.from_dict(_load_json(args.route, "route"))
    noise_dict = _load_json(args.noise, "noise") if args.noise else {}
    noise = NoiseProfile.from_dict(noise_dict)
    if args.seed is not None:
        noise = replace(noise, seed=args.seed)
    trip = simulate_trip(
        route,
        noise,
        lead_in_stop_s=args.lead_in,
        lead_out_stop_s=args.lead_out,
        start_at_cruise=args.start_at_cruise,
    )
    if args.max_records is not None:
        trip = trip.truncated(args.max_records)
    atomic_write_text(args.out, trip_to_text(trip))
    print(f"wrote {len(trip)} records to {args.out}")
    return 0


def cmd_inject(args) -> int:
    trip = read_trip(_require_file(args.trip, "trip"))
    scenarios = attacks_mod.read_scenarios(_require_file(args.scenarios, "scenario"))
    store = TelemetryStore.from_trip(trip)
    events = [attacks_mod.realize_scenario(s, trip) for s in scenarios]
    events.sort(key=lambda e: e.t_start)
    for a, b in zip(events, events[1:]):
        if b.t_start <= a.t_end:
            raise ValidationError("attack windows overlap; stagger the scenarios")
    for event in events:
        attacks_mod.apply_event(event, store)
    atomic_write_text(args.out, trip_to_text(store.to_trip()))
    log_path = args.log or str(Path(args.out).with_suffix(Path(args.out).suffix + ".inj"))
    atomic_write_text(
        log_path, "".join(e.to_json_line() + "\n" for e in store.injection_log)
    )
    print(f"injected {len(events)} attacks into {args.out} (log: {log_path})")
    return 0


def cmd_train_lstm(args) -> int:
    trip = read_trip(_require_file(args.trip, "trip"))
    config = TrainConfig(
        **_coerce_overrides(_parse_overrides(args.config), TrainConfig())
    )
    split = build_dataset(trip, window=args.window)
    model = ShiftPredictor.new(
        hidden_size=args.hidden, window=args.window, seed=config.seed
    )
    history = train(model, split.train, config, validation=split.validation)
    atomic_write_text(args.out, _model_text(model))
    if args.history:
        lines = ["epoch,train_mae,val_mae"]
        for i, tr in enumerate(history.train_mae):
            val = history.val_mae[i] if i < len(history.val_mae) else ""
            lines.append(f"{i + 1},{tr:.9g},{'' if val == '' else format(val, '.9g')}")
        atomic_write_text(args.history, "\n".join(lines) + "\n")
    span = model.target_bounds[1] - model.target_bounds[0]
    final_val = history.val_mae[-1] * span if history.val_mae else float("nan")
    print(
        f"trained {config.epochs} epochs; final train MAE {history.train_mae[-1] * span:.4f} m, "
        f"validation MAE {final_val:.4f} m -> {args.out}"
    )
    return 0


def _model_text(model: ShiftPredictor) -> str:
    import io

    buf = io.StringIO()
    tmp_path = None
    # save_lstm works on paths; reuse it through a temp file to keep one writer.
    fd, tmp_path = tempfile.mkstemp(suffix=".lstm")
    os.close(fd)
    try:
        save_lstm(model, tmp_path)
        with open(tmp_path, "r", encoding="utf-8") as f:
            return f.read()
    finally:
        os.unlink(tmp_path)


def cmd_train_forest(args) -> int:
    trip = read_trip(_require_file(args.trip, "trip"))
    gset = make_gyro_set(trip)
    from .forest import smote_resample

    cv = cross_validate(
        gset,
        folds=args.folds,
        n_trees=args.trees,
        max_depth=args.depth,
        min_samples_leaf=args.min_leaf,
        seed=args.seed,
    )
    balanced = smote_resample(gset, seed=args.seed)
    model = fit(
        balanced,
        n_trees=args.trees,
        max_depth=args.depth,
        min_samples_leaf=args.min_leaf,
        seed=args.seed,
    )
    fd, tmp_path = tempfile.mkstemp(suffix=".forest")
    os.close(fd)
    try:
        save_forest(model, tmp_path)
        with open(tmp_path, "r", encoding="utf-8") as f:
            atomic_write_text(args.out, f.read())
    finally:
        os.unlink(tmp_path)
    if args.report:
        payload = {
            "accuracy": cv.accuracy,
            "folds": cv.folds,
            "hyperparams": cv.hyperparams,
            "per_class": {
                label.value: row for label, row in cv.per_class.items()
            },
        }
        atomic_write_text(args.report, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(evaluation.classifier_table_text(cv), end="")
    print(f"model -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    trip = read_trip(_require_file(args.trip, "trip"))
    lstm_model = load_lstm(_require_file(args.lstm, "LSTM model"))
    forest_model = load_forest(_require_file(args.forest, "forest model"))
    overrides = _coerce_overrides(_parse_overrides(args.config), DetectorConfig())
    config = DetectorConfig(**overrides)
    store = TelemetryStore.from_trip(trip)
    attacks = None
    if args.attacks:
        attacks = [
            (e.t_start, e.t_end) for e in read_injection_log(_require_file(args.attacks, "injection log"))
        ]
    report = run(lstm_model, forest_model, store, config=config, attacks=attacks)
    header = {"overrides": " ".join(args.config or []) or "-", "trip": str(args.trip)}
    atomic_write_text(args.out, report_to_text(report, header))
    alarmed = len(report.alarmed_timestamps())
    print(
        f"{len(report.verdicts)} timestamps, {alarmed} alarmed, "
        f"{len(report.events)} events -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    suite = evaluation.load_suite(_require_file(args.suite, "suite"))
    lstm_path = args.lstm or suite.model_paths.get("lstm")
    forest_path = args.forest or suite.model_paths.get("forest")
    if not lstm_path or not forest_path:
        raise ConfigError("suite needs LSTM and forest model paths (file or flags)")
    lstm_model = load_lstm(_require_file(lstm_path, "LSTM model"))
    forest_model = load_forest(_require_file(forest_path, "forest model"))
    overrides = _coerce_overrides(_parse_overrides(args.config), suite.detector)
    config = replace(suite.detector, **overrides) if overrides else suite.detector
    report = evaluation.run_suite(suite, lstm_model, forest_model, config)
    payload = evaluation.suite_report_to_dict(report)
    payload["overrides"] = " ".join(args.config or []) or "-"
    atomic_write_text(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    text = evaluation.suite_report_to_text(report)
    if args.text:
        atomic_write_text(args.text, text)
    print(text, end="")
    print(f"report -> {args.out}")
    return 0


def cmd_plot(args) -> int:
    path = _require_file(args.input, "input")
    text = path.read_text(encoding="utf-8")
    if args.kind == "auto":
        if text.startswith("# spoofbench-report"):
            kind = "report"
        elif text.splitlines()[0].startswith("epoch,"):
            kind = "history"
        else:
            kind = "trip"
    else:
        kind = args.kind
    if kind == "trip":
        svg = plot_trip_svg(read_trip(path))
    elif kind == "history":
        svg = plot_history_svg(text)
    elif kind == "report":
        svg = plot_report_svg(text)
    else:
        raise ValidationError(f"unknown plot kind {kind!r}")
    atomic_write_text(args.out, svg)
    print(f"plot -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# SVG rendering (hand-rolled so output bytes depend only on the data)

_SVG_W, _SVG_H, _SVG_PAD = 640, 480, 40


def _svg_doc(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _scale(values, lo, hi, out_lo, out_hi):
    if hi <= lo:
        return [0.5 * (out_lo + out_hi) for _ in values]
    return [out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo) for v in values]


def _polyline(xs, ys, color: str, width: float = 1.5) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>'


def plot_trip_svg(trip: Trip) -> str:
    """Route trace in the local tangent plane, one vertex per fix."""
    if not trip.records:
        raise ValidationError("cannot plot an empty trip")
    anchor = trip.route.origin if trip.route else trip.records[0].fix
    enu = [geo_to_enu(rec.fix, anchor) for rec in trip.records]
    xs = [p.east for p in enu]
    ys = [p.north for p in enu]
    px = _scale(xs, min(xs), max(xs), _SVG_PAD, _SVG_W - _SVG_PAD)
    py = _scale(ys, min(ys), max(ys), _SVG_H - _SVG_PAD, _SVG_PAD)
    body = [
        '<rect width="100%" height="100%" fill="white"/>',
        _polyline(px, py, "#1f6fb2"),
        f'<circle cx="{px[0]:.2f}" cy="{py[0]:.2f}" r="4" fill="#2a9d3a"/>',
        f'<circle cx="{px[-1]:.2f}" cy="{py[-1]:.2f}" r="4" fill="#c23b22"/>',
        f'<text x="{_SVG_PAD}" y="20" font-size="13">route trace, {len(trip.records)} fixes</text>',
    ]
    return _svg_doc(body)


def plot_history_svg(text: str) -> str:
    """Training/validation MAE learning curves from a history CSV."""
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or not lines[0].startswith("epoch,"):
        raise FormatError("history file must start with an 'epoch,' header")
    epochs, train_vals, val_vals = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected 3 fields")
        epochs.append(int(parts[0]))
        train_vals.append(float(parts[1]))
        val_vals.append(float(parts[2]) if parts[2] else None)
    if not epochs:
        raise FormatError("history file has no rows")
    known_vals = train_vals + [v for v in val_vals if v is not None]
    lo, hi = min(known_vals), max(known_vals)
    px = _scale(epochs, epochs[0], epochs[-1], _SVG_PAD, _SVG_W - _SVG_PAD)
    py_train = _scale(train_vals, lo, hi, _SVG_H - _SVG_PAD, _SVG_PAD)
    body = ['<rect width="100%" height="100%" fill="white"/>']
    body.append(_polyline(px, py_train, "#1f6fb2"))
    if any(v is not None for v in val_vals):
        pairs = [(x, v) for x, v in zip(px, val_vals) if v is not None]
        py_val = _scale([v for _, v in pairs], lo, hi, _SVG_H - _SVG_PAD, _SVG_PAD)
        body.append(_polyline([x for x, _ in pairs], py_val, "#c23b22"))
    body.append(
        f'<text x="{_SVG_PAD}" y="20" font-size="13">MAE per epoch '
        f"(train blue, validation red), min {lo:.4g} max {hi:.4g}</text>"
    )
    return _svg_doc(body)


def plot_report_svg(text: str) -> str:
    """Residual trace with fused-alarm markers from a detection report."""
    rows = parse_report_verdicts(text)
    if not rows:
        raise FormatError("report has no verdicts")
    ts = [r["t"] for r in rows]
    px = _scale(ts, ts[0], ts[-1], _SVG_PAD, _SVG_W - _SVG_PAD)
    residuals = [r["residual"] for r in rows]
    known = [v for v in residuals if v is not None]
    hi = max(known) if known else 1.0
    body = ['<rect width="100%" height="100%" fill="white"/>']
    pairs = [(x, v) for x, v in zip(px, residuals) if v is not None]
    if pairs:
        py = _scale([v for _, v in pairs], 0.0, hi, _SVG_H - _SVG_PAD, _SVG_PAD)
        body.append(_polyline([x for x, _ in pairs], py, "#1f6fb2", 1.0))
    for x, r in zip(px, rows):
        if r["fused"]:
            body.append(
                f'<line x1="{x:.2f}" y1="{_SVG_H - _SVG_PAD}" x2="{x:.2f}" '
                f'y2="{_SVG_PAD}" stroke="#c23b22" stroke-width="0.8" opacity="0.5"/>'
            )
    body.append(
        f'<text x="{_SVG_PAD}" y="20" font-size="13">distance residual (m) and fused alarms, '
        f"{len(rows)} timestamps</text>"
    )
    return _svg_doc(body)


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spoofbench",
        description="GNSS spoofing detection workbench: simulate, attack, detect, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate an attack-free trip")
    p.add_argument("--route", required=True, help="route spec JSON file")
    p.add_argument("--noise", help="noise profile JSON file")
    p.add_argument("--seed", type=int, help="override the noise profile seed")
    p.add_argument("--lead-in", type=float, default=0.0, dest="lead_in")
    p.add_argument("--lead-out", type=float, default=0.0, dest="lead_out")
    p.add_argument("--start-at-cruise", action="store_true")
    p.add_argument("--max-records", type=int, dest="max_records")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("inject", help="inject attack scenarios into a trip")
    p.add_argument("--trip", required=True)
    p.add_argument("--scenarios", required=True, help="scenario file, one per line")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="injection log path (default <out>.inj)")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("train-lstm", help="train the distance predictor")
    p.add_argument("--trip", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-epoch MAE CSV here")
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--config", nargs="*", help="TrainConfig overrides key=value")
    p.set_defaults(func=cmd_train_lstm)

    p = sub.add_parser("train-forest", help="train the turn classifier")
    p.add_argument("--trip", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write cross-validation JSON here")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--min-leaf", type=int, default=2, dest="min_leaf")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_forest)

    p = sub.add_parser("detect", help="run the fused detector over a trip")
    p.add_argument("--trip", required=True)
    p.add_argument("--lstm", required=True)
    p.add_argument("--forest", required=True)
    p.add_argument("--attacks", help="injection log for event attribution")
    p.add_argument("--config", nargs="*", help="DetectorConfig overrides key=value")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="run a declarative experiment suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--lstm", help="override the suite's LSTM model path")
    p.add_argument("--forest", help="override the suite's forest model path")
    p.add_argument("--config", nargs="*", help="DetectorConfig overrides key=value")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--text", help="aligned text table path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="draw a trip, learning curve, or report as SVG")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=["auto", "trip", "history", "report"], default="auto")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpoofbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
