"""GNSS spoofing detection workbench.

Simulates autonomous-vehicle telemetry on procedural urban grids, injects
position-substitution spoofing attacks into a telemetry store, and detects
them with a fused pipeline: an LSTM next-second distance predictor, a
random-forest turn classifier cross-checked against GNSS turn geometry, and a
motion-state consistency check.
"""

from .attacks import (
    AttackEvent,
    AttackKind,
    AttackScenario,
    apply_event,
    make_slow_drift,
    make_turn_by_turn,
    make_wrong_turn,
    realize_scenario,
)
from .detector import DetectorConfig, DetectionReport, Flag, StrategyVerdict, motion_state, run
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    DivergenceError,
    DomainError,
    FormatError,
    RangeError,
    SpoofbenchError,
    ValidationError,
)
from .forest import (
    LabeledGyroSet,
    TurnForest,
    cross_validate,
    fit,
    load_forest,
    make_gyro_set,
    predict,
    save_forest,
    smote_resample,
)
from .geodesy import (
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
from .lstm import (
    ShiftPredictor,
    SupervisedSeries,
    TrainConfig,
    build_dataset,
    forward,
    load_lstm,
    predict_shift,
    save_lstm,
    train,
)
from .metrics import ConfusionMatrix, metrics
from .simulator import (
    NoiseProfile,
    RouteSpec,
    TelemetryRecord,
    Trip,
    ZERO_NOISE,
    generate_route,
    label_turn_windows,
    read_trip,
    simulate_trip,
    write_trip,
)
from .store import InjectionEntry, TelemetryStore, replay_injections

__version__ = "0.1.0"
