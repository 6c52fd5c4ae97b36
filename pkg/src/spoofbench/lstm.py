"""Single-layer LSTM regressor of next-second travel distance, from scratch.

Nine fused sensor features per timestep (3-axis accel, 3-axis gyro, N/E/U
velocity) are min-max normalized and fed through standard LSTM recurrences
(sigmoid gates, tanh candidate/output) into a scalar dense head. Training is
mean-absolute-error loss under Adam with global-norm gradient clipping;
gradients come from full backpropagation through time.

Gate weight layout: rows of W, U, b are the four gate blocks in order
input (i), forget (f), candidate (g), output (o), each ``hidden`` rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DivergenceError, FormatError, ValidationError
from .geodesy import haversine_distance
from .simulator import FIELD_NAMES, Trip

FEATURE_NAMES = FIELD_NAMES[3:]  # accel_x..vel_u, 9 features
N_FEATURES = len(FEATURE_NAMES)
DEFAULT_HIDDEN = 50
DEFAULT_WINDOW = 10


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 12
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    gradient_clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValidationError("learning_rate and epsilon must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("betas must lie in [0, 1)")
        if self.gradient_clip_norm <= 0:
            raise ValidationError("gradient_clip_norm must be positive")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "gradient_clip_norm": self.gradient_clip_norm,
        }


@dataclass
class ShiftPredictor:
    """LSTM weights plus the normalization bounds they were trained with."""

    hidden_size: int
    input_size: int
    window: int
    W: np.ndarray  # (4H, D) input-to-gates
    U: np.ndarray  # (4H, H) hidden-to-gates
    b: np.ndarray  # (4H,)
    w_out: np.ndarray  # (H,)
    b_out: float
    feature_bounds: np.ndarray | None = None  # (2, D): row 0 min, row 1 max
    target_bounds: tuple[float, float] | None = None  # meters spanned by output 0..1
    train_config: TrainConfig | None = None

    def __post_init__(self):
        for name in ("W", "U", "b", "w_out"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValidationError(f"non-finite values in {name}")
        if self.feature_bounds is not None:
            check_feature_bounds(self.feature_bounds)

    @classmethod
    def new(
        cls,
        hidden_size: int = DEFAULT_HIDDEN,
        input_size: int = N_FEATURES,
        window: int = DEFAULT_WINDOW,
        seed: int = 0,
    ) -> "ShiftPredictor":
        """Seeded uniform init in +-1/sqrt(hidden); forget-gate bias +1."""
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(hidden_size)
        h = hidden_size
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        return cls(
            hidden_size=h,
            input_size=input_size,
            window=window,
            W=rng.uniform(-scale, scale, (4 * h, input_size)),
            U=rng.uniform(-scale, scale, (4 * h, h)),
            b=b,
            w_out=rng.uniform(-scale, scale, h),
            b_out=0.0,
        )

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("W", self.W),
            ("U", self.U),
            ("b", self.b),
            ("w_out", self.w_out),
            ("b_out", np.array([self.b_out])),
        ]


def check_feature_bounds(bounds: np.ndarray, names: Sequence[str] = FEATURE_NAMES) -> None:
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape[0] != 2:
        raise ValidationError(f"bounds must be (2, n_features), got {bounds.shape}")
    for j in range(bounds.shape[1]):
        if not bounds[0, j] < bounds[1, j]:
            name = names[j] if j < len(names) else f"feature {j}"
            raise ValidationError(f"feature {name} is constant (min == max); cannot normalize")


def normalize_features(raw: np.ndarray, bounds: np.ndarray, clamp: bool = True) -> np.ndarray:
    lo, hi = bounds[0], bounds[1]
    out = (np.asarray(raw, dtype=float) - lo) / (hi - lo)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


def denormalize_features(norm: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    lo, hi = bounds[0], bounds[1]
    return np.asarray(norm, dtype=float) * (hi - lo) + lo


@dataclass
class SupervisedSeries:
    """Normalized feature windows and their next-second shift targets.

    Targets are kept in meters; ``target_bounds`` carries the min-max range
    the training loop scales them with (the whole table is normalized to
    [0, 1], the shift column included).
    """

    inputs: np.ndarray  # (n, window, n_features) in [0, 1]
    targets: np.ndarray  # (n,) meters
    feature_bounds: np.ndarray
    window: int
    target_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValidationError("inputs and targets disagree on sample count")
        if self.inputs.size and (self.inputs.min() < -1e-12 or self.inputs.max() > 1 + 1e-12):
            raise ValidationError("normalized inputs escape [0, 1]")
        if self.target_bounds is None and self.targets.size:
            lo = float(self.targets.min())
            hi = float(self.targets.max())
            self.target_bounds = _widen_if_flat(lo, hi)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _widen_if_flat(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo <= 1e-12:
        return (lo - 0.5, lo + 0.5)
    return (lo, hi)


@dataclass
class DatasetSplit:
    train: SupervisedSeries
    validation: SupervisedSeries


def trip_feature_matrix(trip: Trip) -> np.ndarray:
    return np.array(
        [[getattr(rec, name) for name in FEATURE_NAMES] for rec in trip.records],
        dtype=float,
    )


def build_dataset(
    trip: Trip,
    window: int = DEFAULT_WINDOW,
    train_fraction: float = 0.7,
    on_constant: str = "raise",
) -> DatasetSplit:
    """Windowed supervised dataset with a chronological train/validation split.

    Targets are the great-circle shift between each window's last fix and the
    next one. Normalization bounds come from the training portion only.
    ``on_constant`` chooses what to do with a constant training feature:
    ``"raise"`` (the default) rejects it, ``"midpoint"`` widens its bounds by
    +-0.5 so the constant maps to 0.5.
    """
    if on_constant not in ("raise", "midpoint"):
        raise ValidationError(f"on_constant must be 'raise' or 'midpoint', got {on_constant!r}")
    n = len(trip.records)
    if n < window + 2:
        raise ValidationError(f"trip too short: {n} records for window {window}")
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction {train_fraction} outside (0, 1)")
    feats = trip_feature_matrix(trip)
    fixes = [rec.fix for rec in trip.records]
    shifts = np.array(
        [haversine_distance(fixes[j], fixes[j + 1]) for j in range(n - 1)]
    )
    count = n - window  # sample j uses records [j-window+1 .. j], target shift j->j+1
    n_train = int(round(train_fraction * count))
    if n_train < 1 or n_train >= count:
        raise ValidationError("split leaves an empty train or validation set")

    train_rows = feats[: window + n_train - 1]
    lo = train_rows.min(axis=0)
    hi = train_rows.max(axis=0)
    constant = hi - lo <= 0
    if constant.any():
        if on_constant == "raise":
            names = [FEATURE_NAMES[j] for j in np.nonzero(constant)[0]]
            raise ValidationError(
                f"feature {names[0]} is constant over the training data; cannot normalize"
            )
        lo = np.where(constant, lo - 0.5, lo)
        hi = np.where(constant, hi + 0.5, hi)
    bounds = np.vstack([lo, hi])

    norm = normalize_features(feats, bounds, clamp=True)
    windows = np.stack([norm[j : j + window] for j in range(count)])
    targets = shifts[window - 1 : window - 1 + count]
    target_bounds = _widen_if_flat(
        float(targets[:n_train].min()), float(targets[:n_train].max())
    )
    train = SupervisedSeries(
        windows[:n_train], targets[:n_train], bounds, window, target_bounds
    )
    val = SupervisedSeries(
        windows[n_train:], targets[n_train:], bounds, window, target_bounds
    )
    return DatasetSplit(train=train, validation=val)


# ---------------------------------------------------------------------------
# Forward / backward


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(model: ShiftPredictor, inputs: np.ndarray) -> np.ndarray | float:
    """Predicted shift for one (window, features) sample or a batch of them."""
    single = inputs.ndim == 2
    x = inputs[None] if single else inputs
    y, _ = _forward_cached(model, x)
    return float(y[0]) if single else y


def _forward_cached(model: ShiftPredictor, x: np.ndarray):
    B, T, D = x.shape
    if D != model.input_size:
        raise ValidationError(f"expected {model.input_size} features, got {D}")
    H = model.hidden_size
    zx = x.reshape(B * T, D) @ model.W.T
    zx = zx.reshape(B, T, 4 * H) + model.b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    gates = []
    for t in range(T):
        z = zx[:, t] + h @ model.U.T
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_prev = c
        c = f * c + i * g
        tanh_c = np.tanh(c)
        h_prev_cache = h
        h = o * tanh_c
        gates.append((i, f, g, o, c_prev, tanh_c, h_prev_cache))
    y = h @ model.w_out + model.b_out
    return y, (x, gates, h)


def loss_and_gradients(
    model: ShiftPredictor, inputs: np.ndarray, targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """MAE loss and its gradients w.r.t. every parameter (full BPTT)."""
    y, cache = _forward_cached(model, inputs)
    x, gates, h_last = cache
    B, T, D = x.shape
    H = model.hidden_size
    err = y - targets
    loss = float(np.mean(np.abs(err)))
    dy = np.sign(err) / B

    grads = {
        "w_out": h_last.T @ dy,
        "b_out": np.array([dy.sum()]),
        "b": np.zeros(4 * H),
    }
    dh = dy[:, None] * model.w_out[None, :]
    dc = np.zeros((B, H))
    dz_all = np.empty((B, T, 4 * H))
    h_prev_all = np.empty((B, T, H))
    for t in range(T - 1, -1, -1):
        i, f, g, o, c_prev, tanh_c, h_prev = gates[t]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c**2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc = dc * f
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g**2),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dz_all[:, t] = dz
        h_prev_all[:, t] = h_prev
        grads["b"] += dz.sum(axis=0)
        dh = dz @ model.U
    flat_dz = dz_all.reshape(B * T, 4 * H)
    grads["W"] = flat_dz.T @ x.reshape(B * T, D)
    grads["U"] = flat_dz.T @ h_prev_all.reshape(B * T, H)
    return loss, grads


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    with np.errstate(over="ignore"):
        total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if math.isfinite(total) and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class TrainHistory:
    """Per-epoch MAE in normalized target units (what the loss optimizes)."""

    train_mae: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)

    def smoothed_train(self, span: int = 5) -> list[float]:
        """Trailing-window moving average of the training curve."""
        out = []
        for i in range(len(self.train_mae)):
            lo = max(0, i - span + 1)
            out.append(float(np.mean(self.train_mae[lo : i + 1])))
        return out


def predict_meters(model: ShiftPredictor, inputs: np.ndarray) -> np.ndarray | float:
    """Forward pass denormalized to meters (output clamped to [0, 1] first)."""
    if model.target_bounds is None:
        raise ValidationError("model has no target bounds; train or load it first")
    lo, hi = model.target_bounds
    y = np.clip(forward(model, inputs), 0.0, 1.0)
    out = y * (hi - lo) + lo
    return float(out) if np.isscalar(out) or out.ndim == 0 else out


def mae(model: ShiftPredictor, series: SupervisedSeries, batch: int = 512) -> float:
    """Mean absolute prediction error in meters."""
    total = 0.0
    n = len(series)
    for start in range(0, n, batch):
        y = predict_meters(model, series.inputs[start : start + batch])
        total += float(np.sum(np.abs(y - series.targets[start : start + batch])))
    return total / n


def train(
    model: ShiftPredictor,
    series: SupervisedSeries,
    config: TrainConfig,
    validation: SupervisedSeries | None = None,
) -> TrainHistory:
    """Train in place; returns the per-epoch MAE history.

    Raises DivergenceError if the loss goes non-finite.
    """
    if len(series) == 0:
        raise ValidationError("empty training series")
    if series.window != model.window:
        raise ValidationError(
            f"series window {series.window} != model window {model.window}"
        )
    model.feature_bounds = series.feature_bounds
    model.target_bounds = series.target_bounds
    model.train_config = config
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()

    t_lo, t_hi = series.target_bounds
    t_span = t_hi - t_lo
    y_norm = (series.targets - t_lo) / t_span
    val_norm = None
    if validation is not None and len(validation):
        val_norm = (validation.targets - t_lo) / t_span

    m_state = {k: np.zeros_like(v) for k, v in model.param_items()}
    v_state = {k: np.zeros_like(v) for k, v in model.param_items()}
    step = 0
    n = len(series)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_abs_err = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = loss_and_gradients(model, series.inputs[idx], y_norm[idx])
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"loss diverged at epoch {epoch + 1}, step {step}: {loss}"
                )
            epoch_abs_err += loss * len(idx)
            grad_norm = _clip_gradients(grads, config.gradient_clip_norm)
            if not math.isfinite(grad_norm):
                raise DivergenceError(
                    f"gradient norm diverged at epoch {epoch + 1}, step {step}"
                )
            step += 1
            bc1 = 1.0 - config.beta1**step
            bc2 = 1.0 - config.beta2**step
            for name, param in model.param_items():
                g = grads[name]
                m_state[name] = config.beta1 * m_state[name] + (1 - config.beta1) * g
                v_state[name] = config.beta2 * v_state[name] + (1 - config.beta2) * g * g
                update = (
                    config.learning_rate
                    * (m_state[name] / bc1)
                    / (np.sqrt(v_state[name] / bc2) + config.epsilon)
                )
                if name == "b_out":
                    model.b_out = float(model.b_out - update[0])
                else:
                    param -= update
        history.train_mae.append(epoch_abs_err / n)
        if val_norm is not None:
            val_err = 0.0
            for start in range(0, len(val_norm), 512):
                y = forward(model, validation.inputs[start : start + 512])
                val_err += float(np.sum(np.abs(y - val_norm[start : start + 512])))
            history.val_mae.append(val_err / len(val_norm))
    return history


def predict_shift(model: ShiftPredictor, store, t: int) -> float | None:
    """Predicted shift in meters between t-1 and t, or None during warm-up.

    Uses the window of records ending at t-1; features outside the training
    range are clamped to [0, 1].
    """
    if model.feature_bounds is None:
        raise ValidationError("model has no feature bounds; train or load it first")
    rows = []
    for ti in range(t - model.window, t):
        rec = store.record_at(ti)
        if rec is None:
            return None
        rows.append([getattr(rec, name) for name in FEATURE_NAMES])
    x = normalize_features(np.array(rows, dtype=float), model.feature_bounds)
    return float(predict_meters(model, x))


# ---------------------------------------------------------------------------
# Serialization

_MAGIC = "spoofbench-lstm v1"


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _fmt_row(row) -> str:
    return " ".join(_fmt(v) for v in np.asarray(row, dtype=float).ravel())


def save_lstm(model: ShiftPredictor, path) -> None:
    if model.feature_bounds is None or model.target_bounds is None:
        raise ValidationError("refusing to save a model without feature/target bounds")
    lines = [
        _MAGIC,
        f"hidden {model.hidden_size}",
        f"input {model.input_size}",
        f"window {model.window}",
        f"targets {_fmt(model.target_bounds[0])} {_fmt(model.target_bounds[1])}",
    ]
    cfg = model.train_config or TrainConfig()
    lines.append(
        "config " + " ".join(f"{k}={_fmt(v) if isinstance(v, float) else v}" for k, v in cfg.to_dict().items())
    )
    names = FEATURE_NAMES if model.input_size == N_FEATURES else [
        f"f{j}" for j in range(model.input_size)
    ]
    for j in range(model.input_size):
        lines.append(
            f"bound {names[j]} {_fmt(model.feature_bounds[0, j])} {_fmt(model.feature_bounds[1, j])}"
        )
    lines.append("W")
    lines.extend(_fmt_row(r) for r in model.W)
    lines.append("U")
    lines.extend(_fmt_row(r) for r in model.U)
    lines.append("b")
    lines.append(_fmt_row(model.b))
    lines.append("w_out")
    lines.append(_fmt_row(model.w_out))
    lines.append("b_out")
    lines.append(_fmt(model.b_out))
    lines.append("end")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_lstm(path) -> ShiftPredictor:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    it = iter(enumerate(lines, start=1))

    def next_line():
        try:
            return next(it)
        except StopIteration:
            raise FormatError("model file truncated") from None

    lineno, magic = next_line()
    if magic != _MAGIC:
        raise FormatError(f"line {lineno}: not a {_MAGIC} file")
    dims = {}
    for key in ("hidden", "input", "window"):
        lineno, line = next_line()
        parts = line.split()
        if len(parts) != 2 or parts[0] != key:
            raise FormatError(f"line {lineno}: expected '{key} <value>'")
        dims[key] = int(parts[1])
    lineno, line = next_line()
    parts = line.split()
    if len(parts) != 3 or parts[0] != "targets":
        raise FormatError(f"line {lineno}: expected 'targets <min> <max>'")
    target_bounds = (float(parts[1]), float(parts[2]))
    lineno, line = next_line()
    if not line.startswith("config "):
        raise FormatError(f"line {lineno}: expected config line")
    kv = dict(item.split("=", 1) for item in line.split()[1:])
    try:
        config = TrainConfig(
            epochs=int(kv["epochs"]),
            batch_size=int(kv["batch_size"]),
            learning_rate=float(kv["learning_rate"]),
            beta1=float(kv["beta1"]),
            beta2=float(kv["beta2"]),
            epsilon=float(kv["epsilon"]),
            seed=int(kv["seed"]),
            gradient_clip_norm=float(kv["gradient_clip_norm"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"line {lineno}: bad config: {exc}") from exc
    H, D, window = dims["hidden"], dims["input"], dims["window"]
    bounds = np.zeros((2, D))
    for j in range(D):
        lineno, line = next_line()
        parts = line.split()
        if len(parts) != 4 or parts[0] != "bound":
            raise FormatError(f"line {lineno}: expected bound line")
        bounds[0, j] = float(parts[2])
        bounds[1, j] = float(parts[3])

    def read_matrix(tag: str, rows: int, cols: int) -> np.ndarray:
        lineno, line = next_line()
        if line != tag:
            raise FormatError(f"line {lineno}: expected '{tag}'")
        out = np.zeros((rows, cols))
        for r in range(rows):
            lineno, line = next_line()
            vals = line.split()
            if len(vals) != cols:
                raise FormatError(f"line {lineno}: expected {cols} values, got {len(vals)}")
            out[r] = [float(v) for v in vals]
        return out

    W = read_matrix("W", 4 * H, D)
    U = read_matrix("U", 4 * H, H)
    b = read_matrix("b", 1, 4 * H)[0]
    w_out = read_matrix("w_out", 1, H)[0]
    lineno, line = next_line()
    if line != "b_out":
        raise FormatError(f"line {lineno}: expected 'b_out'")
    lineno, line = next_line()
    b_out = float(line)
    lineno, line = next_line()
    if line != "end":
        raise FormatError(f"line {lineno}: expected 'end'")
    return ShiftPredictor(
        hidden_size=H,
        input_size=D,
        window=window,
        W=W,
        U=U,
        b=b,
        w_out=w_out,
        b_out=b_out,
        feature_bounds=bounds,
        target_bounds=target_bounds,
        train_config=config,
    )
